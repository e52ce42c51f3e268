#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "progspace/evaluator.hpp"
#include "progspace/sampler.hpp"
#include "progspace/universe.hpp"

namespace progspace {

/// Programming-by-example task: a ground-truth program and its specification pairs.
struct TaskInstance {
  std::string task_id;
  ProgramId program_id = 0;
  std::string source;
  std::vector<AcceptedPair> spec;

  friend bool operator==(const TaskInstance& a, const TaskInstance& b);
};

/// "<split>:<role>:<program id>"
std::string make_task_id(std::string_view split, std::string_view role, ProgramId id);
/// Program id encoded in a task id. Throws ErrorKind::malformed on other shapes.
ProgramId task_program_id(std::string_view task_id);

/// First dom.pairs accepted draws of the program's validity stream.
TaskInstance sample_spec(const Ast& ast, const EvalDomain& dom, std::uint64_t seed);

/// Shortest decimal text that reads back as the same binary32 value.
std::string format_float(float v);
/// Strict decimal parse to binary32 (round to nearest). Throws ErrorKind::malformed.
float parse_float(std::string_view text);

/// One JSON-lines record: {"task_id":..,"source":..,"spec":[[x,y],..]}.
std::string task_to_json_line(const TaskInstance& task);
/// Parses one record. Numbers are converted straight from their decimal text to binary32.
TaskInstance task_from_json_line(std::string_view line);

struct ExportOptions {
  EvalDomain domain;
  std::uint64_t validity_seed = 0;
  bool gzip = false;
  std::size_t chunk_tasks = 2048;
};

struct DatasetFile {
  std::string role;  // train | test
  std::string file;  // relative to the manifest directory
  std::uint64_t count = 0;
  std::string sha256;
  bool gzip = false;
};

struct DatasetManifest {
  std::string split;
  std::string universe_hash;
  std::uint64_t validity_seed = 0;
  std::uint64_t split_seed = 0;
  std::uint64_t pool_seed = 0;
  EvalDomain domain;
  std::vector<DatasetFile> files;

  const DatasetFile& file(std::string_view role) const;
};

/// Writes train and test task files plus manifest.json into `dir`. Returns the manifest.
DatasetManifest export_dataset(const SplitSpec& split, const Universe& u, const std::filesystem::path& dir, const ExportOptions& opts);

DatasetManifest load_dataset_manifest(const std::filesystem::path& dir);
void save_dataset_manifest(const DatasetManifest& m, const std::filesystem::path& dir);

/// Reads one role of an exported dataset after checking its hash against the manifest.
/// Throws ErrorKind::hash_mismatch or ErrorKind::malformed (naming the line).
std::vector<TaskInstance> import_dataset(const std::filesystem::path& dir, std::string_view role);

/// Reads a task file without manifest checks. Plain or gzip input.
std::vector<TaskInstance> read_task_file(const std::filesystem::path& path);

/// Reads a text file line by line; gzip input is decompressed transparently.
void for_each_line(const std::filesystem::path& path, const std::function<void(std::string_view line, std::size_t number)>& fn);

}  // namespace progspace
