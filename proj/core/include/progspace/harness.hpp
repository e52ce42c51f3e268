#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "progspace/datasets.hpp"
#include "progspace/manifolds.hpp"

namespace progspace {

struct MatchOptions {
  /// Candidates longer than this are rejected before parsing.
  std::size_t max_chars = 256;
  /// 0 means bit-exact binary32 comparison (with +0 == -0). Otherwise |a-b| <= tol * max(|a|,|b|).
  double relative_tolerance = 0.0;
};

enum class MatchStatus : std::uint8_t { match, too_long, parse_error, invalid_output, mismatch };
const char* to_string(MatchStatus s);

struct MatchOutcome {
  MatchStatus status = MatchStatus::mismatch;
  std::size_t failed_at = 0;  // first spec index that disagreed
  bool matched() const { return status == MatchStatus::match; }
};

/// Does the candidate reproduce every spec pair of the task?
MatchOutcome functional_match(std::string_view candidate, const TaskInstance& task, const MatchOptions& opts = {});

/// Unbiased pass@k estimate 1 - C(n-c, k) / C(n, k) in product form.
double pass_at_k(std::uint64_t n, std::uint64_t c, std::uint64_t k);

/// Candidates produced for one task.
struct CandidateSet {
  std::string task_id;
  std::vector<std::string> candidates;
  double temperature = 0.0;
  std::uint64_t seed = 0;
  double flops = 0.0;
  std::string model;
};

/// JSON-lines reader/writer for {task_id, candidates:[..], temperature, seed, flops}.
std::vector<CandidateSet> read_candidates(const std::filesystem::path& path);
void write_candidates(std::span<const CandidateSet> sets, const std::filesystem::path& path);

struct TaskScore {
  std::string task_id;
  std::uint64_t n = 0;
  std::uint64_t c = 0;
  std::vector<double> pass;  // aligned with RunReport::ks
};

struct RunReport {
  std::vector<std::uint64_t> ks;
  std::vector<TaskScore> tasks;
  std::vector<double> mean_pass;  // per k, averaged over tasks
  double flops = 0.0;

  std::optional<std::size_t> k_index(std::uint64_t k) const;
  double mean_at(std::uint64_t k) const;
};

/// Scores one run. Throws ErrorKind::missing_coverage if a task has no candidate set or fewer
/// candidates than the largest k.
RunReport evaluate_run(std::span<const TaskInstance> tasks, std::span<const CandidateSet> candidates, std::span<const std::uint64_t> ks,
                       const MatchOptions& opts = {});

struct Aggregate {
  std::uint64_t k = 0;
  double mean = 0.0;
  double std = 0.0;  // population, across runs
  std::size_t runs = 0;
};
std::vector<Aggregate> aggregate_runs(std::span<const RunReport> runs);

struct NearestTrainRow {
  std::string task_id;
  ProgramId program_id = 0;
  float d_sem = 0.0f;
  float d_syn = 0.0f;
  bool solved = false;
};

struct NearestTrainSummary {
  std::vector<NearestTrainRow> rows;
  double mean_sem_all = 0.0, mean_sem_solved = 0.0, mean_sem_failed = 0.0;
  double mean_syn_all = 0.0, mean_syn_solved = 0.0, mean_syn_failed = 0.0;
  std::size_t solved = 0, failed = 0;
};

/// Distance from each test program to its nearest train program in both manifolds.
NearestTrainSummary nn_distance_report(std::span<const ProgramId> test, std::span<const std::string> task_ids,
                                       std::span<const ProgramId> train, const EmbeddingMatrix& sem, const EmbeddingMatrix& syn,
                                       const std::vector<bool>& solved);

struct ScalingPoint {
  std::string split;
  double flops = 0.0;
  double mean = 0.0;
  double std = 0.0;
};

struct ScalingFit {
  std::string split;
  double slope = 0.0;  // pass@1 per decade of FLOPs
  double intercept = 0.0;
  std::size_t points = 0;
};

/// Least-squares line of pass@1 against log10(FLOPs) per split. Throws
/// ErrorKind::invalid_argument when a split has fewer than two distinct FLOPs values.
std::vector<ScalingFit> scaling_report(std::span<const ScalingPoint> points);

// CSV outputs with fixed headers.
void write_task_scores_csv(const RunReport& run, const std::filesystem::path& path);
void write_aggregate_csv(std::span<const Aggregate> rows, std::string_view split, const std::filesystem::path& path);
void write_nearest_train_csv(const NearestTrainSummary& s, const std::filesystem::path& path);
void write_scaling_csv(std::span<const ScalingPoint> points, std::span<const ScalingFit> fits, const std::filesystem::path& path);

}  // namespace progspace
