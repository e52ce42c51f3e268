#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "progspace/error.hpp"
#include "progspace/evaluator.hpp"
#include "progspace/harness.hpp"
#include "progspace/sampler.hpp"

namespace progspace {

/// Declarative description of one build. Every stage key is derived from the part of the
/// configuration the stage reads plus the keys of the stages it consumes.
struct PipelineConfig {
  int max_ops = 6;
  EvalDomain domain;
  std::size_t signature_points = 64;
  std::size_t screen_points = 4096;
  bool early_reject = true;

  std::size_t semantic_grid = 256;
  std::size_t embedding_dim = 32;
  std::size_t semantic_fit_rows = 1'000'000;
  int pq_p = 2;
  int pq_q = 3;
  std::uint32_t hash_dim = 65536;
  std::size_t syntactic_fit_rows = 1'000'000;

  std::size_t knn_k = 5;
  std::size_t knn_exact_limit = 200'000;

  std::size_t audit_classes = 10'000;
  std::size_t audit_grid = 1024;
  double audit_threshold = 0.001;
  std::size_t max_signature_points = 1024;

  double pool_fraction = 0.8;
  double inside_fraction = 0.8;
  SplitSizes density_sizes;
  SplitSizes support_sizes;

  bool gzip = false;

  std::vector<std::uint64_t> ks{1, 5, 10};
  std::size_t max_candidate_chars = 256;
  double relative_tolerance = 0.0;
  /// Directory holding <split>/<run>.jsonl candidate files. Relative paths resolve against the
  /// output root.
  std::string candidates_dir = "candidates";
  std::vector<std::string> evaluate_splits;  // empty: every split

  std::uint64_t seed = 0;
  std::filesystem::path output = "progspace-out";
  unsigned threads = 0;
  /// Stages run by "all". evaluate and analyze need trainer output and are off by default.
  std::vector<std::string> all_stages{"enumerate", "embed", "split", "export"};

  /// Component seed derived from the master seed.
  std::uint64_t seed_for(std::string_view component) const;
  /// Throws ErrorKind::invalid_argument naming the offending field.
  void validate() const;
};

/// Reads a JSON configuration. Unknown keys are rejected. PROGSPACE_OUTPUT and PROGSPACE_THREADS
/// override the output root and thread count.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig config_from_json_text(std::string_view text);
std::string config_to_json_text(const PipelineConfig& c);
void apply_environment(PipelineConfig& c);

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"enumerate", "embed", "split", "export", "evaluate", "analyze"};
  return names;
}

struct StageResult {
  std::string stage;
  std::string stage_key;
  bool skipped = false;  // up to date, nothing written
  std::string summary;   // one-line JSON
};

/// Runs one stage (or "all"). Progress goes to `log`; results are returned in run order.
/// Throws Error; see exit_code_for.
std::vector<StageResult> run_stage(const PipelineConfig& config, std::string_view stage,
                                   const std::function<void(const std::string&)>& log = {});

struct VerifyReport {
  std::size_t files = 0;
  std::vector<std::string> mismatches;
  bool ok() const { return mismatches.empty(); }
};

/// Re-hashes every artifact reachable from the root manifest.
VerifyReport verify_outputs(const std::filesystem::path& output);

/// Process exit status for a library error: 2 configuration, 3 stale upstream, 4 capacity,
/// 5 I/O, 6 missing candidates, 7 verification mismatch, 1 anything else.
int exit_code_for(ErrorKind kind);

/// Paths of stage outputs under an output root.
struct Layout {
  std::filesystem::path root;
  std::filesystem::path stage_dir(std::string_view stage) const { return root / stage; }
  std::filesystem::path stage_manifest(std::string_view stage) const { return stage_dir(stage) / "manifest.json"; }
  std::filesystem::path universe_table() const { return stage_dir("enumerate") / "universe.pmun"; }
  std::filesystem::path universe_index() const { return stage_dir("enumerate") / "universe.pmix"; }
  std::filesystem::path classes() const { return stage_dir("enumerate") / "classes.pmcl"; }
  std::filesystem::path embeddings(Manifold m) const { return stage_dir("embed") / (std::string(to_string(m)) + ".pmem"); }
  std::filesystem::path densities(Manifold m) const { return stage_dir("embed") / (std::string("dk_") + to_string(m) + ".pmem"); }
  std::filesystem::path splits() const { return stage_dir("split"); }
  std::filesystem::path dataset(std::string_view split) const { return stage_dir("export") / split; }
  std::filesystem::path reports() const { return stage_dir("evaluate"); }
  std::filesystem::path analysis() const { return stage_dir("analyze"); }
};

/// Universe plus build metadata restored from the enumerate stage manifest.
Universe load_built_universe(const std::filesystem::path& output);

}  // namespace progspace
