#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "progspace/manifolds.hpp"
#include "progspace/universe.hpp"

namespace progspace {

// --------------------------------------------------------------------------------------------
// Density estimation

struct KnnOptions {
  std::size_t k = 5;
  /// Up to this many rows the computation is exact brute force.
  std::size_t exact_limit = 200'000;
  /// Inverted-file index parameters for larger inputs. nlist = 0 picks about sqrt(n).
  std::size_t nlist = 0;
  std::size_t nprobe = 8;
  std::size_t kmeans_iterations = 8;
  std::size_t kmeans_sample = 100'000;
  /// Approximate results are accepted only if the mean d_k over this many exactly recomputed
  /// rows differs by less than `audit_tolerance` (relative). Otherwise nprobe is doubled.
  std::size_t audit_rows = 10'000;
  double audit_tolerance = 0.02;
  std::uint64_t seed = 0;
};

struct KnnResult {
  std::vector<float> mean_distance;  // d_k per row
  bool exact = true;
  std::size_t nprobe = 0;
  double audit_error = 0.0;
};

/// Mean Euclidean distance from every row to its k nearest other rows.
/// Throws ErrorKind::invalid_argument with fewer than k + 1 rows.
KnnResult knn_mean_distance(const EmbeddingMatrix& rows, const KnnOptions& opts = {});
/// Exact d_k for a subset of query rows against all rows.
std::vector<float> knn_mean_distance_exact(const EmbeddingMatrix& rows, std::span<const ProgramId> queries, std::size_t k);

// --------------------------------------------------------------------------------------------
// Sampling primitives. All return ascending ids.

/// m distinct ids, uniform without replacement.
std::vector<ProgramId> uniform_sample(std::span<const ProgramId> ids, std::size_t m, std::uint64_t seed);

/// m distinct ids drawn without replacement with probability proportional to weight
/// (exponential keys). Zero-weight ids are taken, uniformly, only once positive weights run out.
std::vector<ProgramId> inverse_density_sample(std::span<const ProgramId> ids, std::span<const float> weights, std::size_t m,
                                              std::uint64_t seed);

/// Repeatedly picks a class uniformly, then an untaken member of it uniformly. Only members for
/// which `allowed` is true (or all, if empty) take part.
std::vector<ProgramId> diverse_sample(const EquivalenceClassing& classes, std::size_t m, std::uint64_t seed,
                                      const std::vector<bool>& allowed = {});

// --------------------------------------------------------------------------------------------
// Support partition

struct SupportPartition {
  Manifold manifold = Manifold::semantic;
  std::vector<float> centroid;  // coordinate-wise median
  float radius = 0.0f;
  std::vector<ProgramId> inside;   // S_in
  std::vector<ProgramId> outside;  // S_out
  std::vector<float> distance;     // d(p, centroid) for every row
  std::vector<ProgramId> excluded; // flagged rows, in neither region

  /// Members of S_out strictly beyond the radius.
  std::vector<ProgramId> beyond_radius() const;
};

/// Coordinate-wise median centroid. r is the smallest distance with at least the requested
/// fraction of rows at or below it; S_in holds the first ceil(fraction * n) rows in
/// (distance, id) order so its size is exact even under ties.
SupportPartition geometric_partition(const EmbeddingMatrix& rows, double inside_fraction = 0.8);

std::vector<float> coordinate_median(const EmbeddingMatrix& rows, std::span<const ProgramId> ids);

// --------------------------------------------------------------------------------------------
// Splits

struct SplitSizes {
  std::size_t train = 1'000'000;
  std::size_t test = 1'000;
};

struct SplitSpec {
  std::string name;
  std::string strategy;  // diverse | inverse_density | uniform_region
  std::string manifold;  // sem | syn | empty
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::uint64_t seed = 0;
  std::uint64_t pool_seed = 0;
  std::size_t k = 0;
  double inside_fraction = 0.0;
  std::optional<float> radius;
  std::string universe_hash;
  std::vector<ProgramId> train;
  std::vector<ProgramId> test;
};

inline const std::vector<std::string>& density_split_names() {
  static const std::vector<std::string> names{"diverse", "semantic", "syntactic"};
  return names;
}
inline const std::vector<std::string>& support_split_names() {
  static const std::vector<std::string> names{"sem-interp", "sem-extrap", "syn-interp", "syn-extrap"};
  return names;
}

/// Global seeded 80/20 assignment of ids: first the train pool, then the test pool.
struct Pool {
  std::uint64_t seed = 0;
  std::vector<ProgramId> train;
  std::vector<ProgramId> test;
};
Pool global_pool(std::size_t universe_size, std::uint64_t seed, double train_fraction = 0.8);

struct DensitySplitInputs {
  const EquivalenceClassing* classes = nullptr;
  std::span<const float> dk_semantic;
  std::span<const float> dk_syntactic;
};

/// Diverse, Semantic and Syntactic splits. Train sets come from the train pool and test sets from
/// the test pool. Throws ErrorKind::capacity if a pool is too small.
std::vector<SplitSpec> build_density_splits(const DensitySplitInputs& in, const Pool& pool, const SplitSizes& sizes,
                                            std::uint64_t seed, std::size_t k);

/// Interpolation and extrapolation splits for one manifold; both share the train set.
std::vector<SplitSpec> build_support_splits(const SupportPartition& partition, const SplitSizes& sizes, std::uint64_t seed,
                                            double inside_fraction);

/// Writes `<dir>/<name>.json` plus `<name>.train.ids` and `<name>.test.ids` ("PMID" lists).
void save_split(const SplitSpec& split, const std::filesystem::path& dir);
SplitSpec load_split(const std::filesystem::path& dir, const std::string& name);

void save_ids(std::span<const ProgramId> ids, const std::filesystem::path& path);
std::vector<ProgramId> load_ids(const std::filesystem::path& path);

}  // namespace progspace
