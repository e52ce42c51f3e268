#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "progspace/evaluator.hpp"
#include "progspace/grammar.hpp"
#include "progspace/universe.hpp"

namespace progspace {

enum class Manifold : std::uint8_t { semantic = 0, syntactic = 1 };

const char* to_string(Manifold m);

/// Row-major |U| x dim float32 matrix aligned with universe ids.
struct EmbeddingMatrix {
  Manifold manifold = Manifold::semantic;
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<float> data;
  /// Rows that could not be embedded (zero syntactic projection); stored as zero vectors.
  std::vector<ProgramId> flagged;

  EmbeddingMatrix() = default;
  EmbeddingMatrix(Manifold m, std::size_t n, std::size_t d) : manifold(m), rows(n), dim(d), data(n * d, 0.0f) {}

  std::span<const float> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  std::span<float> row(std::size_t i) { return {data.data() + i * dim, dim}; }
};

void save_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path);
EmbeddingMatrix load_embeddings(const std::filesystem::path& path);

/// Euclidean distance. Throws ErrorKind::invalid_argument on length mismatch.
float distance(std::span<const float> a, std::span<const float> b);

// --------------------------------------------------------------------------------------------
// Semantic manifold

/// Population z-score; a constant vector maps to all zeros.
std::vector<float> zscore(std::span<const float> y);

/// Grid outputs z-scored over their finite subset, non-finite points imputed as 0, followed by
/// the fraction of finite points as one extra feature.
std::vector<float> semantic_features(const Ast& ast, std::span<const float> grid, BatchEvaluator& evaluator);

struct SemanticFitOptions {
  std::size_t grid_points = 256;
  std::size_t dim = 32;
  std::size_t fit_rows = 1'000'000;
  std::uint64_t seed = 0;
  std::function<void(const std::string&)> warn;
};

struct SemanticModel {
  std::vector<float> grid;
  std::size_t dim = 0;
  std::vector<double> mean;                 // per feature
  std::vector<float> components;            // dim x features, row-major, orthonormal rows
  std::vector<double> explained_variance;   // non-increasing
  std::uint64_t seed = 0;
  std::uint64_t fit_rows = 0;
  bool degenerate = false;

  std::size_t features() const { return mean.size(); }
  std::span<const float> component(std::size_t j) const { return {components.data() + j * features(), features()}; }
};

SemanticModel fit_semantic(const Universe& u, const SemanticFitOptions& opts);
/// Principal-component fit on explicit feature rows (row-major, rows x features).
SemanticModel fit_pca(std::span<const float> rows, std::size_t features, std::size_t dim, const std::function<void(const std::string&)>& warn = {});
std::vector<float> project_semantic(std::span<const float> features, const SemanticModel& m);
std::vector<float> semantic_embed(const Ast& ast, const SemanticModel& m);
EmbeddingMatrix embed_semantic(const Universe& u, const SemanticModel& m);
/// Embeds each class representative once and shares the row with every member.
EmbeddingMatrix embed_semantic(const Universe& u, const SemanticModel& m, const EquivalenceClassing& classes);

void save_semantic_model(const SemanticModel& m, const std::filesystem::path& path);
SemanticModel load_semantic_model(const std::filesystem::path& path);

// --------------------------------------------------------------------------------------------
// Syntactic manifold

/// Label alphabet of PQ-grams: 0 is the dummy node '*', 1 + Op code otherwise.
using PqLabel = std::uint8_t;
inline constexpr PqLabel pq_dummy = 0;
inline PqLabel pq_label(Op op) { return static_cast<PqLabel>(1 + static_cast<int>(op)); }

/// Stem of p ancestors (ending in the anchor node) followed by a window of q children.
using PqGram = std::vector<PqLabel>;

/// PQ-gram multiset of the tree, sorted. The tree is extended with p-1 dummy ancestors above the
/// root, q-1 dummies on either side of each child list, and q dummy children under each leaf.
std::vector<PqGram> pq_grams(const Ast& ast, int p = 2, int q = 3);
std::string to_string(const PqGram& gram, int p);

struct SparseVector {
  std::vector<std::uint32_t> index;  // ascending
  std::vector<float> value;

  double norm() const;
};

/// Signed feature hashing: one hash picks the bucket, an independent one the sign.
SparseVector hash_profile(std::span<const PqGram> grams, std::uint32_t hash_dim, std::uint64_t seed);

struct SyntacticFitOptions {
  int p = 2;
  int q = 3;
  std::uint32_t hash_dim = 65536;
  std::uint64_t hash_seed = 0;
  std::size_t dim = 32;
  std::size_t fit_rows = 1'000'000;
  std::uint64_t seed = 0;
  std::size_t oversample = 10;
  std::size_t power_iterations = 4;
  std::function<void(const std::string&)> warn;
};

struct SyntacticModel {
  int p = 2;
  int q = 3;
  std::uint32_t hash_dim = 0;
  std::uint64_t hash_seed = 0;
  std::size_t dim = 0;
  std::vector<float> factors;  // dim x hash_dim, row-major: top right singular vectors
  std::vector<double> singular_values;
  std::uint64_t seed = 0;
  std::uint64_t fit_rows = 0;
  bool degenerate = false;

  std::span<const float> factor(std::size_t j) const { return {factors.data() + j * hash_dim, hash_dim}; }
};

/// Randomised truncated SVD of the sparse profile matrix of a seeded row sample.
SyntacticModel fit_syntactic(const Universe& u, const SyntacticFitOptions& opts);
/// Same fit on explicit sparse rows.
SyntacticModel fit_truncated_svd(std::span<const SparseVector> rows, std::uint32_t hash_dim, const SyntacticFitOptions& opts);

SparseVector syntactic_profile(const Ast& ast, const SyntacticModel& m);
/// Projection onto the factors before normalisation.
std::vector<float> project_syntactic(const SparseVector& profile, const SyntacticModel& m);

struct SyntacticEmbedding {
  std::vector<float> vector;
  bool flagged = false;  // projection was zero; vector is all zeros
};

SyntacticEmbedding syntactic_embed(const Ast& ast, const SyntacticModel& m);
EmbeddingMatrix embed_syntactic(const Universe& u, const SyntacticModel& m);

void save_syntactic_model(const SyntacticModel& m, const std::filesystem::path& path);
SyntacticModel load_syntactic_model(const std::filesystem::path& path);

/// Seeded uniform subset of [0, n) of size min(n, k), ascending.
std::vector<ProgramId> sample_rows(std::size_t n, std::size_t k, std::uint64_t seed);

}  // namespace progspace
