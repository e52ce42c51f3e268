#include "progspace/manifolds.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "progspace/binary_io.hpp"
#include "progspace/error.hpp"
#include "progspace/parallel.hpp"
#include "progspace/random.hpp"

namespace progspace {

namespace {
constexpr std::uint32_t embedding_version = 1;
constexpr std::uint32_t model_version = 1;
// Fixed reduction fan-in: partial sums are formed over this many contiguous row blocks and
// added in block order, so fits are bit-identical for any thread count.
constexpr std::size_t reduction_blocks = 4;
}  // namespace

const char* to_string(Manifold m) { return m == Manifold::semantic ? "sem" : "syn"; }

float distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::invalid_argument, "distance between vectors of length " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return static_cast<float>(std::sqrt(sum));
}

std::vector<ProgramId> sample_rows(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<ProgramId> ids(n);
  std::iota(ids.begin(), ids.end(), ProgramId{0});
  if (k >= n) return ids;
  auto engine = seeded_engine(seed, 0x5a3b1e);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_index(engine, n - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

// ---------------------------------------------------------------------------------------------
// Embedding files

void save_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  ByteWriter w;
  w.magic("PMEM");
  w.u32(embedding_version);
  w.u8(static_cast<std::uint8_t>(m.manifold));
  w.u64(m.rows);
  w.u32(static_cast<std::uint32_t>(m.dim));
  w.f32_array(m.data);
  w.write_to(path);
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  auto r = ByteReader::from_file(path);
  r.expect_magic("PMEM");
  if (r.u32() != embedding_version) throw Error(ErrorKind::malformed, "unsupported embedding version in " + path.string());
  const auto tag = r.u8();
  if (tag > 1) throw Error(ErrorKind::malformed, "unknown manifold tag in " + path.string());
  const std::uint64_t rows = r.u64();
  const std::uint32_t dim = r.u32();
  EmbeddingMatrix m(static_cast<Manifold>(tag), rows, dim);
  r.f32_array(m.data);
  if (m.manifold == Manifold::syntactic) {
    for (std::size_t i = 0; i < rows; ++i) {
      const auto row = m.row(i);
      if (std::all_of(row.begin(), row.end(), [](float v) { return v == 0.0f; })) m.flagged.push_back(i);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------------------------
// Semantic manifold

std::vector<float> zscore(std::span<const float> y) {
  std::vector<float> out(y.size(), 0.0f);
  if (y.empty()) return out;
  double sum = 0.0;
  for (float v : y) sum += v;
  const double mean = sum / static_cast<double>(y.size());
  double ss = 0.0;
  for (float v : y) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(y.size()));
  if (!(sd > 0.0) || !std::isfinite(sd)) return out;
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = static_cast<float>((y[i] - mean) / sd);
  return out;
}

namespace {

void semantic_features_into(std::span<const Op> prefix, std::span<const float> grid, BatchEvaluator& evaluator,
                            std::vector<float>& y, std::vector<float>& finite, std::span<float> out) {
  y.resize(grid.size());
  evaluator.evaluate(prefix, grid, y);
  finite.clear();
  for (float v : y) {
    if (std::isfinite(v)) finite.push_back(v);
  }
  const auto z = zscore(finite);
  std::size_t k = 0;
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = std::isfinite(y[i]) ? z[k++] : 0.0f;
  out[grid.size()] = static_cast<float>(static_cast<double>(finite.size()) / static_cast<double>(grid.size()));
}

void sign_normalise(Eigen::Ref<Eigen::VectorXd> v) {
  Eigen::Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  if (v(arg) < 0) v = -v;
}

SemanticModel finish_pca(const Eigen::VectorXd& sum, const Eigen::MatrixXd& cross, std::uint64_t n, std::size_t dim,
                         const std::function<void(const std::string&)>& warn) {
  const auto features = static_cast<std::size_t>(sum.size());
  if (dim > features) throw Error(ErrorKind::invalid_argument, "PCA dimension exceeds feature count");
  if (n == 0) throw Error(ErrorKind::invalid_argument, "PCA needs at least one row");
  const Eigen::VectorXd mean = sum / static_cast<double>(n);
  Eigen::MatrixXd cov = cross / static_cast<double>(n) - mean * mean.transpose();
  cov = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error(ErrorKind::invalid_argument, "PCA eigen-decomposition failed");

  SemanticModel m;
  m.dim = dim;
  m.mean.assign(mean.data(), mean.data() + features);
  m.components.resize(dim * features);
  m.explained_variance.resize(dim);
  const double top = std::max(0.0, solver.eigenvalues()(static_cast<Eigen::Index>(features) - 1));
  std::size_t nonzero = 0;
  for (std::size_t j = 0; j < dim; ++j) {
    const auto col = static_cast<Eigen::Index>(features - 1 - j);
    Eigen::VectorXd v = solver.eigenvectors().col(col);
    sign_normalise(v);
    for (std::size_t k = 0; k < features; ++k) m.components[j * features + k] = static_cast<float>(v(static_cast<Eigen::Index>(k)));
    m.explained_variance[j] = std::max(0.0, solver.eigenvalues()(col));
    if (m.explained_variance[j] > 1e-12 * std::max(top, 1e-300)) ++nonzero;
  }
  if (nonzero < dim) {
    m.degenerate = true;
    if (warn) warn("PCA rank " + std::to_string(nonzero) + " is below the requested dimension " + std::to_string(dim));
  }
  return m;
}

}  // namespace

std::vector<float> semantic_features(const Ast& ast, std::span<const float> grid, BatchEvaluator& evaluator) {
  std::vector<float> out(grid.size() + 1);
  std::vector<float> y, finite;
  semantic_features_into(ast.prefix(), grid, evaluator, y, finite, out);
  return out;
}

SemanticModel fit_pca(std::span<const float> rows, std::size_t features, std::size_t dim, const std::function<void(const std::string&)>& warn) {
  if (features == 0 || rows.size() % features != 0) throw Error(ErrorKind::invalid_argument, "row buffer is not a whole number of rows");
  const std::size_t n = rows.size() / features;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(features));
  Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(features), static_cast<Eigen::Index>(features));
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
      rows.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(features));
  const Eigen::MatrixXd xd = x.cast<double>();
  sum = xd.colwise().sum().transpose();
  cross.noalias() = xd.transpose() * xd;
  return finish_pca(sum, cross, n, dim, warn);
}

SemanticModel fit_semantic(const Universe& u, const SemanticFitOptions& opts) {
  if (u.size() == 0) throw Error(ErrorKind::invalid_argument, "cannot fit a semantic model on an empty universe");
  const auto grid = linspace(u.domain.lo, u.domain.hi, opts.grid_points);
  const std::size_t features = grid.size() + 1;
  const auto ids = sample_rows(u.size(), opts.fit_rows, opts.seed);

  struct Partial {
    Eigen::VectorXd sum;
    Eigen::MatrixXd cross;
  };
  std::vector<Partial> partials(reduction_blocks);
  const std::size_t per_block = (ids.size() + reduction_blocks - 1) / reduction_blocks;
  parallel_for(reduction_blocks, [&](std::size_t b) {
    auto& part = partials[b];
    part.sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(features));
    part.cross = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(features), static_cast<Eigen::Index>(features));
    const std::size_t begin = std::min(ids.size(), b * per_block);
    const std::size_t end = std::min(ids.size(), begin + per_block);
    constexpr std::size_t chunk = 2048;
    BatchEvaluator evaluator;
    std::vector<float> y, finite, row(features);
    Eigen::MatrixXd block(static_cast<Eigen::Index>(chunk), static_cast<Eigen::Index>(features));
    for (std::size_t c = begin; c < end; c += chunk) {
      const std::size_t rows = std::min(chunk, end - c);
      for (std::size_t r = 0; r < rows; ++r) {
        semantic_features_into(u.ast(ids[c + r]).prefix(), grid, evaluator, y, finite, row);
        for (std::size_t k = 0; k < features; ++k) block(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = row[k];
      }
      const auto used = block.topRows(static_cast<Eigen::Index>(rows));
      part.sum += used.colwise().sum().transpose();
      part.cross.noalias() += used.transpose() * used;
    }
  });
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(features));
  Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(features), static_cast<Eigen::Index>(features));
  for (const auto& part : partials) {
    sum += part.sum;
    cross += part.cross;
  }
  auto m = finish_pca(sum, cross, ids.size(), opts.dim, opts.warn);
  m.grid = grid;
  m.seed = opts.seed;
  m.fit_rows = ids.size();
  return m;
}

std::vector<float> project_semantic(std::span<const float> features, const SemanticModel& m) {
  if (features.size() != m.features()) throw Error(ErrorKind::invalid_argument, "feature length does not match semantic model");
  std::vector<float> out(m.dim);
  for (std::size_t j = 0; j < m.dim; ++j) {
    const auto c = m.component(j);
    double acc = 0.0;
    for (std::size_t k = 0; k < features.size(); ++k) acc += static_cast<double>(c[k]) * (static_cast<double>(features[k]) - m.mean[k]);
    out[j] = static_cast<float>(acc);
  }
  return out;
}

std::vector<float> semantic_embed(const Ast& ast, const SemanticModel& m) {
  BatchEvaluator evaluator;
  return project_semantic(semantic_features(ast, m.grid, evaluator), m);
}

EmbeddingMatrix embed_semantic(const Universe& u, const SemanticModel& m) {
  EmbeddingMatrix out(Manifold::semantic, u.size(), m.dim);
  constexpr std::size_t chunk = 4096;
  parallel_for((u.size() + chunk - 1) / chunk, [&](std::size_t c) {
    BatchEvaluator evaluator;
    std::vector<float> y, finite, features(m.features());
    for (std::size_t id = c * chunk; id < std::min(u.size(), (c + 1) * chunk); ++id) {
      semantic_features_into(u.ast(id).prefix(), m.grid, evaluator, y, finite, features);
      const auto v = project_semantic(features, m);
      std::copy(v.begin(), v.end(), out.row(id).begin());
    }
  });
  return out;
}

EmbeddingMatrix embed_semantic(const Universe& u, const SemanticModel& m, const EquivalenceClassing& classes) {
  EmbeddingMatrix out(Manifold::semantic, u.size(), m.dim);
  constexpr std::size_t chunk = 1024;
  const std::size_t n = classes.class_count();
  parallel_for((n + chunk - 1) / chunk, [&](std::size_t c) {
    BatchEvaluator evaluator;
    std::vector<float> y, finite, features(m.features());
    for (std::size_t k = c * chunk; k < std::min(n, (c + 1) * chunk); ++k) {
      semantic_features_into(u.ast(classes.representatives[k]).prefix(), m.grid, evaluator, y, finite, features);
      const auto v = project_semantic(features, m);
      for (ProgramId id : classes.members_of(k)) {
        if (id >= u.size()) throw Error(ErrorKind::malformed, "class member outside the universe");
        std::copy(v.begin(), v.end(), out.row(id).begin());
      }
    }
  });
  return out;
}

void save_semantic_model(const SemanticModel& m, const std::filesystem::path& path) {
  ByteWriter w;
  w.magic("PMSM");
  w.u32(model_version);
  w.u64(m.grid.size());
  w.u64(m.features());
  w.u32(static_cast<std::uint32_t>(m.dim));
  w.u64(m.seed);
  w.u64(m.fit_rows);
  w.u8(m.degenerate ? 1 : 0);
  w.f32_array(m.grid);
  for (double v : m.mean) w.f64(v);
  w.f32_array(m.components);
  for (double v : m.explained_variance) w.f64(v);
  w.write_to(path);
}

SemanticModel load_semantic_model(const std::filesystem::path& path) {
  auto r = ByteReader::from_file(path);
  r.expect_magic("PMSM");
  if (r.u32() != model_version) throw Error(ErrorKind::malformed, "unsupported semantic model version in " + path.string());
  SemanticModel m;
  const auto grid_size = r.u64();
  const auto features = r.u64();
  m.dim = r.u32();
  m.seed = r.u64();
  m.fit_rows = r.u64();
  m.degenerate = r.u8() != 0;
  m.grid.resize(grid_size);
  r.f32_array(m.grid);
  m.mean.resize(features);
  for (auto& v : m.mean) v = r.f64();
  m.components.resize(m.dim * features);
  r.f32_array(m.components);
  m.explained_variance.resize(m.dim);
  for (auto& v : m.explained_variance) v = r.f64();
  return m;
}

// ---------------------------------------------------------------------------------------------
// Syntactic manifold

namespace {

void shift_in(std::vector<PqLabel>& reg, PqLabel label) {
  std::rotate(reg.begin(), reg.begin() + 1, reg.end());
  reg.back() = label;
}

std::size_t pq_rec(std::span<const Op> prefix, std::size_t pos, std::vector<PqLabel> stem, int q, std::vector<PqGram>& out) {
  const Op op = prefix[pos++];
  shift_in(stem, pq_label(op));
  auto emit = [&](const std::vector<PqLabel>& base) {
    PqGram g(stem);
    g.insert(g.end(), base.begin(), base.end());
    out.push_back(std::move(g));
  };
  std::vector<PqLabel> base(static_cast<std::size_t>(q), pq_dummy);
  if (arity(op) == 0) {
    emit(base);
    return pos;
  }
  for (int c = 0; c < arity(op); ++c) {
    shift_in(base, pq_label(prefix[pos]));
    emit(base);
    pos = pq_rec(prefix, pos, stem, q, out);
  }
  for (int k = 1; k < q; ++k) {
    shift_in(base, pq_dummy);
    emit(base);
  }
  return pos;
}

std::uint64_t gram_hash(const PqGram& g, std::uint64_t seed) {
  std::uint64_t h = mix64(seed ^ 0x6a09e667f3bcc908ULL);
  for (PqLabel l : g) h = mix64(h ^ (static_cast<std::uint64_t>(l) + 1) * 0x9e3779b97f4a7c15ULL);
  return mix64(h ^ g.size());
}

}  // namespace

std::vector<PqGram> pq_grams(const Ast& ast, int p, int q) {
  if (p < 1 || q < 1) throw Error(ErrorKind::invalid_argument, "PQ-gram parameters must be positive");
  std::vector<PqGram> out;
  pq_rec(ast.prefix(), 0, std::vector<PqLabel>(static_cast<std::size_t>(p), pq_dummy), q, out);
  std::sort(out.begin(), out.end());
  return out;
}

std::string to_string(const PqGram& gram, int p) {
  std::string out = "(";
  for (std::size_t i = 0; i < gram.size(); ++i) {
    if (i > 0) out += (static_cast<int>(i) == p) ? " | " : ",";
    out += gram[i] == pq_dummy ? std::string("*") : std::string(label(static_cast<Op>(gram[i] - 1)));
  }
  return out + ")";
}

double SparseVector::norm() const {
  double s = 0.0;
  for (float v : value) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

SparseVector hash_profile(std::span<const PqGram> grams, std::uint32_t hash_dim, std::uint64_t seed) {
  if (hash_dim == 0 || (hash_dim & (hash_dim - 1)) != 0) throw Error(ErrorKind::invalid_argument, "hash dimension must be a power of two");
  std::vector<std::pair<std::uint32_t, float>> entries;
  entries.reserve(grams.size());
  for (const auto& g : grams) {
    const std::uint64_t h = gram_hash(g, seed);
    const auto bucket = static_cast<std::uint32_t>(h & (hash_dim - 1));
    const float sign = (mix64(h ^ 0xbb67ae8584caa73bULL) >> 63) ? -1.0f : 1.0f;
    entries.emplace_back(bucket, sign);
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  SparseVector out;
  for (std::size_t i = 0; i < entries.size();) {
    std::size_t j = i;
    float acc = 0.0f;
    while (j < entries.size() && entries[j].first == entries[i].first) acc += entries[j++].second;
    if (acc != 0.0f) {
      out.index.push_back(entries[i].first);
      out.value.push_back(acc);
    }
    i = j;
  }
  return out;
}

SparseVector syntactic_profile(const Ast& ast, const SyntacticModel& m) {
  return hash_profile(pq_grams(ast, m.p, m.q), m.hash_dim, m.hash_seed);
}

namespace {

// Y = A^T A W for the sparse row matrix A, summed over fixed row blocks.
Eigen::MatrixXd gram_apply(std::span<const SparseVector> rows, const Eigen::MatrixXd& w) {
  std::vector<Eigen::MatrixXd> partial(reduction_blocks);
  const std::size_t per_block = (rows.size() + reduction_blocks - 1) / reduction_blocks;
  parallel_for(reduction_blocks, [&](std::size_t b) {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(w.rows(), w.cols());
    Eigen::RowVectorXd t(w.cols());
    const std::size_t begin = std::min(rows.size(), b * per_block);
    const std::size_t end = std::min(rows.size(), begin + per_block);
    for (std::size_t r = begin; r < end; ++r) {
      const auto& row = rows[r];
      t.setZero();
      for (std::size_t k = 0; k < row.index.size(); ++k) t += static_cast<double>(row.value[k]) * w.row(row.index[k]);
      for (std::size_t k = 0; k < row.index.size(); ++k) y.row(row.index[k]) += static_cast<double>(row.value[k]) * t;
    }
    partial[b] = std::move(y);
  });
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(w.rows(), w.cols());
  for (const auto& p : partial) y += p;
  return y;
}

Eigen::MatrixXd orthonormal_columns(const Eigen::MatrixXd& a) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
}

}  // namespace

SyntacticModel fit_truncated_svd(std::span<const SparseVector> rows, std::uint32_t hash_dim, const SyntacticFitOptions& opts) {
  if (rows.empty()) throw Error(ErrorKind::invalid_argument, "truncated SVD needs at least one row");
  if (opts.dim == 0 || opts.dim > hash_dim) throw Error(ErrorKind::invalid_argument, "invalid SVD dimension");
  const auto h = static_cast<Eigen::Index>(hash_dim);
  const auto l = static_cast<Eigen::Index>(std::min<std::size_t>(opts.dim + opts.oversample, hash_dim));

  const CounterRng rng(combine_keys(opts.seed, 0x5bd1e995));
  Eigen::MatrixXd w(h, l);
  for (Eigen::Index i = 0; i < h; ++i) {
    for (Eigen::Index j = 0; j < l; ++j) w(i, j) = rng.normal(static_cast<std::uint64_t>(i * l + j));
  }
  w = orthonormal_columns(w);
  for (std::size_t it = 0; it < opts.power_iterations; ++it) w = orthonormal_columns(gram_apply(rows, w));

  // Rayleigh-Ritz on the subspace: eigenpairs of W^T (A^T A) W.
  const Eigen::MatrixXd y = gram_apply(rows, w);
  Eigen::MatrixXd small = w.transpose() * y;
  small = 0.5 * (small + small.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(small);
  if (solver.info() != Eigen::Success) throw Error(ErrorKind::invalid_argument, "SVD eigen-decomposition failed");

  SyntacticModel m;
  m.p = opts.p;
  m.q = opts.q;
  m.hash_dim = hash_dim;
  m.hash_seed = opts.hash_seed;
  m.dim = opts.dim;
  m.seed = opts.seed;
  m.fit_rows = rows.size();
  m.factors.resize(opts.dim * hash_dim);
  m.singular_values.resize(opts.dim);
  const double top = std::sqrt(std::max(0.0, solver.eigenvalues()(l - 1)));
  std::size_t nonzero = 0;
  for (std::size_t j = 0; j < opts.dim; ++j) {
    const Eigen::Index col = l - 1 - static_cast<Eigen::Index>(j);
    Eigen::VectorXd v = w * solver.eigenvectors().col(col);
    v.normalize();
    sign_normalise(v);
    for (Eigen::Index k = 0; k < h; ++k) m.factors[j * hash_dim + static_cast<std::size_t>(k)] = static_cast<float>(v(k));
    m.singular_values[j] = std::sqrt(std::max(0.0, solver.eigenvalues()(col)));
    if (m.singular_values[j] > 1e-9 * std::max(top, 1e-300)) ++nonzero;
  }
  if (nonzero < opts.dim) {
    m.degenerate = true;
    if (opts.warn) opts.warn("SVD rank " + std::to_string(nonzero) + " is below the requested dimension " + std::to_string(opts.dim));
  }
  return m;
}

SyntacticModel fit_syntactic(const Universe& u, const SyntacticFitOptions& opts) {
  if (u.size() == 0) throw Error(ErrorKind::invalid_argument, "cannot fit a syntactic model on an empty universe");
  const auto ids = sample_rows(u.size(), opts.fit_rows, opts.seed);
  std::vector<SparseVector> rows(ids.size());
  constexpr std::size_t chunk = 8192;
  parallel_for((ids.size() + chunk - 1) / chunk, [&](std::size_t c) {
    for (std::size_t i = c * chunk; i < std::min(ids.size(), (c + 1) * chunk); ++i) {
      rows[i] = hash_profile(pq_grams(u.ast(ids[i]), opts.p, opts.q), opts.hash_dim, opts.hash_seed);
    }
  });
  return fit_truncated_svd(rows, opts.hash_dim, opts);
}

std::vector<float> project_syntactic(const SparseVector& profile, const SyntacticModel& m) {
  std::vector<float> out(m.dim);
  for (std::size_t j = 0; j < m.dim; ++j) {
    const auto f = m.factor(j);
    double acc = 0.0;
    for (std::size_t k = 0; k < profile.index.size(); ++k) acc += static_cast<double>(profile.value[k]) * f[profile.index[k]];
    out[j] = static_cast<float>(acc);
  }
  return out;
}

namespace {

SyntacticEmbedding normalise(std::vector<float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  const double n = std::sqrt(s);
  SyntacticEmbedding out;
  if (!(n > 1e-12)) {
    std::fill(v.begin(), v.end(), 0.0f);
    out.flagged = true;
  } else {
    for (auto& x : v) x = static_cast<float>(x / n);
  }
  out.vector = std::move(v);
  return out;
}

}  // namespace

SyntacticEmbedding syntactic_embed(const Ast& ast, const SyntacticModel& m) {
  return normalise(project_syntactic(syntactic_profile(ast, m), m));
}

EmbeddingMatrix embed_syntactic(const Universe& u, const SyntacticModel& m) {
  EmbeddingMatrix out(Manifold::syntactic, u.size(), m.dim);
  constexpr std::size_t chunk = 4096;
  const std::size_t chunks = (u.size() + chunk - 1) / chunk;
  std::vector<std::vector<ProgramId>> flagged(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    for (std::size_t id = c * chunk; id < std::min(u.size(), (c + 1) * chunk); ++id) {
      const auto e = syntactic_embed(u.ast(id), m);
      if (e.flagged) flagged[c].push_back(id);
      std::copy(e.vector.begin(), e.vector.end(), out.row(id).begin());
    }
  });
  for (const auto& f : flagged) out.flagged.insert(out.flagged.end(), f.begin(), f.end());
  return out;
}

void save_syntactic_model(const SyntacticModel& m, const std::filesystem::path& path) {
  ByteWriter w;
  w.magic("PMSY");
  w.u32(model_version);
  w.u32(static_cast<std::uint32_t>(m.p));
  w.u32(static_cast<std::uint32_t>(m.q));
  w.u32(m.hash_dim);
  w.u64(m.hash_seed);
  w.u32(static_cast<std::uint32_t>(m.dim));
  w.u64(m.seed);
  w.u64(m.fit_rows);
  w.u8(m.degenerate ? 1 : 0);
  w.f32_array(m.factors);
  for (double v : m.singular_values) w.f64(v);
  w.write_to(path);
}

SyntacticModel load_syntactic_model(const std::filesystem::path& path) {
  auto r = ByteReader::from_file(path);
  r.expect_magic("PMSY");
  if (r.u32() != model_version) throw Error(ErrorKind::malformed, "unsupported syntactic model version in " + path.string());
  SyntacticModel m;
  m.p = static_cast<int>(r.u32());
  m.q = static_cast<int>(r.u32());
  m.hash_dim = r.u32();
  m.hash_seed = r.u64();
  m.dim = r.u32();
  m.seed = r.u64();
  m.fit_rows = r.u64();
  m.degenerate = r.u8() != 0;
  m.factors.resize(m.dim * m.hash_dim);
  r.f32_array(m.factors);
  m.singular_values.resize(m.dim);
  for (auto& v : m.singular_values) v = r.f64();
  return m;
}

}  // namespace progspace
