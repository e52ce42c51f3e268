#include "progspace/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "progspace/binary_io.hpp"
#include "progspace/digest.hpp"
#include "progspace/error.hpp"
#include "progspace/parallel.hpp"
#include "progspace/random.hpp"

namespace progspace {

namespace {

using nlohmann::json;

float squared_distance(const float* a, const float* b, std::size_t dim) {
  float s = 0.0f;
  for (std::size_t i = 0; i < dim; ++i) {
    const float d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// k smallest squared distances seen so far, ascending.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) { best_.reserve(k + 1); }
  void reset() { best_.clear(); }
  float bound() const { return best_.size() < k_ ? std::numeric_limits<float>::infinity() : best_.back(); }
  void offer(float d) {
    if (d >= bound()) return;
    auto it = std::upper_bound(best_.begin(), best_.end(), d);
    best_.insert(it, d);
    if (best_.size() > k_) best_.pop_back();
  }
  float mean_distance() const {
    double s = 0.0;
    for (float d : best_) s += std::sqrt(static_cast<double>(d));
    return static_cast<float>(s / static_cast<double>(best_.size()));
  }

 private:
  std::size_t k_;
  std::vector<float> best_;
};

void require_rows(const EmbeddingMatrix& rows, std::size_t k) {
  if (k == 0) throw Error(ErrorKind::invalid_argument, "k must be positive");
  if (rows.rows < k + 1) {
    throw Error(ErrorKind::invalid_argument, "need at least " + std::to_string(k + 1) + " rows for k=" + std::to_string(k) + ", got " + std::to_string(rows.rows));
  }
}

constexpr std::size_t query_chunk = 256;

// Inverted-file index: rows bucketed by nearest k-means centroid, vectors copied per list.
struct IvfIndex {
  std::size_t dim = 0;
  std::size_t nlist = 0;
  std::vector<float> centroids;
  std::vector<std::uint64_t> offsets;
  std::vector<ProgramId> ids;
  std::vector<float> data;

  std::size_t nearest_centroid(const float* v) const {
    std::size_t best = 0;
    float best_d = std::numeric_limits<float>::infinity();
    for (std::size_t c = 0; c < nlist; ++c) {
      const float d = squared_distance(v, centroids.data() + c * dim, dim);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    return best;
  }
};

IvfIndex build_ivf(const EmbeddingMatrix& rows, const KnnOptions& opts) {
  IvfIndex index;
  index.dim = rows.dim;
  const std::size_t n = rows.rows;
  index.nlist = opts.nlist > 0 ? opts.nlist : std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(n))));
  index.nlist = std::min(index.nlist, n);
  const auto sample = sample_rows(n, std::max(opts.kmeans_sample, index.nlist), combine_keys(opts.seed, 0x6b6d));

  // Initial centroids: a seeded subset of the training sample.
  const auto seeds = sample_rows(sample.size(), index.nlist, combine_keys(opts.seed, 0x696e));
  index.centroids.resize(index.nlist * index.dim);
  for (std::size_t c = 0; c < index.nlist; ++c) {
    const auto row = rows.row(sample[seeds[c]]);
    std::copy(row.begin(), row.end(), index.centroids.begin() + static_cast<std::ptrdiff_t>(c * index.dim));
  }

  std::vector<std::uint32_t> assign(sample.size());
  for (std::size_t it = 0; it < opts.kmeans_iterations; ++it) {
    parallel_for((sample.size() + query_chunk - 1) / query_chunk, [&](std::size_t chunk) {
      for (std::size_t i = chunk * query_chunk; i < std::min(sample.size(), (chunk + 1) * query_chunk); ++i) {
        assign[i] = static_cast<std::uint32_t>(index.nearest_centroid(rows.row(sample[i]).data()));
      }
    });
    std::vector<double> sums(index.nlist * index.dim, 0.0);
    std::vector<std::size_t> counts(index.nlist, 0);
    for (std::size_t i = 0; i < sample.size(); ++i) {
      const auto row = rows.row(sample[i]);
      for (std::size_t j = 0; j < index.dim; ++j) sums[assign[i] * index.dim + j] += row[j];
      ++counts[assign[i]];
    }
    for (std::size_t c = 0; c < index.nlist; ++c) {
      if (counts[c] == 0) continue;  // keep the previous centroid
      for (std::size_t j = 0; j < index.dim; ++j) {
        index.centroids[c * index.dim + j] = static_cast<float>(sums[c * index.dim + j] / static_cast<double>(counts[c]));
      }
    }
  }

  std::vector<std::uint32_t> list_of(n);
  parallel_for((n + query_chunk - 1) / query_chunk, [&](std::size_t chunk) {
    for (std::size_t i = chunk * query_chunk; i < std::min(n, (chunk + 1) * query_chunk); ++i) {
      list_of[i] = static_cast<std::uint32_t>(index.nearest_centroid(rows.row(i).data()));
    }
  });
  index.offsets.assign(index.nlist + 1, 0);
  for (auto l : list_of) ++index.offsets[l + 1];
  std::partial_sum(index.offsets.begin(), index.offsets.end(), index.offsets.begin());
  index.ids.resize(n);
  index.data.resize(n * index.dim);
  auto cursor = index.offsets;
  for (std::size_t i = 0; i < n; ++i) {
    const auto slot = cursor[list_of[i]]++;
    index.ids[slot] = i;
    const auto row = rows.row(i);
    std::copy(row.begin(), row.end(), index.data.begin() + static_cast<std::ptrdiff_t>(slot * index.dim));
  }
  return index;
}

std::vector<float> ivf_query_all(const EmbeddingMatrix& rows, const IvfIndex& index, std::size_t k, std::size_t nprobe) {
  const std::size_t n = rows.rows;
  std::vector<float> out(n);
  nprobe = std::min(nprobe, index.nlist);
  parallel_for((n + query_chunk - 1) / query_chunk, [&](std::size_t chunk) {
    TopK top(k);
    std::vector<std::pair<float, std::uint32_t>> probes(index.nlist);
    for (std::size_t q = chunk * query_chunk; q < std::min(n, (chunk + 1) * query_chunk); ++q) {
      const float* v = rows.row(q).data();
      for (std::size_t c = 0; c < index.nlist; ++c) {
        probes[c] = {squared_distance(v, index.centroids.data() + c * index.dim, index.dim), static_cast<std::uint32_t>(c)};
      }
      std::partial_sort(probes.begin(), probes.begin() + static_cast<std::ptrdiff_t>(nprobe), probes.end());
      top.reset();
      for (std::size_t p = 0; p < nprobe; ++p) {
        const auto l = probes[p].second;
        for (auto slot = index.offsets[l]; slot < index.offsets[l + 1]; ++slot) {
          if (index.ids[slot] == q) continue;
          top.offer(squared_distance(v, index.data.data() + slot * index.dim, index.dim));
        }
      }
      out[q] = top.mean_distance();
    }
  });
  return out;
}

double relative_error(double approx, double exact) {
  if (exact == 0.0) return approx == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::abs(approx - exact) / exact;
}

}  // namespace

std::vector<float> knn_mean_distance_exact(const EmbeddingMatrix& rows, std::span<const ProgramId> queries, std::size_t k) {
  require_rows(rows, k);
  std::vector<float> out(queries.size());
  parallel_for((queries.size() + query_chunk - 1) / query_chunk, [&](std::size_t chunk) {
    TopK top(k);
    for (std::size_t i = chunk * query_chunk; i < std::min(queries.size(), (chunk + 1) * query_chunk); ++i) {
      const ProgramId q = queries[i];
      if (q >= rows.rows) throw Error(ErrorKind::invalid_argument, "query id " + std::to_string(q) + " outside the embedding");
      const float* v = rows.row(q).data();
      top.reset();
      for (std::size_t j = 0; j < rows.rows; ++j) {
        if (j == q) continue;
        top.offer(squared_distance(v, rows.data.data() + j * rows.dim, rows.dim));
      }
      out[i] = top.mean_distance();
    }
  });
  return out;
}

KnnResult knn_mean_distance(const EmbeddingMatrix& rows, const KnnOptions& opts) {
  require_rows(rows, opts.k);
  KnnResult result;
  if (rows.rows <= opts.exact_limit) {
    std::vector<ProgramId> all(rows.rows);
    std::iota(all.begin(), all.end(), ProgramId{0});
    result.mean_distance = knn_mean_distance_exact(rows, all, opts.k);
    return result;
  }

  const auto index = build_ivf(rows, opts);
  const auto audit = sample_rows(rows.rows, opts.audit_rows, combine_keys(opts.seed, 0x6175));
  const auto exact = knn_mean_distance_exact(rows, audit, opts.k);
  const double exact_mean = std::accumulate(exact.begin(), exact.end(), 0.0) / static_cast<double>(exact.size());

  for (std::size_t nprobe = std::max<std::size_t>(1, opts.nprobe);; nprobe *= 2) {
    nprobe = std::min(nprobe, index.nlist);
    auto approx = ivf_query_all(rows, index, opts.k, nprobe);
    double approx_mean = 0.0;
    for (auto id : audit) approx_mean += approx[id];
    approx_mean /= static_cast<double>(audit.size());
    result.audit_error = relative_error(approx_mean, exact_mean);
    result.nprobe = nprobe;
    result.exact = nprobe == index.nlist;
    if (result.audit_error < opts.audit_tolerance || result.exact) {
      result.mean_distance = std::move(approx);
      return result;
    }
  }
}

// ---------------------------------------------------------------------------------------------

std::vector<ProgramId> uniform_sample(std::span<const ProgramId> ids, std::size_t m, std::uint64_t seed) {
  if (m > ids.size()) {
    throw Error(ErrorKind::capacity, "cannot draw " + std::to_string(m) + " ids from " + std::to_string(ids.size()));
  }
  std::vector<ProgramId> pool(ids.begin(), ids.end());
  auto engine = seeded_engine(seed, 0x756e69);
  for (std::size_t i = 0; i < m; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(engine, pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(m);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<ProgramId> inverse_density_sample(std::span<const ProgramId> ids, std::span<const float> weights, std::size_t m,
                                              std::uint64_t seed) {
  if (ids.size() != weights.size()) throw Error(ErrorKind::invalid_argument, "ids and weights differ in length");
  if (m > ids.size()) {
    throw Error(ErrorKind::capacity, "cannot draw " + std::to_string(m) + " ids from " + std::to_string(ids.size()));
  }
  bool any_positive = false;
  for (float w : weights) {
    if (!(w >= 0.0f) || !std::isfinite(w)) throw Error(ErrorKind::invalid_argument, "weights must be finite and non-negative");
    any_positive = any_positive || w > 0.0f;
  }
  if (!any_positive && !ids.empty()) throw Error(ErrorKind::invalid_argument, "all weights are zero");

  struct Key {
    int group;  // 0: positive weight, 1: zero weight
    double key;
    ProgramId id;
  };
  const CounterRng rng(combine_keys(seed, 0x696473));
  std::vector<Key> keys(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double u = rng.unit_open(ids[i]);
    keys[i] = weights[i] > 0.0f ? Key{0, -std::log(u) / static_cast<double>(weights[i]), ids[i]} : Key{1, u, ids[i]};
  }
  auto less = [](const Key& a, const Key& b) {
    if (a.group != b.group) return a.group < b.group;
    if (a.key != b.key) return a.key < b.key;
    return a.id < b.id;
  };
  std::nth_element(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(m), keys.end(), less);
  std::vector<ProgramId> out(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = keys[i].id;
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<ProgramId> diverse_sample(const EquivalenceClassing& classes, std::size_t m, std::uint64_t seed,
                                      const std::vector<bool>& allowed) {
  std::vector<ProgramId> members;
  std::vector<std::uint64_t> offsets{0};
  std::vector<std::uint32_t> active;
  members.reserve(classes.members.size());
  for (std::size_t c = 0; c < classes.class_count(); ++c) {
    for (ProgramId id : classes.members_of(c)) {
      if (allowed.empty() || (id < allowed.size() && allowed[id])) members.push_back(id);
    }
    if (members.size() > offsets.back()) active.push_back(static_cast<std::uint32_t>(offsets.size() - 1));
    offsets.push_back(members.size());
  }
  if (m > members.size()) {
    throw Error(ErrorKind::capacity, "cannot draw " + std::to_string(m) + " ids from " + std::to_string(members.size()));
  }
  std::vector<std::uint64_t> remaining(offsets.size() - 1);
  for (std::size_t c = 0; c + 1 < offsets.size(); ++c) remaining[c] = offsets[c + 1] - offsets[c];

  auto engine = seeded_engine(seed, 0x646976);
  std::vector<ProgramId> out;
  out.reserve(m);
  while (out.size() < m) {
    const auto slot = static_cast<std::size_t>(uniform_index(engine, active.size()));
    const auto c = active[slot];
    const auto base = offsets[c];
    const auto j = uniform_index(engine, remaining[c]);
    out.push_back(members[base + j]);
    std::swap(members[base + j], members[base + remaining[c] - 1]);
    if (--remaining[c] == 0) {
      active[slot] = active.back();
      active.pop_back();
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------------------------

std::vector<float> coordinate_median(const EmbeddingMatrix& rows, std::span<const ProgramId> ids) {
  if (ids.empty()) throw Error(ErrorKind::invalid_argument, "median of an empty row set");
  std::vector<float> out(rows.dim);
  std::vector<float> column(ids.size());
  const std::size_t mid = ids.size() / 2;
  for (std::size_t j = 0; j < rows.dim; ++j) {
    for (std::size_t i = 0; i < ids.size(); ++i) column[i] = rows.data[ids[i] * rows.dim + j];
    std::nth_element(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(mid), column.end());
    const float upper = column[mid];
    if (ids.size() % 2 == 1) {
      out[j] = upper;
    } else {
      const float lower = *std::max_element(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(mid));
      out[j] = static_cast<float>((static_cast<double>(lower) + upper) / 2.0);
    }
  }
  return out;
}

std::vector<ProgramId> SupportPartition::beyond_radius() const {
  std::vector<ProgramId> out;
  for (auto id : outside) {
    if (distance[id] > radius) out.push_back(id);
  }
  return out;
}

SupportPartition geometric_partition(const EmbeddingMatrix& rows, double inside_fraction) {
  if (!(inside_fraction > 0.0 && inside_fraction <= 1.0)) throw Error(ErrorKind::invalid_argument, "inside fraction must lie in (0, 1]");
  SupportPartition part;
  part.manifold = rows.manifold;
  part.excluded = rows.flagged;
  std::sort(part.excluded.begin(), part.excluded.end());
  std::vector<ProgramId> ids;
  ids.reserve(rows.rows);
  for (ProgramId id = 0, e = 0; id < rows.rows; ++id) {
    if (e < part.excluded.size() && part.excluded[e] == id) {
      ++e;
      continue;
    }
    ids.push_back(id);
  }
  if (ids.empty()) throw Error(ErrorKind::invalid_argument, "geometric partition of an empty row set");

  part.centroid = coordinate_median(rows, ids);
  part.distance.resize(rows.rows);
  for (ProgramId id = 0; id < rows.rows; ++id) part.distance[id] = distance(rows.row(id), part.centroid);

  std::sort(ids.begin(), ids.end(), [&](ProgramId a, ProgramId b) {
    return part.distance[a] != part.distance[b] ? part.distance[a] < part.distance[b] : a < b;
  });
  const double want = inside_fraction * static_cast<double>(ids.size());
  auto need = static_cast<std::size_t>(std::ceil(want - 1e-9 * std::max(1.0, want)));
  need = std::clamp<std::size_t>(need, 1, ids.size());
  part.radius = part.distance[ids[need - 1]];
  part.inside.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(need));
  part.outside.assign(ids.begin() + static_cast<std::ptrdiff_t>(need), ids.end());
  std::sort(part.inside.begin(), part.inside.end());
  std::sort(part.outside.begin(), part.outside.end());
  return part;
}

// ---------------------------------------------------------------------------------------------

Pool global_pool(std::size_t universe_size, std::uint64_t seed, double train_fraction) {
  Pool pool;
  pool.seed = seed;
  const double want = train_fraction * static_cast<double>(universe_size);
  const auto n_train = std::min(universe_size, static_cast<std::size_t>(std::ceil(want - 1e-9 * std::max(1.0, want))));
  pool.train = sample_rows(universe_size, n_train, combine_keys(seed, 0x706f6f6c));
  pool.test.reserve(universe_size - n_train);
  for (ProgramId id = 0, t = 0; id < universe_size; ++id) {
    if (t < pool.train.size() && pool.train[t] == id) {
      ++t;
      continue;
    }
    pool.test.push_back(id);
  }
  return pool;
}

namespace {

std::uint64_t split_seed(std::uint64_t seed, const std::string& name, std::uint64_t role) {
  return combine_keys(combine_keys(seed, fnv1a64(name)), role);
}

void check_capacity(const std::string& what, std::size_t want, std::size_t have) {
  if (want > have) {
    throw Error(ErrorKind::capacity, what + " needs " + std::to_string(want) + " programs but only " + std::to_string(have) + " are available");
  }
}

std::vector<float> gather(std::span<const float> values, std::span<const ProgramId> ids) {
  std::vector<float> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= values.size()) throw Error(ErrorKind::invalid_argument, "density vector shorter than universe");
    out[i] = values[ids[i]];
  }
  return out;
}

std::vector<bool> mask(std::span<const ProgramId> ids, std::size_t n) {
  std::vector<bool> out(n, false);
  for (auto id : ids) out[id] = true;
  return out;
}

}  // namespace

std::vector<SplitSpec> build_density_splits(const DensitySplitInputs& in, const Pool& pool, const SplitSizes& sizes,
                                            std::uint64_t seed, std::size_t k) {
  if (in.classes == nullptr) throw Error(ErrorKind::invalid_argument, "density splits need the equivalence classes");
  check_capacity("train pool", sizes.train, pool.train.size());
  check_capacity("test pool", sizes.test, pool.test.size());
  const std::size_t n = pool.train.size() + pool.test.size();

  std::vector<SplitSpec> out;
  for (const auto& name : density_split_names()) {
    SplitSpec s;
    s.name = name;
    s.train_size = sizes.train;
    s.test_size = sizes.test;
    s.seed = seed;
    s.pool_seed = pool.seed;
    if (name == "diverse") {
      s.strategy = "diverse";
      s.train = diverse_sample(*in.classes, sizes.train, split_seed(seed, name, 1), mask(pool.train, n));
      s.test = diverse_sample(*in.classes, sizes.test, split_seed(seed, name, 2), mask(pool.test, n));
    } else {
      const bool sem = name == "semantic";
      const auto dk = sem ? in.dk_semantic : in.dk_syntactic;
      s.strategy = "inverse_density";
      s.manifold = sem ? "sem" : "syn";
      s.k = k;
      s.train = inverse_density_sample(pool.train, gather(dk, pool.train), sizes.train, split_seed(seed, name, 1));
      s.test = inverse_density_sample(pool.test, gather(dk, pool.test), sizes.test, split_seed(seed, name, 2));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SplitSpec> build_support_splits(const SupportPartition& partition, const SplitSizes& sizes, std::uint64_t seed,
                                            double inside_fraction) {
  const std::string prefix = to_string(partition.manifold);
  check_capacity(prefix + " inside region", sizes.train + sizes.test, partition.inside.size());
  const auto beyond = partition.beyond_radius();
  check_capacity(prefix + " outside region", sizes.test, beyond.size());

  const auto train = uniform_sample(partition.inside, sizes.train, split_seed(seed, prefix, 1));
  std::vector<ProgramId> rest;
  std::set_difference(partition.inside.begin(), partition.inside.end(), train.begin(), train.end(), std::back_inserter(rest));

  std::vector<SplitSpec> out;
  for (const bool extrapolate : {false, true}) {
    SplitSpec s;
    s.name = prefix + (extrapolate ? "-extrap" : "-interp");
    s.strategy = "uniform_region";
    s.manifold = prefix;
    s.train_size = sizes.train;
    s.test_size = sizes.test;
    s.seed = seed;
    s.inside_fraction = inside_fraction;
    s.radius = partition.radius;
    s.train = train;
    s.test = extrapolate ? uniform_sample(beyond, sizes.test, split_seed(seed, s.name, 2))
                         : uniform_sample(rest, sizes.test, split_seed(seed, s.name, 2));
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------------------------

void save_ids(std::span<const ProgramId> ids, const std::filesystem::path& path) {
  ByteWriter w;
  w.magic("PMID");
  w.u32(1);
  w.u64(ids.size());
  for (auto id : ids) w.u64(id);
  w.write_to(path);
}

std::vector<ProgramId> load_ids(const std::filesystem::path& path) {
  auto r = ByteReader::from_file(path);
  r.expect_magic("PMID");
  if (r.u32() != 1) throw Error(ErrorKind::malformed, "unsupported id list version in " + path.string());
  const auto n = r.u64();
  if (n > r.remaining() / 8) throw Error(ErrorKind::malformed, "truncated id list " + path.string());
  std::vector<ProgramId> ids(n);
  for (auto& id : ids) id = r.u64();
  return ids;
}

void save_split(const SplitSpec& split, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto train_file = split.name + ".train.ids";
  const auto test_file = split.name + ".test.ids";
  save_ids(split.train, dir / train_file);
  save_ids(split.test, dir / test_file);
  json j = {
      {"name", split.name},
      {"strategy", split.strategy},
      {"manifold", split.manifold},
      {"train_size", split.train_size},
      {"test_size", split.test_size},
      {"seed", split.seed},
      {"pool_seed", split.pool_seed},
      {"k", split.k},
      {"inside_fraction", split.inside_fraction},
      {"radius", split.radius ? json(*split.radius) : json(nullptr)},
      {"universe_hash", split.universe_hash},
      {"train_ids", {{"file", train_file}, {"count", split.train.size()}, {"sha256", to_hex(sha256_file(dir / train_file))}}},
      {"test_ids", {{"file", test_file}, {"count", split.test.size()}, {"sha256", to_hex(sha256_file(dir / test_file))}}},
  };
  write_text_file(dir / (split.name + ".json"), j.dump(2) + "\n");
}

SplitSpec load_split(const std::filesystem::path& dir, const std::string& name) {
  const auto path = dir / (name + ".json");
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::malformed, path.string() + ": " + e.what());
  }
  auto ids = [&](const char* key) {
    const auto& entry = j.at(key);
    const auto file = dir / entry.at("file").get<std::string>();
    if (to_hex(sha256_file(file)) != entry.at("sha256").get<std::string>()) {
      throw Error(ErrorKind::hash_mismatch, file.string() + " does not match the hash recorded in " + path.string());
    }
    return load_ids(file);
  };
  try {
    SplitSpec s;
    s.name = j.at("name").get<std::string>();
    s.strategy = j.at("strategy").get<std::string>();
    s.manifold = j.at("manifold").get<std::string>();
    s.train_size = j.at("train_size").get<std::size_t>();
    s.test_size = j.at("test_size").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.pool_seed = j.at("pool_seed").get<std::uint64_t>();
    s.k = j.at("k").get<std::size_t>();
    s.inside_fraction = j.at("inside_fraction").get<double>();
    if (!j.at("radius").is_null()) s.radius = j.at("radius").get<float>();
    s.universe_hash = j.at("universe_hash").get<std::string>();
    s.train = ids("train_ids");
    s.test = ids("test_ids");
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::malformed, path.string() + ": " + e.what());
  }
}

}  // namespace progspace
