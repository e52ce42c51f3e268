#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>

#include "progspace/error.hpp"
#include "progspace/random.hpp"
#include "progspace/sampler.hpp"
#include "support.hpp"

using namespace progspace;

namespace {

EmbeddingMatrix line(std::vector<float> xs) {
  EmbeddingMatrix m(Manifold::semantic, xs.size(), 1);
  m.data = std::move(xs);
  return m;
}

EmbeddingMatrix random_points(std::size_t n, std::size_t dim, std::uint64_t seed) {
  EmbeddingMatrix m(Manifold::semantic, n, dim);
  std::mt19937_64 g(seed);
  std::normal_distribution<float> nd;
  // A few clusters so the density actually varies.
  for (std::size_t i = 0; i < n; ++i) {
    const float shift = static_cast<float>(i % 4) * 3.0f;
    for (std::size_t j = 0; j < dim; ++j) m.data[i * dim + j] = nd(g) * (1.0f + static_cast<float>(i % 3)) + shift;
  }
  return m;
}

// Sorts every distance; no pruning, no shared code with the library.
std::vector<double> brute_force_dk(const EmbeddingMatrix& m, std::size_t k) {
  std::vector<double> out(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < m.rows; ++j) {
      if (i == j) continue;
      double s = 0;
      for (std::size_t t = 0; t < m.dim; ++t) s += std::pow(static_cast<double>(m.data[i * m.dim + t]) - m.data[j * m.dim + t], 2);
      d.push_back(std::sqrt(s));
    }
    std::sort(d.begin(), d.end());
    out[i] = std::accumulate(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), 0.0) / static_cast<double>(k);
  }
  return out;
}

EquivalenceClassing make_classes(const std::vector<std::vector<ProgramId>>& groups) {
  EquivalenceClassing c;
  for (const auto& g : groups) {
    c.keys.push_back(Digest128{});
    c.members.insert(c.members.end(), g.begin(), g.end());
    c.offsets.push_back(c.members.size());
    c.representatives.push_back(g.front());
  }
  return c;
}

// Exact inclusion probabilities of the class-then-member process, by walking the Markov chain.
std::map<ProgramId, double> diverse_oracle(const std::vector<std::vector<ProgramId>>& groups, std::size_t m) {
  std::map<ProgramId, double> p;
  std::function<void(std::vector<std::vector<ProgramId>>, std::size_t, double)> walk = [&](auto left, std::size_t draws, double prob) {
    if (draws == 0) return;
    std::vector<std::size_t> live;
    for (std::size_t c = 0; c < left.size(); ++c)
      if (!left[c].empty()) live.push_back(c);
    for (auto c : live) {
      for (std::size_t j = 0; j < left[c].size(); ++j) {
        const double q = prob / static_cast<double>(live.size()) / static_cast<double>(left[c].size());
        p[left[c][j]] += q;
        auto next = left;
        next[c].erase(next[c].begin() + static_cast<std::ptrdiff_t>(j));
        walk(next, draws - 1, q);
      }
    }
  };
  walk(groups, m, 1.0);
  return p;
}

bool disjoint(std::vector<ProgramId> a, std::vector<ProgramId> b) {
  std::vector<ProgramId> both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  return both.empty();
}

bool subset(const std::vector<ProgramId>& a, const std::vector<ProgramId>& b) { return std::includes(b.begin(), b.end(), a.begin(), a.end()); }

}  // namespace

TEST_CASE("knn example on a line") {
  const auto r = knn_mean_distance(line({0.0f, 0.1f, 0.2f, 10.0f}), KnnOptions{.k = 1});
  CHECK(r.exact);
  const std::vector<double> want{0.1, 0.1, 0.1, 9.8};
  for (std::size_t i = 0; i < 4; ++i) CHECK(r.mean_distance[i] == doctest::Approx(want[i]).epsilon(1e-5));
  CHECK_THROWS_AS(knn_mean_distance(line({0.0f, 1.0f}), KnnOptions{.k = 2}), Error);
}

TEST_CASE("exact knn matches brute force") {
  const auto m = random_points(300, 5, 1);
  const auto oracle = brute_force_dk(m, 5);
  const auto r = knn_mean_distance(m, KnnOptions{.k = 5});
  for (std::size_t i = 0; i < m.rows; ++i) REQUIRE(r.mean_distance[i] == doctest::Approx(oracle[i]).epsilon(1e-5));
}

TEST_CASE("approximate knn passes its own audit and tracks brute force") {
  const auto m = random_points(3000, 6, 2);
  KnnOptions o;
  o.k = 5;
  o.exact_limit = 100;
  o.nprobe = 1;
  o.audit_rows = 500;
  const auto r = knn_mean_distance(m, o);
  CHECK(r.audit_error < o.audit_tolerance);
  const auto oracle = brute_force_dk(m, 5);
  double approx_mean = 0, exact_mean = 0;
  for (std::size_t i = 0; i < m.rows; ++i) {
    REQUIRE(r.mean_distance[i] >= oracle[i] * (1 - 1e-5));  // can only miss neighbours
    approx_mean += r.mean_distance[i];
    exact_mean += oracle[i];
  }
  CHECK(std::abs(approx_mean - exact_mean) / exact_mean < 0.05);
  // Same options, same answer.
  CHECK(knn_mean_distance(m, o).mean_distance == r.mean_distance);
}

TEST_CASE("uniform_sample") {
  std::vector<ProgramId> ids(50);
  std::iota(ids.begin(), ids.end(), 100);
  const auto s = uniform_sample(ids, 20, 3);
  CHECK(s.size() == 20);
  CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
  CHECK(subset(s, ids));
  CHECK(uniform_sample(ids, 20, 3) == s);
  CHECK(uniform_sample(ids, 50, 3) == ids);
  CHECK_THROWS_AS(uniform_sample(ids, 51, 3), Error);
}

TEST_CASE("inverse density selection probability with one draw") {
  const auto dk = knn_mean_distance(line({0.0f, 0.1f, 0.2f, 10.0f}), KnnOptions{.k = 1}).mean_distance;
  const std::vector<ProgramId> ids{0, 1, 2, 3};
  const int trials = 40000;
  int hits = 0;
  for (int t = 0; t < trials; ++t) hits += inverse_density_sample(ids, dk, 1, static_cast<std::uint64_t>(t))[0] == 3;
  const double expected = 9.8 / 10.1;
  CHECK(std::abs(static_cast<double>(hits) / trials - expected) < 0.005);
}

TEST_CASE("inverse density inclusion frequencies follow successive sampling") {
  // Probability that id i is first is w_i / W; with m=2, i is in the sample with
  // w_i/W + sum_j (w_j/W) (w_i/(W - w_j)).
  const std::vector<float> w{1, 2, 3, 4};
  const std::vector<ProgramId> ids{0, 1, 2, 3};
  const double W = 10;
  std::vector<int> hits(4, 0);
  const int trials = 40000;
  for (int t = 0; t < trials; ++t)
    for (auto id : inverse_density_sample(ids, w, 2, static_cast<std::uint64_t>(t) + 1000)) ++hits[id];
  for (std::size_t i = 0; i < 4; ++i) {
    double p = w[i] / W;
    for (std::size_t j = 0; j < 4; ++j)
      if (j != i) p += w[j] / W * w[i] / (W - w[j]);
    CHECK(std::abs(static_cast<double>(hits[i]) / trials - p) < 0.01);
  }
}

TEST_CASE("inverse density zero weights come last") {
  const std::vector<ProgramId> ids{0, 1, 2, 3, 4};
  const std::vector<float> w{1, 0, 1, 0, 1};
  for (std::uint64_t s = 0; s < 20; ++s) {
    CHECK(inverse_density_sample(ids, w, 3, s) == std::vector<ProgramId>{0, 2, 4});
    const auto four = inverse_density_sample(ids, w, 4, s);
    CHECK(subset(std::vector<ProgramId>{0, 2, 4}, four));
  }
  CHECK_THROWS_AS(inverse_density_sample(ids, std::vector<float>{1, -1, 1, 1, 1}, 2, 0), Error);
  CHECK_THROWS_AS(inverse_density_sample(ids, std::vector<float>(5, 0.0f), 2, 0), Error);
  CHECK_THROWS_AS(inverse_density_sample(ids, w, 6, 0), Error);
}

TEST_CASE("diverse sampling: singleton class beside a large class") {
  std::vector<ProgramId> big(1000);
  std::iota(big.begin(), big.end(), 1);
  const std::vector<std::vector<ProgramId>> groups{{0}, big};
  const auto oracle = diverse_oracle(groups, 2);
  CHECK(oracle.at(0) == doctest::Approx(0.75));
  const auto classes = make_classes(groups);
  int hits = 0;
  const int trials = 20000;
  for (int t = 0; t < trials; ++t) {
    const auto s = diverse_sample(classes, 2, static_cast<std::uint64_t>(t));
    REQUIRE(s.size() == 2);
    hits += s.front() == 0;
  }
  CHECK(std::abs(static_cast<double>(hits) / trials - 0.75) < 0.01);
}

TEST_CASE("diverse sampling matches the exact Markov chain") {
  const std::vector<std::vector<ProgramId>> groups{{0}, {1, 2, 3}, {4, 5}};
  const auto oracle = diverse_oracle(groups, 3);
  const auto classes = make_classes(groups);
  std::vector<int> hits(6, 0);
  const int trials = 30000;
  for (int t = 0; t < trials; ++t)
    for (auto id : diverse_sample(classes, 3, static_cast<std::uint64_t>(t) + 7)) ++hits[id];
  for (ProgramId id = 0; id < 6; ++id) CHECK(std::abs(static_cast<double>(hits[id]) / trials - oracle.at(id)) < 0.012);
}

TEST_CASE("diverse sampling respects the allowed mask") {
  const auto classes = make_classes({{0, 1}, {2, 3}, {4}});
  const std::vector<bool> allowed{true, false, false, true, false};
  CHECK(diverse_sample(classes, 2, 1, allowed) == std::vector<ProgramId>{0, 3});
  CHECK_THROWS_AS(diverse_sample(classes, 3, 1, allowed), Error);
  CHECK(diverse_sample(classes, 5, 1).size() == 5);
}

TEST_CASE("geometric partition of ten points on a line") {
  const auto p = geometric_partition(line({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}), 0.8);
  REQUIRE(p.centroid.size() == 1);
  CHECK(p.centroid[0] == 5.5f);
  CHECK(p.radius == 3.5f);
  CHECK(p.inside == std::vector<ProgramId>{1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(p.outside == std::vector<ProgramId>{0, 9});
  CHECK(p.beyond_radius() == p.outside);
}

TEST_CASE("geometric partition size is exact under ties and skips flagged rows") {
  auto m = line({0, 1, 1, 1, 1, 1, 1, 1, 1, 2, 5, 0});
  m.flagged = {11};
  const auto p = geometric_partition(m, 0.8);
  CHECK(p.inside.size() == 9);  // ceil(0.8 * 11)
  CHECK(p.inside.size() + p.outside.size() == 11);
  CHECK(p.excluded == std::vector<ProgramId>{11});
  for (auto id : p.inside) CHECK(p.distance[id] <= p.radius);
  for (auto id : p.beyond_radius()) CHECK(p.distance[id] > p.radius);
  CHECK_THROWS_AS(geometric_partition(m, 0.0), Error);
}

TEST_CASE("partition of random embeddings keeps the 80 percent rule") {
  for (std::size_t n : {99u, 100u, 1001u}) {
    const auto m = random_points(n, 4, n);
    const auto p = geometric_partition(m, 0.8);
    CHECK(p.inside.size() == static_cast<std::size_t>(std::ceil(0.8 * static_cast<double>(n) - 1e-9)));
    CHECK(std::abs(static_cast<double>(p.inside.size()) - 0.8 * static_cast<double>(n)) <= 1.0);
    for (auto id : p.inside) REQUIRE(p.distance[id] <= p.radius);
    for (auto id : p.outside) REQUIRE(p.distance[id] >= p.radius);
  }
}

TEST_CASE("coordinate median") {
  const auto m = line({5, 1, 3});
  CHECK(coordinate_median(m, std::vector<ProgramId>{0, 1, 2})[0] == 3.0f);
  CHECK(coordinate_median(m, std::vector<ProgramId>{0, 1})[0] == 3.0f);
  CHECK_THROWS_AS(coordinate_median(m, std::vector<ProgramId>{}), Error);
}

TEST_CASE("global pool") {
  const auto p = global_pool(1000, 5);
  CHECK(p.train.size() == 800);
  CHECK(p.test.size() == 200);
  CHECK(disjoint(p.train, p.test));
  CHECK(global_pool(1000, 5).train == p.train);
  CHECK(global_pool(1000, 6).train != p.train);
}

TEST_CASE("density splits are disjoint, size-exact and drawn from their pools") {
  const auto& u = testing::small_universe(3);
  const auto classes = partition_equivalence(u);
  std::vector<float> dk_sem(u.size()), dk_syn(u.size());
  std::mt19937_64 g(1);
  std::uniform_real_distribution<float> ud(0.01f, 2.0f);
  for (std::size_t i = 0; i < u.size(); ++i) {
    dk_sem[i] = ud(g);
    dk_syn[i] = ud(g);
  }
  const auto pool = global_pool(u.size(), 9);
  const SplitSizes sizes{.train = 500, .test = 100};
  const auto splits = build_density_splits({&classes, dk_sem, dk_syn}, pool, sizes, 3, 5);
  REQUIRE(splits.size() == 3);
  for (const auto& s : splits) {
    CHECK(s.train.size() == 500);
    CHECK(s.test.size() == 100);
    CHECK(disjoint(s.train, s.test));
    CHECK(subset(s.train, pool.train));
    CHECK(subset(s.test, pool.test));
  }
  CHECK(splits[0].name == "diverse");
  CHECK(splits[1].train != splits[2].train);
  const auto again = build_density_splits({&classes, dk_sem, dk_syn}, pool, sizes, 3, 5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(again[i].train == splits[i].train);
  CHECK_THROWS_AS(build_density_splits({&classes, dk_sem, dk_syn}, pool, {.train = u.size(), .test = 1}, 3, 5), Error);
}

TEST_CASE("diverse split covers more classes than a uniform sample") {
  const auto& u = testing::small_universe(3);
  const auto classes = partition_equivalence(u);
  const auto idx = classes.class_index(u.size());
  std::vector<ProgramId> all(u.size());
  std::iota(all.begin(), all.end(), 0);
  auto distinct = [&](const std::vector<ProgramId>& s) {
    std::set<std::uint32_t> c;
    for (auto id : s) c.insert(idx[id]);
    return c.size();
  };
  CHECK(distinct(diverse_sample(classes, 300, 1)) > distinct(uniform_sample(all, 300, 1)));
}

TEST_CASE("support splits") {
  const auto m = random_points(2000, 3, 4);
  const auto p = geometric_partition(m, 0.8);
  const auto splits = build_support_splits(p, {.train = 1000, .test = 200}, 8, 0.8);
  REQUIRE(splits.size() == 2);
  const auto& interp = splits[0];
  const auto& extrap = splits[1];
  CHECK(interp.name == "sem-interp");
  CHECK(extrap.name == "sem-extrap");
  CHECK(interp.train == extrap.train);
  CHECK(subset(interp.train, p.inside));
  CHECK(subset(interp.test, p.inside));
  CHECK(disjoint(interp.train, interp.test));
  CHECK(disjoint(extrap.train, extrap.test));
  CHECK(extrap.test.size() == 200);
  for (auto id : extrap.test) REQUIRE(distance(m.row(id), p.centroid) > p.radius);
  CHECK_THROWS_AS(build_support_splits(p, {.train = 1000, .test = 500}, 8, 0.8), Error);
}

TEST_CASE("split files round-trip and detect tampering") {
  testing::TempDir dir("splits");
  SplitSpec s;
  s.name = "diverse";
  s.strategy = "diverse";
  s.train_size = 3;
  s.test_size = 2;
  s.seed = 4;
  s.radius = 1.5f;
  s.train = {1, 5, 9};
  s.test = {2, 3};
  save_split(s, dir.path());
  const auto back = load_split(dir.path(), "diverse");
  CHECK(back.train == s.train);
  CHECK(back.test == s.test);
  CHECK(back.radius == s.radius);
  CHECK(back.strategy == "diverse");
  save_ids(std::vector<ProgramId>{1, 5, 10}, dir / "diverse.train.ids");
  try {
    load_split(dir.path(), "diverse");
    FAIL("expected hash mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::hash_mismatch);
  }
  CHECK_THROWS_AS(load_split(dir.path(), "missing"), Error);
}
