#include <benchmark/benchmark.h>

#include <numeric>
#include <random>

#include "progspace/evaluator.hpp"
#include "progspace/grammar.hpp"
#include "progspace/harness.hpp"
#include "progspace/manifolds.hpp"
#include "progspace/sampler.hpp"

using namespace progspace;

namespace {

const Ast& sample_program() {
  static const Ast a = parse("sin(((x*x)+exp((x/(x+x)))))");
  return a;
}

void BM_Enumerate(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Enumerator e(n);
  for (auto _ : state) {
    std::uint64_t count = 0;
    e.visit(n, 0, e.count(n), [&](const EnumeratedProgram&) { ++count; });
    benchmark::DoNotOptimize(count);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * e.count(n)));
}
BENCHMARK(BM_Enumerate)->Arg(4)->Arg(5);

void BM_EvalBatch(benchmark::State& state) {
  const auto grid = linspace(-10, 10, static_cast<std::size_t>(state.range(0)));
  std::vector<float> out(grid.size());
  BatchEvaluator be;
  for (auto _ : state) {
    be.evaluate(sample_program().prefix(), grid, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_EvalBatch)->Arg(64)->Arg(4096);

void BM_Validity(benchmark::State& state) {
  const auto a = parse("sqrt(log(x))");
  for (auto _ : state) benchmark::DoNotOptimize(check_validity(a, EvalDomain{}, 0));
}
BENCHMARK(BM_Validity);

void BM_Signature(benchmark::State& state) {
  const auto grid = linspace(-10, 10, 64);
  for (auto _ : state) benchmark::DoNotOptimize(signature(sample_program(), grid));
}
BENCHMARK(BM_Signature);

void BM_PqHash(benchmark::State& state) {
  for (auto _ : state) {
    const auto g = pq_grams(sample_program());
    benchmark::DoNotOptimize(hash_profile(g, 65536, 1));
  }
}
BENCHMARK(BM_PqHash);

void BM_KnnExact(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  EmbeddingMatrix m(Manifold::semantic, n, 32);
  std::mt19937_64 g(1);
  std::normal_distribution<float> nd;
  for (auto& v : m.data) v = nd(g);
  for (auto _ : state) benchmark::DoNotOptimize(knn_mean_distance(m, KnnOptions{.k = 5}));
}
BENCHMARK(BM_KnnExact)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_FunctionalMatch(benchmark::State& state) {
  const auto t = sample_spec(sample_program(), EvalDomain{}, 0);
  for (auto _ : state) benchmark::DoNotOptimize(functional_match("sin(((x*x)+exp((x/(x+x)))))", t));
}
BENCHMARK(BM_FunctionalMatch);

void BM_PassAtK(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(pass_at_k(200, 37, 10));
}
BENCHMARK(BM_PassAtK);

}  // namespace
BENCHMARK_MAIN();
