#include <benchmark/benchmark.h>

#include <random>

#include "tempo/dispatch.hpp"

namespace {

// Theta(N log N + m): the sort dominates.
void BM_MaskedGreedy(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const int m = static_cast<int>(state.range(1));
  std::mt19937_64 rng(n);
  std::normal_distribution<double> g;
  std::vector<double> q(n + 1);
  for (auto& v : q) v = g(rng);
  for (auto _ : state) benchmark::DoNotOptimize(tempo::masked_greedy(q, m));
  state.SetComplexityN(static_cast<benchmark::IterationCount>(n));
}

BENCHMARK(BM_MaskedGreedy)->ArgsProduct({{64, 256, 1024, 4096}, {1, 8}})->Complexity(benchmark::oNLogN);

}  // namespace
