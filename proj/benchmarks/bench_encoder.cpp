#include <benchmark/benchmark.h>

#include <random>

#include "tempo/encoder.hpp"
#include "tempo/urgency.hpp"

namespace {

using namespace tempo;

std::vector<JobInstance> jobs_for(int n) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(n));
  std::vector<JobInstance> jobs;
  for (int i = 0; i < n; ++i) {
    JobInstance j;
    j.task_id = i + 1;
    j.period = std::uniform_int_distribution<Tick>(10, 200)(rng);
    j.rel_deadline = j.period;
    j.wcet = std::uniform_int_distribution<Tick>(1, j.period / 2)(rng);
    j.remaining = j.wcet;
    j.abs_deadline = std::uniform_int_distribution<Tick>(j.remaining, j.period)(rng);
    jobs.push_back(j);
  }
  return jobs;
}

void forward_bench(benchmark::State& state, const char* sparse) {
  const int n = static_cast<int>(state.range(0));
  QuantizerConfig q;
  q.Q = 128;
  q.delta = 2.0;
  q = resolve_quantizer(q, {});
  EncoderConfig enc;
  enc.layers = 2;
  enc.heads = 4;
  enc.d = 32;
  enc.sparse = parse_sparse(sparse);
  const auto params = init_params(enc, q, 1);
  const auto batch = make_token_batch(0, jobs_for(n), q);
  for (auto _ : state) benchmark::DoNotOptimize(q_scores(params, batch, enc));
  state.SetComplexityN(n);
}

void BM_ForwardDense(benchmark::State& state) { forward_bench(state, "dense"); }
void BM_ForwardSparse(benchmark::State& state) { forward_bench(state, "auto"); }

BENCHMARK(BM_ForwardDense)->RangeMultiplier(2)->Range(16, 256)->Complexity()->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForwardSparse)->RangeMultiplier(2)->Range(16, 256)->Complexity()->Unit(benchmark::kMillisecond);

}  // namespace
