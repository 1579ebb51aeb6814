#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "tempo/encoder.hpp"
#include "tempo/error.hpp"
#include "tempo/urgency.hpp"

namespace tempo {
namespace {

using testing::task;

QuantizerConfig uniform(int Q, double delta) {
  QuantizerConfig c;
  c.Q = Q;
  c.delta = delta;
  return resolve_quantizer(c, {});
}

TEST(Quantize, UniformExamples) {
  EXPECT_EQ(quantize(0, uniform(8, 2.0)), 0);
  EXPECT_EQ(quantize(7, uniform(8, 2.0)), 3);
  EXPECT_EQ(quantize(10 * 2 * 8, uniform(8, 2.0)), 7);
  EXPECT_EQ(quantize(-5, uniform(8, 2.0)), 0);
}

TEST(Quantize, UniformMatchesClipFloor) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10000; ++i) {
    const int Q = std::uniform_int_distribution<int>(2, 256)(rng);
    const double delta = std::uniform_real_distribution<double>(0.1, 20.0)(rng);
    const Tick s = std::uniform_int_distribution<Tick>(-100, 5000)(rng);
    const double expect = std::clamp(std::floor(static_cast<double>(s) / delta), 0.0, Q - 1.0);
    ASSERT_EQ(quantize(s, uniform(Q, delta)), static_cast<int>(expect));
  }
}

TEST(Quantize, MonotoneForEveryScheme) {
  const TaskSet tasks{task(1, 40, 5), task(2, 100, 20), task(3, 250, 30)};
  for (auto scheme : {BinScheme::kUniform, BinScheme::kLogSpaced, BinScheme::kKMeans}) {
    QuantizerConfig c;
    c.Q = 16;
    c.scheme = scheme;
    const auto q = resolve_quantizer(c, tasks);
    int prev = quantize(-50, q);
    for (Tick s = -49; s <= 600; ++s) {
      const int b = quantize(s, q);
      ASSERT_GE(b, prev) << to_string(scheme) << " s=" << s;
      ASSERT_GE(b, 0);
      ASSERT_LT(b, c.Q);
      prev = b;
    }
  }
}

TEST(Quantize, LogSpacedIsFinerNearZero) {
  QuantizerConfig c;
  c.Q = 16;
  c.scheme = BinScheme::kLogSpaced;
  c.s_max = 1000;
  const auto q = resolve_quantizer(c, {});
  EXPECT_EQ(quantize(0, q), 0);
  EXPECT_EQ(quantize(1000, q), 15);
  EXPECT_NE(quantize(1, q), quantize(4, q));
  EXPECT_EQ(quantize(900, q), quantize(1000, q));
}

TEST(Quantize, ReserveKeepsTopBinForLongSlack) {
  QuantizerConfig c;
  c.Q = 8;
  c.delta = 1.0;
  c.reserve = true;
  c.reserve_threshold = 100;
  const auto q = resolve_quantizer(c, {});
  EXPECT_EQ(quantize(99, q), 6);
  EXPECT_EQ(quantize(100, q), 7);
  EXPECT_EQ(quantize(3, q), 3);
}

TEST(Quantize, InvalidConfigs) {
  QuantizerConfig c;
  c.Q = 1;
  c.delta = 1;
  EXPECT_THROW(resolve_quantizer(c, {}), ContractError);
  c.Q = 4;
  c.delta = 0;
  EXPECT_THROW(resolve_quantizer(c, {}), ContractError);
  EXPECT_THROW(parse_bin_scheme("cubic"), ContractError);
}

TEST(Quantize, ResolveDefaultsFromPeriods) {
  QuantizerConfig c;
  c.Q = 10;
  const auto q = resolve_quantizer(c, TaskSet{task(1, 50, 1), task(2, 200, 1)});
  EXPECT_DOUBLE_EQ(q.s_max, 200.0);
  EXPECT_DOUBLE_EQ(q.delta, 20.0);
}

TEST(KMeans, TwoClusters) {
  std::vector<double> xs(50, 0.0);
  xs.insert(xs.end(), 50, 100.0);
  const auto r = fit_kmeans_bins(xs, 2, 3);
  ASSERT_EQ(r.centers.size(), 2U);
  EXPECT_NEAR(r.centers[0], 0.0, 1e-9);
  EXPECT_NEAR(r.centers[1], 100.0, 1e-9);
}

TEST(KMeans, DistinctValuesBecomeCenters) {
  const std::vector<double> xs{5, 1, 9, 1, 5, 9, 3};
  const auto r = fit_kmeans_bins(xs, 4, 1);
  EXPECT_EQ(r.centers, (std::vector<double>{1, 3, 5, 9}));
  EXPECT_FALSE(r.degenerate);
}

TEST(KMeans, DegenerateFlagged) {
  const std::vector<double> xs(10, 4.0);
  const auto r = fit_kmeans_bins(xs, 3, 1);
  EXPECT_TRUE(r.degenerate);
}

TEST(KMeans, InertiaNeverIncreases) {
  std::mt19937_64 rng(4);
  std::vector<double> xs;
  for (int i = 0; i < 500; ++i) xs.push_back(std::exponential_distribution<double>(0.05)(rng));
  const auto r = fit_kmeans_bins(xs, 8, 2);
  for (std::size_t i = 1; i < r.inertia.size(); ++i) EXPECT_LE(r.inertia[i], r.inertia[i - 1] + 1e-9);
  EXPECT_TRUE(std::is_sorted(r.centers.begin(), r.centers.end()));
}

TEST(KMeans, NearestCenterTiesGoLow) {
  QuantizerConfig c;
  c.Q = 4;
  c.scheme = BinScheme::kKMeans;
  c.delta = 1;
  c.centers = {0, 10, 20};
  EXPECT_EQ(quantize(5, c), 0);
  EXPECT_EQ(quantize(6, c), 1);
  EXPECT_EQ(quantize(100, c), 2);
}

JobInstance job(int id, Tick deadline, Tick remaining, Tick wcet = 10, Tick period = 50) {
  JobInstance j;
  j.task_id = id;
  j.abs_deadline = deadline;
  j.remaining = remaining;
  j.wcet = wcet;
  j.period = period;
  j.rel_deadline = period;
  return j;
}

TEST(ShortSlack, Fraction) {
  std::vector<JobInstance> jobs;
  for (int i = 0; i < 10; ++i) jobs.push_back(job(i + 1, 100, 1));
  EXPECT_DOUBLE_EQ(short_slack_fraction(jobs, 0, 5.0), 0.0);
  for (int i = 0; i < 3; ++i) jobs[static_cast<std::size_t>(i)].abs_deadline = 3;
  EXPECT_DOUBLE_EQ(short_slack_fraction(jobs, 0, 5.0), 0.3);
  jobs[0].abs_deadline = 6;  // slack exactly 5
  EXPECT_DOUBLE_EQ(short_slack_fraction(jobs, 0, 5.0), 0.2);
  EXPECT_DOUBLE_EQ(short_slack_fraction({}, 0, 5.0), 0.0);
}

num::ParamStore tokenizer_params(int Q, int d, std::uint64_t seed) {
  EncoderConfig enc;
  enc.d = d;
  QuantizerConfig q;
  q.Q = Q;
  q.delta = 1;
  return init_params(enc, resolve_quantizer(q, {}), seed);
}

TEST(Tokenize, IdleOnlyWhenNoJobs) {
  const auto params = tokenizer_params(8, 16, 1);
  auto s = make_initial_state({task(1, 10, 1)}, 1);
  s.jobs.clear();
  const auto b = tokenize(s, params, uniform(8, 1.0));
  ASSERT_EQ(b.rows(), 1U);
  EXPECT_TRUE(b.valid[0]);
  EXPECT_EQ(b.task_id[0], kIdle);
  EXPECT_EQ(b.X.cols(), 16U);
}

TEST(Tokenize, PaddingRowsInvalid) {
  const auto params = tokenizer_params(8, 16, 1);
  const auto s = make_initial_state({task(1, 10, 1), task(2, 10, 2)}, 1);
  const auto b = tokenize(s, params, uniform(8, 1.0), 6);
  ASSERT_EQ(b.rows(), 6U);
  EXPECT_EQ(std::count(b.valid.begin(), b.valid.end(), 1), 3);
  for (std::size_t r = 3; r < 6; ++r) EXPECT_EQ(b.task_id[r], -1);
}

TEST(Tokenize, IdenticalFeaturesGiveIdenticalRows) {
  const auto params = tokenizer_params(8, 16, 2);
  const auto s = make_initial_state({task(1, 10, 3), task(2, 10, 3)}, 1);
  const auto b = tokenize(s, params, uniform(8, 1.0));
  for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(b.X(1, c), b.X(2, c));
}

TEST(Tokenize, PermutingJobsPermutesRows) {
  const auto params = tokenizer_params(8, 16, 3);
  const auto s = make_initial_state({task(1, 10, 3), task(2, 17, 5, 12), task(3, 30, 2)}, 1);
  auto r = s;
  std::reverse(r.jobs.begin(), r.jobs.end());
  const auto a = tokenize(s, params, uniform(8, 2.0));
  const auto b = tokenize(r, params, uniform(8, 2.0));
  for (std::size_t c = 0; c < 16; ++c) {
    EXPECT_EQ(a.X(0, c), b.X(0, c));
    for (std::size_t i = 1; i <= 3; ++i) EXPECT_EQ(a.X(i, c), b.X(4 - i, c));
  }
}

TEST(Tokenize, MissingParamsIsContractError) {
  num::ParamStore empty;
  const auto s = make_initial_state({task(1, 10, 1)}, 1);
  EXPECT_THROW(tokenize(s, empty, uniform(8, 1.0)), ContractError);
}

TEST(Pack, ConcatenatesWithOffsets) {
  std::vector<JobInstance> one{job(1, 20, 3)};
  std::vector<JobInstance> two{job(1, 20, 3), job(2, 40, 5)};
  const std::vector<TokenBatch> parts{make_token_batch(0, one, uniform(8, 5.0)),
                                      make_token_batch(0, two, uniform(8, 5.0), 4)};
  const auto p = pack(parts);
  EXPECT_EQ(p.samples(), 2U);
  EXPECT_EQ(p.offsets, (std::vector<std::size_t>{0, 2, 6}));
  EXPECT_EQ(p.sample_rows(1), 4U);
  EXPECT_EQ(p.task_id[2], kIdle);
}

}  // namespace
}  // namespace tempo
