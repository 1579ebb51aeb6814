#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "tempo/error.hpp"
#include "tempo/taskmodel.hpp"

namespace tempo {
namespace {

using testing::task;

TEST(Utilization, SumsRatios) {
  EXPECT_DOUBLE_EQ(utilization(TaskSet{task(1, 4, 1), task(2, 8, 2)}), 0.5);
  EXPECT_DOUBLE_EQ(utilization(TaskSet{task(1, 4, 4)}), 1.0);
  EXPECT_DOUBLE_EQ(utilization(TaskSet{TaskSpec{1, 10, 13, 10, false}}), 1.3);
}

TEST(Utilization, EmptySetIsDomainError) { EXPECT_THROW(utilization(TaskSet{}), DomainError); }

TEST(Slack, Formula) {
  JobInstance j;
  j.abs_deadline = 100;
  j.remaining = 1;
  EXPECT_EQ(slack(j, 0), 99);
  j.abs_deadline = 2;
  j.remaining = 2;
  EXPECT_EQ(slack(j, 0), 0);
  j.abs_deadline = 5;
  j.remaining = 3;
  EXPECT_EQ(slack(j, 4), -2);
}

TEST(Slack, UsesShiftedDeadline) {
  JobInstance j;
  j.abs_deadline = 20;
  j.deadline_shift = 3;
  j.remaining = 2;
  EXPECT_EQ(slack(j, 5), 10);
}

TEST(Validate, RejectsBrokenInvariants) {
  EXPECT_NO_THROW(validate_taskset(TaskSet{task(1, 10, 2), task(2, 20, 5, 15)}));
  EXPECT_THROW(validate_taskset(TaskSet{TaskSpec{1, 0, 1, 1, false}}), ContractError);
  EXPECT_THROW(validate_taskset(TaskSet{TaskSpec{1, 10, 0, 10, false}}), ContractError);
  EXPECT_THROW(validate_taskset(TaskSet{TaskSpec{1, 10, 2, 11, false}}), ContractError);
  EXPECT_THROW(validate_taskset(TaskSet{task(1, 10, 2), task(1, 20, 2)}), ContractError);
}

TEST(Hyperperiod, Lcm) {
  EXPECT_EQ(hyperperiod(TaskSet{task(1, 4, 1), task(2, 6, 1), task(3, 10, 1)}), 60);
}

TEST(Generator, Deterministic) {
  TaskSetConfig cfg;
  cfg.n_tasks = 3;
  cfg.target_utilization = 0.9;
  cfg.seed = 7;
  EXPECT_EQ(generate_taskset(cfg), generate_taskset(cfg));
}

TEST(Generator, HitsUtilizationWithinTolerance) {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    TaskSetConfig cfg;
    cfg.n_tasks = 5;
    cfg.target_utilization = 0.8;
    cfg.seed = seed;
    const auto tasks = generate_taskset(cfg);
    ASSERT_EQ(tasks.size(), 5U);
    EXPECT_NO_THROW(validate_taskset(tasks));
    const double u = utilization(tasks);
    EXPECT_GE(u, 0.78) << "seed " << seed;
    EXPECT_LE(u, 0.82) << "seed " << seed;
  }
}

TEST(Generator, ParetoDeadlinesRespectScale) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    TaskSetConfig cfg;
    cfg.n_tasks = 6;
    cfg.target_utilization = 0.6;
    cfg.deadline_mode = DeadlineMode::kPareto;
    cfg.pareto_alpha = 2.0;
    cfg.pareto_xmin = 10.0;
    cfg.period_min = 20;
    cfg.period_max = 200;
    cfg.seed = seed;
    for (const auto& t : generate_taskset(cfg)) {
      EXPECT_GE(t.deadline, 10);
      EXPECT_LE(t.deadline, t.period);
    }
  }
}

TEST(Generator, InfeasibleBudgetIsGenerationError) {
  TaskSetConfig cfg;
  cfg.n_tasks = 20;
  cfg.target_utilization = 0.1;
  cfg.period_min = 5;
  cfg.period_max = 5;
  EXPECT_THROW(generate_taskset(cfg), GenerationError);
}

TEST(Pareto, SampleMeanMatchesClosedForm) {
  // E[X] = alpha x_min / (alpha - 1) for alpha > 1.
  std::mt19937_64 rng(3);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = sample_pareto(3.0, 10.0, rng);
    ASSERT_GE(x, 10.0);
    sum += x;
  }
  EXPECT_NEAR(sum / n, 15.0, 0.15);
}

TEST(TaskSetJson, RoundTrip) {
  TaskSetConfig cfg;
  cfg.n_tasks = 8;
  cfg.critical_fraction = 0.5;
  cfg.seed = 11;
  const auto tasks = generate_taskset(cfg);
  testing::TempDir dir("ts");
  save_taskset(tasks, dir.path() / "s.json");
  EXPECT_EQ(load_taskset(dir.path() / "s.json"), tasks);
  EXPECT_EQ(taskset_from_json(taskset_to_json(tasks)), tasks);
}

TEST(TaskSetJson, RejectsZeroPeriodAndDuplicates) {
  EXPECT_THROW(taskset_from_json(R"({"tasks":[{"id":1,"period":0,"wcet":1,"deadline":1}]})"), ParseError);
  EXPECT_THROW(taskset_from_json(R"({"tasks":[{"id":1,"period":5,"wcet":1,"deadline":5},
                                              {"id":1,"period":6,"wcet":1,"deadline":6}]})"),
               ParseError);
  EXPECT_THROW(taskset_from_json("{\"tasks\": [ {\"id\": 1,"), ParseError);
  EXPECT_THROW(taskset_from_json(R"({"tasks":[{"id":1,"period":"x","wcet":1,"deadline":1}]})"), ParseError);
}

TEST(TaskSetJson, ErrorsCarryLocation) {
  try {
    taskset_from_json(R"({"tasks":[{"id":1,"period":5,"wcet":1,"deadline":5},{"id":2,"period":5,"deadline":5}]})");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("tasks[1].wcet"), std::string::npos) << e.what();
  }
}

TEST(AtomicWrite, ReplacesContentsWithoutTempLeftovers) {
  testing::TempDir dir("atomic");
  const auto p = dir.path() / "f.txt";
  write_file_atomic(p, "one");
  write_file_atomic(p, "two");
  EXPECT_EQ(read_file(p), "two");
  int entries = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path())) ++entries;
  EXPECT_EQ(entries, 1);
}

}  // namespace
}  // namespace tempo
