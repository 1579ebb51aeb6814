#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "support.hpp"
#include "tempo/baselines.hpp"
#include "tempo/error.hpp"
#include "tempo/num/grad_check.hpp"
#include "tempo/trainer.hpp"

namespace tempo {
namespace {

using testing::task;

QuantizerConfig quant8() {
  QuantizerConfig q;
  q.Q = 8;
  q.delta = 4.0;
  return resolve_quantizer(q, {});
}

EncoderConfig tiny_encoder() {
  EncoderConfig e;
  e.layers = 1;
  e.heads = 2;
  e.d = 8;
  e.d_ff = 16;
  return e;
}

Transition transition(Tick clock, std::vector<JobInstance> jobs, std::vector<int> rows, double reward, bool done) {
  Transition t;
  t.state = Snapshot{clock, jobs};
  t.rows = std::move(rows);
  t.reward = reward;
  t.next = Snapshot{clock + 1, std::move(jobs)};
  t.done = done;
  return t;
}

std::vector<JobInstance> two_jobs() {
  auto s = make_initial_state({task(1, 20, 4), task(2, 30, 6)}, 2);
  return s.jobs;
}

TEST(Replay, FifoEviction) {
  ReplayBuffer buf(3);
  for (int i = 0; i < 5; ++i) buf.push(transition(i, {}, {}, i, false));
  ASSERT_EQ(buf.size(), 3U);
  EXPECT_DOUBLE_EQ(buf.at(0).reward, 2.0);
  EXPECT_DOUBLE_EQ(buf.at(2).reward, 4.0);
  EXPECT_THROW(buf.at(3), ContractError);
  EXPECT_THROW(ReplayBuffer(0), ContractError);
}

TEST(Replay, SamplesDistinctAndUniform) {
  ReplayBuffer buf(10);
  for (int i = 0; i < 10; ++i) buf.push(transition(i, {}, {}, i, false));
  std::mt19937_64 rng(1);
  std::map<double, int> counts;
  for (int k = 0; k < 5000; ++k) {
    const auto batch = buf.sample(4, rng);
    std::set<const Transition*> uniq(batch.begin(), batch.end());
    ASSERT_EQ(uniq.size(), 4U);
    for (const auto* t : batch) ++counts[t->reward];
  }
  for (const auto& [r, c] : counts) EXPECT_NEAR(c, 2000, 5 * std::sqrt(2000.0)) << r;
  EXPECT_THROW(buf.sample(11, rng), ContractError);
}

TEST(Epsilon, LinearSchedule) {
  ExplorationConfig c;
  c.eps0 = 1.0;
  c.eps_min = 0.1;
  c.decay_episodes = 10;
  EXPECT_DOUBLE_EQ(epsilon_at(c, 0), 1.0);
  EXPECT_NEAR(epsilon_at(c, 5), 0.55, 1e-12);
  EXPECT_DOUBLE_EQ(epsilon_at(c, 10), 0.1);
  EXPECT_DOUBLE_EQ(epsilon_at(c, 99), 0.1);
}

TEST(Explore, EpsilonOneIsUniform) {
  const auto s = make_initial_state({task(1, 10, 5), task(2, 10, 5), task(3, 10, 5)}, 1);
  const auto tokens = make_token_batch(s.clock, s.jobs, quant8());
  const std::vector<double> q{5.0, 1.0, 2.0, 3.0};
  std::mt19937_64 rng(7);
  std::map<int, int> counts;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto out = select_exploratory(q, tokens, 1, 1.0, 0.0, nullptr, rng);
    EXPECT_TRUE(out.explored);
    ++counts[out.rows.empty() ? 0 : out.rows[0]];
  }
  double chi2 = 0.0;
  for (int a = 0; a < 4; ++a) {
    const double e = n / 4.0;
    chi2 += (counts[a] - e) * (counts[a] - e) / e;
  }
  EXPECT_LT(chi2, 11.34);  // chi-square, 3 dof, p = 0.01
}

TEST(Explore, GreedyWithoutBonusIsArgmax) {
  const auto s = make_initial_state({task(1, 10, 5), task(2, 10, 5)}, 1);
  const auto tokens = make_token_batch(s.clock, s.jobs, quant8());
  std::mt19937_64 rng(1);
  for (const auto& q : {std::vector<double>{0.1, 0.5, 0.2}, std::vector<double>{0.9, 0.5, 0.2}}) {
    const auto out = select_exploratory(q, tokens, 1, 0.0, 0.0, nullptr, rng);
    const int a = argmax_action(q);
    EXPECT_EQ(out.rows, a == kIdle ? std::vector<int>{} : std::vector<int>{a});
  }
}

TEST(Explore, BonusPrefersUnvisitedAction) {
  // Tasks with different slack bins so the keys differ.
  const auto s = make_initial_state({task(1, 40, 2), task(2, 10, 2)}, 1);
  const auto tokens = make_token_batch(s.clock, s.jobs, quant8());
  const double inf = std::numeric_limits<double>::infinity();
  const std::vector<double> q{-inf, 1.0, 0.8};
  VisitCounter visits;
  for (int i = 0; i < 100; ++i) visits.increment(VisitCounter::key(tokens, 1));
  std::mt19937_64 rng(2);
  const auto out = select_exploratory(q, tokens, 1, 0.0, 0.5, &visits, rng);
  EXPECT_EQ(out.rows, std::vector<int>{2});  // 0.8 + 0.5 beats 1.0 + 0.05
  EXPECT_EQ(visits.count(VisitCounter::key(tokens, 2)), 1);
}

TEST(Explore, KeyIgnoresJobOrder) {
  auto s = make_initial_state({task(1, 40, 2), task(2, 10, 2)}, 1);
  const auto a = make_token_batch(s.clock, s.jobs, quant8());
  std::reverse(s.jobs.begin(), s.jobs.end());
  const auto b = make_token_batch(s.clock, s.jobs, quant8());
  EXPECT_EQ(VisitCounter::key(a, 1), VisitCounter::key(b, 2));
}

TEST(RowsToAction, MapsRowsToTaskIds) {
  const auto s = make_initial_state({task(4, 10, 1), task(9, 10, 1)}, 2);
  const std::vector<int> rows{2};
  EXPECT_EQ(rows_to_action(s, rows).cores, (std::vector<int>{9, kIdle}));
}

// Target net with a zero head and bias b answers b for every token.
num::ParamStore constant_q(double b) {
  auto p = init_params(tiny_encoder(), quant8(), 1);
  p.at("head.w").fill(0.0);
  p.at("head.b").fill(b);
  return p;
}

TEST(TdTargets, Examples) {
  const auto target = constant_q(2.0);
  const auto live = transition(0, two_jobs(), {1}, 1.0, false);
  const auto term = transition(0, two_jobs(), {1}, -1.0, true);
  const auto multi = transition(0, two_jobs(), {1, 2}, 1.0, false);
  const std::vector<const Transition*> batch{&live, &term, &multi};
  const auto y = td_targets(batch, target, tiny_encoder(), quant8(), 0.99);
  EXPECT_NEAR(y[0], 2.98, 1e-12);
  EXPECT_DOUBLE_EQ(y[1], -1.0);
  EXPECT_NEAR(y[2], 0.5 + 1.98, 1e-12);
  const auto y0 = td_targets(batch, target, tiny_encoder(), quant8(), 0.0);
  EXPECT_DOUBLE_EQ(y0[0], 1.0);
  EXPECT_DOUBLE_EQ(y0[1], -1.0);
  EXPECT_DOUBLE_EQ(y0[2], 0.5);
}

TEST(DqnLoss, ZeroAtTargetsAndQuadratic) {
  const auto params = init_params(tiny_encoder(), quant8(), 3);
  const auto a = transition(0, two_jobs(), {1}, 0.0, false);
  const auto b = transition(0, two_jobs(), {2}, 0.0, false);
  const std::vector<const Transition*> batch{&a, &b};
  const auto q = q_scores(params, make_token_batch(0, two_jobs(), quant8()), tiny_encoder());
  const std::vector<double> exact{q[1], q[2]};
  num::GradStore grads;
  EXPECT_NEAR(dqn_loss(batch, params, exact, tiny_encoder(), quant8(), &grads), 0.0, 1e-24);
  for (const auto& [name, g] : grads) {
    for (double v : g.data()) EXPECT_NEAR(v, 0.0, 1e-12) << name;
  }
  const std::vector<double> off{q[1] + 0.3, q[2] - 0.1};
  const std::vector<double> off2{q[1] + 0.6, q[2] - 0.2};
  const double l1 = dqn_loss(batch, params, off, tiny_encoder(), quant8(), nullptr);
  const double l2 = dqn_loss(batch, params, off2, tiny_encoder(), quant8(), nullptr);
  EXPECT_NEAR(l2, 4.0 * l1, 1e-12);
}

TEST(DqnLoss, GradientCheck) {
  const auto params = init_params(tiny_encoder(), quant8(), 4);
  const auto a = transition(0, two_jobs(), {1, 2}, 0.7, false);
  const auto b = transition(3, two_jobs(), {}, -1.0, false);
  const std::vector<const Transition*> batch{&a, &b};
  const std::vector<double> y{0.4, -0.9};
  num::GradStore grads;
  dqn_loss(batch, params, y, tiny_encoder(), quant8(), &grads);
  const auto r = num::grad_check(
      [&](const num::ParamStore& p) { return dqn_loss(batch, p, y, tiny_encoder(), quant8(), nullptr); }, params, grads);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param;
}

TrainSetup small_setup(int episodes) {
  TrainSetup s;
  s.tasks = {task(1, 6, 2), task(2, 9, 3), task(3, 12, 5)};
  s.cores = 1;
  s.enc = tiny_encoder();
  s.quant = quant8();
  s.train.episodes = episodes;
  s.train.horizon = 60;
  s.train.warmup = 30;
  s.train.batch_size = 8;
  s.train.train_interval = 2;
  s.explore.decay_episodes = 3;
  return s;
}

TEST(Train, ZeroEpisodesReturnsInitialParams) {
  const auto setup = small_setup(0);
  const auto init = init_params(setup.enc, setup.quant, 5);
  const auto r = train(setup, init);
  EXPECT_EQ(r.params, init);
  EXPECT_TRUE(r.curve.empty());
}

TEST(Train, DeterministicForFixedSeed) {
  const auto setup = small_setup(4);
  const auto init = init_params(setup.enc, setup.quant, 5);
  const auto a = train(setup, init);
  const auto b = train(setup, init);
  EXPECT_EQ(learning_curve_csv(a.curve), learning_curve_csv(b.curve));
  EXPECT_EQ(a.params, b.params);
  EXPECT_GT(a.updates, 0);
  EXPECT_EQ(a.env_steps, 4 * 60);
}

TEST(Train, DivergenceWritesCheckpoint) {
  auto setup = small_setup(2);
  setup.train.divergence_threshold = 1e-12;
  testing::TempDir dir("div");
  setup.divergence_checkpoint = dir.path() / "diverged.json";
  EXPECT_THROW(train(setup, init_params(setup.enc, setup.quant, 5)), TrainingDiverged);
  EXPECT_TRUE(std::filesystem::exists(*setup.divergence_checkpoint));
}

TEST(Train, ValidatesConfig) {
  auto setup = small_setup(1);
  setup.train.gamma = 1.0;
  EXPECT_THROW(train(setup, init_params(setup.enc, setup.quant, 5)), ContractError);
}

TEST(Bc, EmptySamplesLeaveParams) {
  const auto p = init_params(tiny_encoder(), quant8(), 6);
  EXPECT_EQ(bc_pretrain({}, p, tiny_encoder(), quant8(), BCConfig{}).params, p);
}

TEST(Bc, SingleStateConvergesToTeacher) {
  const std::vector<BCSample> data{BCSample{Snapshot{0, two_jobs()}, {2}}};
  BCConfig cfg;
  cfg.epochs = 200;
  cfg.adam.lr = 0.01;
  const auto r = bc_pretrain(data, init_params(tiny_encoder(), quant8(), 7), tiny_encoder(), quant8(), cfg);
  const auto q = q_scores(r.params, make_token_batch(0, two_jobs(), quant8()), tiny_encoder());
  EXPECT_EQ(argmax_action(q), 2);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
}

TEST(Bc, LossGradientCheck) {
  const std::vector<BCSample> data{BCSample{Snapshot{0, two_jobs()}, {2}}, BCSample{Snapshot{2, two_jobs()}, {0}}};
  const auto params = init_params(tiny_encoder(), quant8(), 8);
  num::GradStore grads;
  bc_loss(data, params, tiny_encoder(), quant8(), &grads);
  const auto r = num::grad_check(
      [&](const num::ParamStore& p) { return bc_loss(data, p, tiny_encoder(), quant8(), nullptr); }, params, grads);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param;
}

TEST(Bc, TeacherSamplesRecordChosenRows) {
  auto edf = make_policy(parse_policy("edf"));
  EpisodeConfig cfg;
  cfg.horizon = 20;
  const auto samples = collect_teacher_samples({task(1, 5, 1), task(2, 10, 3)}, *edf, cfg);
  ASSERT_EQ(samples.size(), 20U);
  for (const auto& s : samples) {
    ASSERT_EQ(s.rows.size(), 1U);
    if (s.state.jobs.empty()) {
      EXPECT_EQ(s.rows[0], kIdle);
    } else {
      Tick best = std::numeric_limits<Tick>::max();
      for (const auto& j : s.state.jobs) best = std::min(best, j.effective_deadline());
      EXPECT_EQ(s.state.jobs[static_cast<std::size_t>(s.rows[0] - 1)].effective_deadline(), best);
    }
  }
}

TEST(Checkpoint, RoundTrip) {
  testing::TempDir dir("ckpt");
  const auto p = init_params(tiny_encoder(), quant8(), 9);
  save_checkpoint(dir.path() / "c.json", p, tiny_encoder(), quant8(), R"({"a":1})");
  const auto cp = load_checkpoint(dir.path() / "c.json");
  EXPECT_EQ(cp.params, p);
  EXPECT_EQ(cp.enc, tiny_encoder());
  EXPECT_EQ(cp.quant, quant8());
  EXPECT_EQ(cp.config_hash.size(), 16U);
}

TEST(Agent, GreedyActionsAreValidOnMulticore) {
  AgentPolicy agent(init_params(tiny_encoder(), quant8(), 10), tiny_encoder(), quant8());
  agent.enable_mitigation(MitigationConfig{});
  EpisodeConfig cfg;
  cfg.cores = 2;
  cfg.horizon = 50;
  EXPECT_NO_THROW(run_episode({task(1, 5, 2), task(2, 7, 3), task(3, 11, 4)}, agent, cfg));
}

}  // namespace
}  // namespace tempo
