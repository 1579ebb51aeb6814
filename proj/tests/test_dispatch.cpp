#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "tempo/dispatch.hpp"
#include "tempo/error.hpp"

namespace tempo {
namespace {

constexpr double kMasked = -std::numeric_limits<double>::infinity();

TEST(Argmax, Examples) {
  EXPECT_EQ(argmax_action(std::vector<double>{0.2, 0.9, 0.1}), 1);
  EXPECT_EQ(argmax_action(std::vector<double>{0.5, 0.5}), 0);
  EXPECT_EQ(argmax_action(std::vector<double>{0.1, kMasked, kMasked}), 0);
  EXPECT_THROW(argmax_action(std::vector<double>{kMasked, kMasked}), ContractError);
  EXPECT_THROW(argmax_action(std::vector<double>{0.0, std::nan("")}), NumericError);
}

TEST(MaskedGreedy, Examples) {
  const std::vector<double> q{0.0, 0.1, 0.9, 0.5, 0.7};
  EXPECT_EQ(masked_greedy(q, 2), (std::vector<int>{2, 4}));
  EXPECT_EQ(masked_greedy(q, 10), (std::vector<int>{2, 4, 3, 1}));
  EXPECT_TRUE(masked_greedy(std::vector<double>{3.0}, 2).empty());
  EXPECT_EQ(masked_greedy(std::vector<double>{9.0, -1.0, -2.0}, 1), (std::vector<int>{1}));
  EXPECT_EQ(masked_greedy(std::vector<double>{0.0, 1.0, kMasked, 2.0}, 3), (std::vector<int>{3, 1}));
  EXPECT_THROW(masked_greedy(q, 0), ContractError);
}

TEST(MaskedGreedy, PropertiesOnRandomScores) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = std::uniform_int_distribution<int>(0, 40)(rng);
    const int m = std::uniform_int_distribution<int>(1, 8)(rng);
    std::vector<double> q(static_cast<std::size_t>(n) + 1);
    for (auto& v : q) v = g(rng);
    GreedyStats stats;
    const auto chosen = masked_greedy(q, m, &stats);
    ASSERT_EQ(chosen.size(), static_cast<std::size_t>(std::min(m, n)));
    ASSERT_EQ(std::set<int>(chosen.begin(), chosen.end()).size(), chosen.size());
    for (int c : chosen) ASSERT_NE(c, 0);
    ASSERT_EQ(stats.sorts, 1);
    ASSERT_LE(stats.mask_steps, m);

    // Constant shift leaves the selection unchanged.
    auto shifted = q;
    for (auto& v : shifted) v += 3.25;
    ASSERT_EQ(masked_greedy(shifted, m), chosen);

    // m = 1 is argmax over the task tokens.
    if (n > 0) {
      auto tasks_only = q;
      tasks_only[0] = kMasked;
      ASSERT_EQ(masked_greedy(q, 1), std::vector<int>{argmax_action(tasks_only)});
    }
  }
}

TEST(Jacobian, OneHotRows) {
  const std::vector<int> chosen{2, 4};
  const auto J = selection_jacobian_mask(5, chosen);
  ASSERT_EQ(J.rows(), 2U);
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_EQ(J(j, i), static_cast<int>(i) == chosen[j] ? 1.0 : 0.0);
    }
  }
}

TEST(Jacobian, MatchesFiniteDifferencesOfSelectedScores) {
  // The selected values a_j = q[chosen_j] are piecewise linear in q; away from
  // ties their derivative is exactly the one-hot mask.
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> q(12);
    for (auto& v : q) v = g(rng);
    GreedyStats stats;
    const auto chosen = masked_greedy(q, 3, &stats);
    ASSERT_FALSE(stats.boundary_tie);
    const auto J = selection_jacobian_mask(q.size(), chosen);
    const double h = 1e-7;
    for (std::size_t i = 0; i < q.size(); ++i) {
      auto plus = q, minus = q;
      plus[i] += h;
      minus[i] -= h;
      const auto cp = masked_greedy(plus, 3);
      const auto cm = masked_greedy(minus, 3);
      ASSERT_EQ(cp, chosen);
      ASSERT_EQ(cm, chosen);
      for (std::size_t j = 0; j < chosen.size(); ++j) {
        const double fd = (plus[static_cast<std::size_t>(cp[j])] - minus[static_cast<std::size_t>(cm[j])]) / (2 * h);
        EXPECT_NEAR(fd, J(j, i), 1e-6);
      }
    }
  }
}

TEST(Jacobian, PerturbationStability) {
  const std::vector<double> q{0.0, 0.1, 0.9, 0.5, 0.7};
  const auto chosen = masked_greedy(q, 2);
  auto p = q;
  p[3] += 0.15;  // gap to the last chosen score is 0.2
  EXPECT_EQ(masked_greedy(p, 2), chosen);
  p = q;
  p[4] += 5.0;
  const auto moved = masked_greedy(p, 2);
  EXPECT_EQ(std::set<int>(chosen.begin(), chosen.end()), std::set<int>(moved.begin(), moved.end()));
}

TEST(Jacobian, BoundaryTieFlagged) {
  GreedyStats stats;
  masked_greedy(std::vector<double>{0.0, 0.5, 0.5, 0.1}, 1, &stats);
  EXPECT_TRUE(stats.boundary_tie);
}

TEST(Mitigation, TriggerAndRevert) {
  MitigationState st;
  EXPECT_DOUBLE_EQ(update_mitigation(st, 0.10), 0.10);
  EXPECT_DOUBLE_EQ(update_mitigation(st, 0.35), 0.05);
  EXPECT_TRUE(st.active);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(update_mitigation(st, 0.10), 0.05) << i;
  EXPECT_DOUBLE_EQ(update_mitigation(st, 0.10), 0.10);
  EXPECT_FALSE(st.active);
  EXPECT_DOUBLE_EQ(update_mitigation(st, 0.30), 0.10);  // threshold itself does not trigger
}

TEST(Mitigation, CalmStreakResetsOnSpike) {
  MitigationState st;
  update_mitigation(st, 0.9);
  for (int i = 0; i < 4; ++i) update_mitigation(st, 0.0);
  EXPECT_DOUBLE_EQ(update_mitigation(st, 0.5), 0.05);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(update_mitigation(st, 0.0), 0.05);
  EXPECT_DOUBLE_EQ(update_mitigation(st, 0.0), 0.10);
}

TEST(Mitigation, NoOscillationOnRandomSequences) {
  // Once burst mode ends it stayed calm for h ticks; a mode switch back to
  // nominal therefore never happens within h ticks of the last trigger.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    MitigationState st;
    int last_trigger = -1000;
    bool prev_active = false;
    for (int t = 0; t < 300; ++t) {
      const double p = u(rng) < 0.15 ? 0.31 + 0.5 * u(rng) : 0.3 * u(rng);
      update_mitigation(st, p);
      if (p > st.cfg.tau_p) last_trigger = t;
      if (prev_active && !st.active) ASSERT_GE(t - last_trigger, st.cfg.hysteresis);
      prev_active = st.active;
    }
  }
}

TEST(Mitigation, EffectiveK) {
  EXPECT_EQ(effective_k(0.05, 25), 1);
  EXPECT_EQ(effective_k(0.10, 25), 2);
  EXPECT_EQ(effective_k(0.01, 8), 1);
}

TEST(Mitigation, Validation) {
  MitigationConfig c;
  EXPECT_NO_THROW(validate_mitigation(c));
  c.alpha_burst = 0.2;
  EXPECT_THROW(validate_mitigation(c), ContractError);
  c = MitigationConfig{};
  c.tau_p = 1.0;
  EXPECT_THROW(validate_mitigation(c), ContractError);
}

}  // namespace
}  // namespace tempo
