#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "tempo/sim.hpp"

namespace tempo::testing {

inline TaskSpec task(int id, Tick period, Tick wcet, Tick deadline = 0, bool critical = false) {
  return TaskSpec{id, period, wcet, deadline > 0 ? deadline : period, critical};
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("tempo_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Uniformly random valid action: each core independently idles or takes a
// distinct active task.
class RandomValidPolicy final : public Policy {
 public:
  explicit RandomValidPolicy(std::uint64_t seed) : rng_(seed) {}
  ActionSet act(const SimState& state) override {
    std::vector<int> ids;
    for (const auto& j : state.jobs) ids.push_back(j.task_id);
    std::shuffle(ids.begin(), ids.end(), rng_);
    ActionSet a = ActionSet::idle(state.cores);
    std::size_t next = 0;
    for (auto& slot : a.cores) {
      if (next < ids.size() && std::bernoulli_distribution(0.8)(rng_)) slot = ids[next++];
    }
    return a;
  }
  std::string name() const override { return "random-valid"; }

 private:
  std::mt19937_64 rng_;
};

// Rebuilds per-tick rewards from the event stream alone. Execution is
// inferred from start/preempt/complete/miss events; remaining work and the
// migration shift are tracked independently of the simulator state.
inline std::vector<double> recount_rewards(const Trace& trace, const RewardConfig& cfg) {
  struct Live {
    Tick deadline = 0;  // unshifted absolute deadline
    Tick rel_deadline = 0;
    Tick remaining = 0;
    Tick shift = 0;
  };
  std::map<int, Live> live;
  std::set<int> running;
  const auto& ev = trace.events;
  std::size_t i = 0;
  auto take = [&](EventKind kind, Tick t) {
    return i < ev.size() && ev[i].kind == kind && ev[i].t == t;
  };
  auto release = [&](const TraceEvent& e) { live[e.task_id] = Live{e.deadline, e.rel_deadline, e.remaining, 0}; };
  while (take(EventKind::kRelease, 0)) release(ev[i++]);

  std::vector<double> rewards;
  for (Tick t = 0; t < trace.horizon; ++t) {
    const Tick t1 = t + 1;
    int migrations = 0;
    while (take(EventKind::kPreempt, t)) running.erase(ev[i++].task_id);
    while (take(EventKind::kStart, t) || take(EventKind::kMigrate, t)) {
      const auto& e = ev[i++];
      running.insert(e.task_id);
      if (e.kind == EventKind::kMigrate) {
        live.at(e.task_id).shift += cfg.delta;
        ++migrations;
      }
    }
    for (int id : running) live.at(id).remaining -= 1;

    double r = 0.0;
    while (take(EventKind::kComplete, t1)) {
      const auto& e = ev[i++];
      const Live& j = live.at(e.task_id);
      if (j.remaining != 0) return {};  // the trace contradicts the inferred execution
      r += 1.0;
      if (cfg.scheme == RewardScheme::kR2EarlyBonus) {
        r += cfg.r2_coeff * static_cast<double>(j.deadline - j.shift - t1) / static_cast<double>(j.rel_deadline);
      }
      live.erase(e.task_id);
      running.erase(e.task_id);
    }
    if (cfg.scheme == RewardScheme::kR3SlackSensitive) {
      for (const auto& [id, j] : live) {
        const Tick s = (j.deadline - j.shift - t1) - j.remaining;
        if (s < 0) r -= cfg.eta * static_cast<double>(-s);
      }
    }
    while (take(EventKind::kMiss, t1)) {
      const auto& e = ev[i++];
      const Live& j = live.at(e.task_id);
      r -= 1.0;
      if (cfg.scheme == RewardScheme::kR1Lateness) r -= cfg.r1_coeff * static_cast<double>(j.remaining);
      live.erase(e.task_id);
      running.erase(e.task_id);
    }
    r -= cfg.lambda * static_cast<double>(migrations);
    rewards.push_back(r);
    while (take(EventKind::kRelease, t1)) {
      // One-shot jobs carry the shifted deadline already (shift 0 at release).
      release(ev[i++]);
    }
  }
  if (i != ev.size()) return {};
  return rewards;
}

}  // namespace tempo::testing
