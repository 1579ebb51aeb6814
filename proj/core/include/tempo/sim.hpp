#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tempo/taskmodel.hpp"

namespace tempo {

enum class RewardScheme { kBinary, kR1Lateness, kR2EarlyBonus, kR3SlackSensitive };

std::string_view to_string(RewardScheme scheme);
RewardScheme parse_reward_scheme(std::string_view text);

struct RewardConfig {
  RewardScheme scheme = RewardScheme::kBinary;
  double eta = 0.1;          // R3 weight on negative slack
  double lambda = 0.1;       // per-migration penalty
  Tick delta = 1;            // ticks of slack lost per migration
  double r1_coeff = 0.01;    // R1: -r1_coeff * lateness at a miss
  double r2_coeff = 0.1;     // R2: +r2_coeff * (d - t_comp) / D at completion

  friend bool operator==(const RewardConfig&, const RewardConfig&) = default;
};

// One entry per core: a task id or kIdle.
struct ActionSet {
  std::vector<int> cores;

  static ActionSet idle(int m) { return ActionSet{std::vector<int>(static_cast<std::size_t>(m), kIdle)}; }
  friend bool operator==(const ActionSet&, const ActionSet&) = default;
};

// Environment snapshot. Copyable; the task set and the one-shot release
// schedule are shared immutably between copies.
struct SimState {
  Tick clock = 0;
  int cores = 1;
  // Releases are suppressed at or after the horizon (0 disables the limit).
  Tick horizon = 0;
  std::vector<JobInstance> jobs;
  // Task executed on each core during the most recent tick (kIdle if none).
  std::vector<int> core_map;
  // Last core each task ran on; absent until the task first executes.
  std::map<int, int> last_core;
  std::shared_ptr<const TaskSet> tasks;
  std::shared_ptr<const std::vector<JobInstance>> one_shots;  // sorted by release
  std::size_t next_one_shot = 0;
  int next_synthetic_id = 1;

  const JobInstance* find_job(int task_id) const;
};

SimState make_initial_state(TaskSet tasks, int cores, Tick horizon = 0);

enum class EventKind { kRelease, kStart, kPreempt, kComplete, kMiss, kMigrate };

std::string_view to_string(EventKind kind);
EventKind parse_event_kind(std::string_view text);

struct TraceEvent {
  Tick t = 0;
  int task_id = 0;
  EventKind kind = EventKind::kRelease;
  int core = -1;  // -1 when no core is involved
  // Job context (not part of the CSV): lets metrics and reward recounts work
  // from the event stream alone.
  std::int64_t instance = 0;
  Tick release = 0;
  Tick deadline = 0;
  Tick rel_deadline = 0;
  Tick remaining = 0;
  bool critical = false;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

struct Trace {
  Tick horizon = 0;
  std::vector<TraceEvent> events;
};

// CSV header: t,task_id,event,core
std::string trace_to_csv(const Trace& trace);
Trace trace_from_csv(std::string_view text);

struct StepResult {
  double reward = 0.0;
  int completions = 0;
  int misses = 0;
  int migrations = 0;
  std::vector<TraceEvent> events;
};

// Throws ContractError for wrong core count, duplicates, or inactive tasks.
void validate_action(const SimState& state, const ActionSet& action);

// Releases every job due at the current clock. Called once by
// make_initial_state; step() handles all later releases.
void release_due_jobs(SimState& state, std::vector<TraceEvent>* events);

// Advances one tick: migrations, execution, completions at t+1, misses at
// t+1 (job dropped after a single penalty), then releases at t+1.
StepResult step(SimState& state, const ActionSet& action, const RewardConfig& cfg);

struct BurstSpec {
  int count = 10;
  Tick interval = 20;
  Tick deadline = 10;
  Tick duration = 10000;
  Tick wcet = 1;
  // Offset of the first burst relative to the current clock.
  Tick start = 0;

  friend bool operator==(const BurstSpec&, const BurstSpec&) = default;
};

// Schedules one-shot jobs: `count` jobs every `interval` ticks over
// [clock + start, clock + start + duration). Returns the number scheduled.
std::size_t inject_burst(SimState& state, const BurstSpec& spec);

struct MetricsReport {
  double compliance_rate = 0.0;
  double avg_response_time = 0.0;
  double pitmd = 0.0;
  bool success_flag = true;
  double lateness_p95 = 0.0;
  std::int64_t jobs_released = 0;
  std::int64_t jobs_completed = 0;
  std::int64_t misses = 0;
  std::int64_t critical_released = 0;
  std::int64_t migrations = 0;
};

MetricsReport compute_metrics(const Trace& trace);
std::string metrics_to_json(const MetricsReport& report);

// Reference curve 1 - 1/U for U > 1, 0 otherwise.
double edf_reference_missrate(double utilization);
double approximation_ratio(double missrate_candidate, double missrate_reference);

class Policy {
 public:
  virtual ~Policy() = default;
  virtual ActionSet act(const SimState& state) = 0;
  virtual std::string name() const = 0;
};

class EpisodeAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpisodeConfig {
  int cores = 1;
  Tick horizon = 100;
  RewardConfig reward;
  std::vector<BurstSpec> bursts;
};

struct EpisodeResult {
  MetricsReport metrics;
  Trace trace;
  double total_reward = 0.0;
};

using StepObserver = std::function<void(const SimState& before, const ActionSet& action, const StepResult& result,
                                        const SimState& after)>;

EpisodeResult run_episode(const TaskSet& tasks, Policy& policy, const EpisodeConfig& cfg,
                          const StepObserver& observer = {});

}  // namespace tempo
