#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tempo {

// Discrete time. One tick is treated as one millisecond.
using Tick = std::int64_t;

// Token/action index reserved for "run nothing".
inline constexpr int kIdle = 0;

struct TaskSpec {
  int id = 0;
  Tick period = 0;
  Tick wcet = 0;
  Tick deadline = 0;  // relative, 0 < deadline <= period
  bool critical = false;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

using TaskSet = std::vector<TaskSpec>;

// A released job. `abs_deadline` is always release + rel_deadline; migrations
// accumulate `deadline_shift` instead of rewriting it.
struct JobInstance {
  int task_id = 0;
  std::int64_t instance = 0;
  Tick release = 0;
  Tick abs_deadline = 0;
  Tick remaining = 0;
  Tick wcet = 0;
  Tick period = 0;
  Tick rel_deadline = 0;
  Tick deadline_shift = 0;
  bool critical = false;
  std::optional<int> assigned_core;

  Tick effective_deadline() const { return abs_deadline - deadline_shift; }

  friend bool operator==(const JobInstance&, const JobInstance&) = default;
};

// Laxity s = (d - t) - c. Negative once the job can no longer finish on time.
Tick slack(const JobInstance& job, Tick t);

// Sum of C_i / P_i. Throws DomainError on an empty set.
double utilization(std::span<const TaskSpec> tasks);

// Throws ContractError naming the offending task when an invariant is broken.
void validate_taskset(std::span<const TaskSpec> tasks);

Tick hyperperiod(std::span<const TaskSpec> tasks);

enum class DeadlineMode { kImplicit, kPareto };

struct TaskSetConfig {
  int n_tasks = 5;
  double target_utilization = 0.8;
  Tick period_min = 10;
  Tick period_max = 100;
  // When non-empty, periods are drawn uniformly from this list instead.
  std::vector<Tick> period_choices;
  DeadlineMode deadline_mode = DeadlineMode::kImplicit;
  double pareto_alpha = 2.0;
  double pareto_xmin = 10.0;
  double critical_fraction = 0.0;
  std::uint64_t seed = 1;

  friend bool operator==(const TaskSetConfig&, const TaskSetConfig&) = default;
};

inline constexpr double kUtilizationTolerance = 0.02;

// UUniFast shares, C_i = round(u_i * P_i) clamped to [1, D_i], followed by a
// greedy repair pass until the set lands within kUtilizationTolerance.
TaskSet generate_taskset(const TaskSetConfig& cfg);

// Inverse-CDF Pareto(alpha, x_min) draw.
double sample_pareto(double alpha, double x_min, std::mt19937_64& rng);

// JSON: {"tasks":[{"id":1,"period":40,"wcet":10,"deadline":40,"critical":true}]}
std::string taskset_to_json(std::span<const TaskSpec> tasks);
TaskSet taskset_from_json(std::string_view text);
void save_taskset(std::span<const TaskSpec> tasks, const std::filesystem::path& path);
TaskSet load_taskset(const std::filesystem::path& path);

// Writes via a sibling temp file and rename so readers never see partial output.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace tempo
