#include "tempo/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tempo/error.hpp"

namespace tempo {

std::string_view to_string(RewardScheme scheme) {
  switch (scheme) {
    case RewardScheme::kBinary: return "binary";
    case RewardScheme::kR1Lateness: return "r1";
    case RewardScheme::kR2EarlyBonus: return "r2";
    case RewardScheme::kR3SlackSensitive: return "r3";
  }
  return "binary";
}

RewardScheme parse_reward_scheme(std::string_view text) {
  if (text == "binary") return RewardScheme::kBinary;
  if (text == "r1") return RewardScheme::kR1Lateness;
  if (text == "r2") return RewardScheme::kR2EarlyBonus;
  if (text == "r3") return RewardScheme::kR3SlackSensitive;
  throw ParseError("unknown reward scheme '" + std::string(text) + "' (binary|r1|r2|r3)");
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::kRelease: return "release";
    case EventKind::kStart: return "start";
    case EventKind::kPreempt: return "preempt";
    case EventKind::kComplete: return "complete";
    case EventKind::kMiss: return "miss";
    case EventKind::kMigrate: return "migrate";
  }
  return "release";
}

EventKind parse_event_kind(std::string_view text) {
  for (auto kind : {EventKind::kRelease, EventKind::kStart, EventKind::kPreempt, EventKind::kComplete,
                    EventKind::kMiss, EventKind::kMigrate}) {
    if (to_string(kind) == text) return kind;
  }
  throw ParseError("unknown trace event '" + std::string(text) + "'");
}

const JobInstance* SimState::find_job(int task_id) const {
  for (const auto& job : jobs) {
    if (job.task_id == task_id) return &job;
  }
  return nullptr;
}

namespace {

JobInstance* find_job_mut(SimState& state, int task_id) {
  for (auto& job : state.jobs) {
    if (job.task_id == task_id) return &job;
  }
  return nullptr;
}

TraceEvent make_event(Tick t, EventKind kind, const JobInstance& job, int core) {
  TraceEvent e;
  e.t = t;
  e.task_id = job.task_id;
  e.kind = kind;
  e.core = core;
  e.instance = job.instance;
  e.release = job.release;
  e.deadline = job.effective_deadline();
  e.rel_deadline = job.rel_deadline;
  e.remaining = job.remaining;
  e.critical = job.critical;
  return e;
}

SimState make_unreleased_state(TaskSet tasks, int cores, Tick horizon) {
  if (cores < 1) throw ContractError("cores must be >= 1");
  validate_taskset(tasks);
  SimState state;
  state.cores = cores;
  state.horizon = horizon;
  state.core_map.assign(static_cast<std::size_t>(cores), kIdle);
  int max_id = 0;
  for (const auto& t : tasks) max_id = std::max(max_id, t.id);
  state.next_synthetic_id = max_id + 1;
  state.tasks = std::make_shared<const TaskSet>(std::move(tasks));
  state.one_shots = std::make_shared<const std::vector<JobInstance>>();
  return state;
}

}  // namespace

SimState make_initial_state(TaskSet tasks, int cores, Tick horizon) {
  auto state = make_unreleased_state(std::move(tasks), cores, horizon);
  release_due_jobs(state, nullptr);
  return state;
}

void release_due_jobs(SimState& state, std::vector<TraceEvent>* events) {
  const Tick t = state.clock;
  if (state.horizon > 0 && t >= state.horizon) return;
  if (state.tasks) {
    for (const auto& task : *state.tasks) {
      if (t % task.period != 0) continue;
      if (state.find_job(task.id) != nullptr) {
        throw ContractError("task " + std::to_string(task.id) + " released while a job is still active");
      }
      JobInstance job;
      job.task_id = task.id;
      job.instance = t / task.period;
      job.release = t;
      job.abs_deadline = t + task.deadline;
      job.remaining = task.wcet;
      job.wcet = task.wcet;
      job.period = task.period;
      job.rel_deadline = task.deadline;
      job.critical = task.critical;
      state.jobs.push_back(job);
      if (events) events->push_back(make_event(t, EventKind::kRelease, job, -1));
    }
  }
  if (state.one_shots) {
    const auto& pending = *state.one_shots;
    while (state.next_one_shot < pending.size() && pending[state.next_one_shot].release <= t) {
      const auto& job = pending[state.next_one_shot++];
      if (job.release < t) continue;
      state.jobs.push_back(job);
      if (events) events->push_back(make_event(t, EventKind::kRelease, job, -1));
    }
  }
}

void validate_action(const SimState& state, const ActionSet& action) {
  if (action.cores.size() != static_cast<std::size_t>(state.cores)) {
    throw ContractError("action has " + std::to_string(action.cores.size()) + " entries for " +
                        std::to_string(state.cores) + " cores");
  }
  std::set<int> seen;
  for (int task : action.cores) {
    if (task == kIdle) continue;
    if (!seen.insert(task).second) throw ContractError("task " + std::to_string(task) + " assigned to two cores");
    if (state.find_job(task) == nullptr) {
      throw ContractError("task " + std::to_string(task) + " has no active job");
    }
  }
}

StepResult step(SimState& state, const ActionSet& action, const RewardConfig& cfg) {
  validate_action(state, action);
  StepResult out;
  const Tick t = state.clock;
  const Tick t1 = t + 1;

  auto ran_last_tick = [&](int task) {
    return std::find(state.core_map.begin(), state.core_map.end(), task) != state.core_map.end();
  };
  auto chosen = [&](int task) {
    return std::find(action.cores.begin(), action.cores.end(), task) != action.cores.end();
  };

  for (std::size_t k = 0; k < state.core_map.size(); ++k) {
    const int task = state.core_map[k];
    if (task == kIdle || chosen(task)) continue;
    if (auto* job = find_job_mut(state, task)) {
      job->assigned_core.reset();
      out.events.push_back(make_event(t, EventKind::kPreempt, *job, static_cast<int>(k)));
    }
  }

  for (std::size_t k = 0; k < action.cores.size(); ++k) {
    const int task = action.cores[k];
    if (task == kIdle) continue;
    auto* job = find_job_mut(state, task);
    const int core = static_cast<int>(k);
    if (!ran_last_tick(task)) out.events.push_back(make_event(t, EventKind::kStart, *job, core));
    const auto it = state.last_core.find(task);
    if (it != state.last_core.end() && it->second != core) {
      job->deadline_shift += cfg.delta;
      ++out.migrations;
      out.events.push_back(make_event(t, EventKind::kMigrate, *job, core));
    }
    state.last_core[task] = core;
    job->assigned_core = core;
    job->remaining -= 1;
  }
  state.core_map = action.cores;

  double reward = 0.0;
  // Completions at t+1.
  for (auto it = state.jobs.begin(); it != state.jobs.end();) {
    if (it->remaining == 0) {
      const int core = it->assigned_core.value_or(-1);
      reward += 1.0;
      if (cfg.scheme == RewardScheme::kR2EarlyBonus) {
        reward += cfg.r2_coeff * static_cast<double>(it->effective_deadline() - t1) /
                  static_cast<double>(it->rel_deadline);
      }
      ++out.completions;
      out.events.push_back(make_event(t1, EventKind::kComplete, *it, core));
      std::replace(state.core_map.begin(), state.core_map.end(), it->task_id, kIdle);
      it = state.jobs.erase(it);
    } else {
      ++it;
    }
  }
  if (cfg.scheme == RewardScheme::kR3SlackSensitive) {
    for (const auto& job : state.jobs) {
      const Tick s = slack(job, t1);
      if (s < 0) reward -= cfg.eta * static_cast<double>(-s);
    }
  }
  // Misses at t+1: one penalty, then the job is dropped.
  for (auto it = state.jobs.begin(); it != state.jobs.end();) {
    if (t1 >= it->effective_deadline()) {
      const int core = it->assigned_core.value_or(-1);
      reward -= 1.0;
      if (cfg.scheme == RewardScheme::kR1Lateness) {
        reward -= cfg.r1_coeff * static_cast<double>(it->remaining);
      }
      ++out.misses;
      out.events.push_back(make_event(t1, EventKind::kMiss, *it, core));
      std::replace(state.core_map.begin(), state.core_map.end(), it->task_id, kIdle);
      it = state.jobs.erase(it);
    } else {
      ++it;
    }
  }
  reward -= cfg.lambda * static_cast<double>(out.migrations);
  out.reward = reward;

  state.clock = t1;
  release_due_jobs(state, &out.events);
  return out;
}

std::size_t inject_burst(SimState& state, const BurstSpec& spec) {
  if (spec.count <= 0 || spec.interval <= 0 || spec.duration <= 0) return 0;
  if (spec.deadline <= 0 || spec.wcet <= 0) throw ContractError("burst deadline and wcet must be positive");
  std::vector<JobInstance> merged;
  if (state.one_shots) {
    merged.assign(state.one_shots->begin() + static_cast<std::ptrdiff_t>(state.next_one_shot),
                  state.one_shots->end());
  }
  const Tick begin = state.clock + spec.start;
  std::size_t added = 0;
  for (Tick r = begin; r < begin + spec.duration; r += spec.interval) {
    for (int j = 0; j < spec.count; ++j) {
      JobInstance job;
      job.task_id = state.next_synthetic_id++;
      job.instance = 0;
      job.release = r;
      job.abs_deadline = r + spec.deadline;
      job.remaining = spec.wcet;
      job.wcet = spec.wcet;
      job.period = spec.deadline;
      job.rel_deadline = spec.deadline;
      merged.push_back(job);
      ++added;
    }
  }
  std::stable_sort(merged.begin(), merged.end(),
                   [](const JobInstance& a, const JobInstance& b) { return a.release < b.release; });
  state.one_shots = std::make_shared<const std::vector<JobInstance>>(std::move(merged));
  state.next_one_shot = 0;
  // Jobs due right now are activated immediately.
  const auto& pending = *state.one_shots;
  while (state.next_one_shot < pending.size() && pending[state.next_one_shot].release <= state.clock) {
    state.jobs.push_back(pending[state.next_one_shot++]);
  }
  return added;
}

MetricsReport compute_metrics(const Trace& trace) {
  MetricsReport r;
  std::int64_t critical_met = 0;
  double response_sum = 0.0;
  std::vector<Tick> lateness;
  for (const auto& e : trace.events) {
    switch (e.kind) {
      case EventKind::kRelease:
        ++r.jobs_released;
        if (e.critical) ++r.critical_released;
        break;
      case EventKind::kComplete:
        ++r.jobs_completed;
        response_sum += static_cast<double>(e.t - e.release);
        lateness.push_back(std::max<Tick>(0, e.t - e.deadline));
        if (e.critical) ++critical_met;
        break;
      case EventKind::kMiss:
        ++r.misses;
        lateness.push_back(e.remaining);
        if (e.critical) r.success_flag = false;
        break;
      case EventKind::kMigrate:
        ++r.migrations;
        break;
      default:
        break;
    }
  }
  if (r.jobs_released > 0) {
    r.compliance_rate = static_cast<double>(r.jobs_completed) / static_cast<double>(r.jobs_released);
  }
  if (r.jobs_completed > 0) r.avg_response_time = response_sum / static_cast<double>(r.jobs_completed);
  if (r.critical_released > 0) {
    r.pitmd = static_cast<double>(critical_met) / static_cast<double>(r.critical_released);
  }
  if (!lateness.empty()) {
    std::sort(lateness.begin(), lateness.end());
    // Nearest-rank percentile.
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(lateness.size())));
    r.lateness_p95 = static_cast<double>(lateness[std::max<std::size_t>(rank, 1) - 1]);
  }
  return r;
}

std::string metrics_to_json(const MetricsReport& r) {
  nlohmann::json j{{"compliance_rate", r.compliance_rate},
                   {"avg_response_time", r.avg_response_time},
                   {"pitmd", r.pitmd},
                   {"success_flag", r.success_flag},
                   {"lateness_p95", r.lateness_p95},
                   {"jobs_released", r.jobs_released},
                   {"jobs_completed", r.jobs_completed},
                   {"misses", r.misses},
                   {"critical_released", r.critical_released},
                   {"migrations", r.migrations}};
  return j.dump(2) + "\n";
}

double edf_reference_missrate(double u) {
  if (u <= 1.0) return 0.0;
  return 1.0 - 1.0 / u;
}

double approximation_ratio(double candidate, double reference) {
  if (reference <= 0.0) throw DomainError("reference miss rate must be positive");
  return candidate / reference;
}

std::string trace_to_csv(const Trace& trace) {
  std::ostringstream out;
  out << "t,task_id,event,core\n";
  for (const auto& e : trace.events) {
    out << e.t << ',' << e.task_id << ',' << to_string(e.kind) << ',';
    if (e.core >= 0) out << e.core;
    out << '\n';
  }
  return out.str();
}

Trace trace_from_csv(std::string_view text) {
  Trace trace;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != "t,task_id,event,core") throw ParseError("line 1: unexpected trace header '" + line + "'");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (line.back() == ',') fields.emplace_back();
    if (fields.size() != 4) throw ParseError("line " + std::to_string(lineno) + ": expected 4 fields");
    TraceEvent e;
    try {
      e.t = std::stoll(fields[0]);
      e.task_id = std::stoi(fields[1]);
      e.core = fields[3].empty() ? -1 : std::stoi(fields[3]);
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(lineno) + ": malformed number");
    }
    try {
      e.kind = parse_event_kind(fields[2]);
    } catch (const ParseError& err) {
      throw ParseError("line " + std::to_string(lineno) + ": " + err.what());
    }
    trace.events.push_back(e);
  }
  return trace;
}

EpisodeResult run_episode(const TaskSet& tasks, Policy& policy, const EpisodeConfig& cfg,
                          const StepObserver& observer) {
  if (cfg.horizon <= 0) throw ContractError("horizon must be positive");
  EpisodeResult result;
  auto state = make_unreleased_state(tasks, cfg.cores, cfg.horizon);
  for (const auto& burst : cfg.bursts) inject_burst(state, burst);
  {
    // inject_burst may already have activated jobs due at t = 0; record them.
    for (const auto& job : state.jobs) result.trace.events.push_back(make_event(0, EventKind::kRelease, job, -1));
    release_due_jobs(state, &result.trace.events);
  }
  for (Tick i = 0; i < cfg.horizon; ++i) {
    ActionSet action = policy.act(state);
    try {
      validate_action(state, action);
    } catch (const ContractError& e) {
      throw EpisodeAborted("policy '" + policy.name() + "' returned an invalid action at t=" +
                           std::to_string(state.clock) + ": " + e.what());
    }
    std::optional<SimState> before;
    if (observer) before = state;
    auto res = step(state, action, cfg.reward);
    result.total_reward += res.reward;
    result.trace.events.insert(result.trace.events.end(), res.events.begin(), res.events.end());
    if (observer) observer(*before, action, res, state);
  }
  result.trace.horizon = cfg.horizon;
  result.metrics = compute_metrics(result.trace);
  return result;
}

}  // namespace tempo
