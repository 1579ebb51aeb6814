#include "tempo/taskmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tempo/error.hpp"

namespace tempo {

using nlohmann::json;

Tick slack(const JobInstance& job, Tick t) {
  return (job.effective_deadline() - t) - job.remaining;
}

double utilization(std::span<const TaskSpec> tasks) {
  if (tasks.empty()) throw DomainError("utilization of an empty task set");
  double u = 0.0;
  for (const auto& task : tasks) {
    u += static_cast<double>(task.wcet) / static_cast<double>(task.period);
  }
  return u;
}

void validate_taskset(std::span<const TaskSpec> tasks) {
  std::set<int> ids;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& task = tasks[i];
    const std::string where = "task " + std::to_string(task.id) + " (index " + std::to_string(i) + ")";
    if (task.id < 1) throw ContractError(where + ": id must be >= 1");
    if (task.period <= 0) throw ContractError(where + ": period must be > 0");
    if (task.wcet <= 0) throw ContractError(where + ": wcet must be > 0");
    if (task.deadline <= 0 || task.deadline > task.period) {
      throw ContractError(where + ": deadline must satisfy 0 < D <= P");
    }
    if (!ids.insert(task.id).second) throw ContractError(where + ": duplicate id");
  }
}

Tick hyperperiod(std::span<const TaskSpec> tasks) {
  constexpr Tick kLimit = Tick{1} << 50;
  Tick h = 1;
  for (const auto& task : tasks) {
    const Tick g = std::gcd(h, task.period);
    if (h / g > kLimit / task.period) throw DomainError("hyperperiod overflow");
    h = h / g * task.period;
  }
  return h;
}

double sample_pareto(double alpha, double x_min, std::mt19937_64& rng) {
  if (alpha <= 0.0 || x_min <= 0.0) throw DomainError("pareto parameters must be positive");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng);
  while (u <= 0.0) u = unif(rng);
  return x_min / std::pow(u, 1.0 / alpha);
}

namespace {

std::vector<double> uunifast(int n, double total, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> shares(static_cast<std::size_t>(n));
  double sum = total;
  for (int i = 0; i < n - 1; ++i) {
    const double next = sum * std::pow(unif(rng), 1.0 / static_cast<double>(n - i - 1));
    shares[static_cast<std::size_t>(i)] = sum - next;
    sum = next;
  }
  shares.back() = sum;
  return shares;
}

double set_util(const TaskSet& tasks) {
  double u = 0.0;
  for (const auto& t : tasks) u += static_cast<double>(t.wcet) / static_cast<double>(t.period);
  return u;
}

// Nudges single WCETs by one tick while that strictly reduces |U - target|.
void repair_utilization(TaskSet& tasks, double target) {
  for (int guard = 0; guard < 100000; ++guard) {
    const double u = set_util(tasks);
    const double err = std::abs(u - target);
    if (err <= kUtilizationTolerance / 4) return;
    int best = -1;
    double best_err = err;
    Tick best_delta = 0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const auto& t = tasks[i];
      const double step = 1.0 / static_cast<double>(t.period);
      if (u < target && t.wcet < t.deadline && std::abs(u + step - target) < best_err) {
        best = static_cast<int>(i);
        best_err = std::abs(u + step - target);
        best_delta = 1;
      }
      if (u > target && t.wcet > 1 && std::abs(u - step - target) < best_err) {
        best = static_cast<int>(i);
        best_err = std::abs(u - step - target);
        best_delta = -1;
      }
    }
    if (best < 0) return;
    tasks[static_cast<std::size_t>(best)].wcet += best_delta;
  }
}

}  // namespace

TaskSet generate_taskset(const TaskSetConfig& cfg) {
  if (cfg.n_tasks < 1) throw GenerationError("n_tasks must be >= 1");
  if (!(cfg.target_utilization > 0.0 && cfg.target_utilization <= 1.5)) {
    throw GenerationError("target utilization must lie in (0, 1.5]");
  }
  std::vector<Tick> choices = cfg.period_choices;
  if (choices.empty()) {
    if (cfg.period_min < 1 || cfg.period_max < cfg.period_min) {
      throw GenerationError("invalid period range");
    }
  } else if (std::any_of(choices.begin(), choices.end(), [](Tick p) { return p < 1; })) {
    throw GenerationError("period choices must be positive");
  }
  const Tick p_lo = choices.empty() ? cfg.period_min : *std::min_element(choices.begin(), choices.end());
  const Tick p_hi = choices.empty() ? cfg.period_max : *std::max_element(choices.begin(), choices.end());
  const Tick x_min_ticks = static_cast<Tick>(std::ceil(cfg.pareto_xmin));
  if (cfg.deadline_mode == DeadlineMode::kPareto) {
    if (cfg.pareto_alpha <= 0.0 || cfg.pareto_xmin <= 0.0) {
      throw GenerationError("pareto parameters must be positive");
    }
    if (p_lo < x_min_ticks) throw GenerationError("smallest period is below the pareto x_min");
  }
  // Every task needs at least one tick of work per (longest) period.
  const double min_util = static_cast<double>(cfg.n_tasks) / static_cast<double>(p_hi);
  if (min_util > cfg.target_utilization + kUtilizationTolerance) {
    throw GenerationError("infeasible: one tick per task already exceeds the utilization budget");
  }
  if (static_cast<double>(cfg.n_tasks) < cfg.target_utilization - kUtilizationTolerance) {
    throw GenerationError("infeasible: utilization exceeds one per task");
  }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int attempt = 0; attempt < 200; ++attempt) {
    TaskSet tasks;
    tasks.reserve(static_cast<std::size_t>(cfg.n_tasks));
    const auto shares = uunifast(cfg.n_tasks, cfg.target_utilization, rng);
    for (int i = 0; i < cfg.n_tasks; ++i) {
      TaskSpec t;
      t.id = i + 1;
      if (choices.empty()) {
        t.period = std::uniform_int_distribution<Tick>(cfg.period_min, cfg.period_max)(rng);
      } else {
        t.period = choices[std::uniform_int_distribution<std::size_t>(0, choices.size() - 1)(rng)];
      }
      t.deadline = t.period;
      if (cfg.deadline_mode == DeadlineMode::kPareto) {
        const double x = sample_pareto(cfg.pareto_alpha, cfg.pareto_xmin, rng);
        const double capped = std::min(x, static_cast<double>(t.period));
        t.deadline = std::clamp(static_cast<Tick>(std::llround(capped)), x_min_ticks, t.period);
      }
      const double share = shares[static_cast<std::size_t>(i)];
      t.wcet = std::clamp(static_cast<Tick>(std::llround(share * static_cast<double>(t.period))),
                          Tick{1}, t.deadline);
      t.critical = cfg.critical_fraction > 0.0 && unif(rng) < cfg.critical_fraction;
      tasks.push_back(t);
    }
    repair_utilization(tasks, cfg.target_utilization);
    if (std::abs(set_util(tasks) - cfg.target_utilization) <= kUtilizationTolerance) return tasks;
  }
  throw GenerationError("could not reach the target utilization within tolerance");
}

std::string taskset_to_json(std::span<const TaskSpec> tasks) {
  json arr = json::array();
  for (const auto& t : tasks) {
    arr.push_back({{"id", t.id},
                   {"period", t.period},
                   {"wcet", t.wcet},
                   {"deadline", t.deadline},
                   {"critical", t.critical}});
  }
  return json{{"tasks", arr}}.dump(2) + "\n";
}

namespace {

std::size_t line_of(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

Tick require_int(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ParseError(where + "." + key + ": missing field");
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) throw ParseError(where + "." + key + ": expected an integer");
  return v.get<Tick>();
}

}  // namespace

TaskSet taskset_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError("line " + std::to_string(line_of(text, e.byte)) + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("tasks") || !doc["tasks"].is_array()) {
    throw ParseError("top level: expected an object with a \"tasks\" array");
  }
  TaskSet tasks;
  std::set<int> ids;
  const auto& arr = doc["tasks"];
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = "tasks[" + std::to_string(i) + "]";
    const auto& obj = arr[i];
    if (!obj.is_object()) throw ParseError(where + ": expected an object");
    TaskSpec t;
    t.id = static_cast<int>(require_int(obj, "id", where));
    t.period = require_int(obj, "period", where);
    t.wcet = require_int(obj, "wcet", where);
    t.deadline = obj.contains("deadline") ? require_int(obj, "deadline", where) : t.period;
    if (obj.contains("critical")) {
      if (!obj["critical"].is_boolean()) throw ParseError(where + ".critical: expected a boolean");
      t.critical = obj["critical"].get<bool>();
    }
    if (t.id < 1) throw ParseError(where + ".id: must be >= 1");
    if (t.period <= 0) throw ParseError(where + ".period: must be > 0");
    if (t.wcet <= 0) throw ParseError(where + ".wcet: must be > 0");
    if (t.deadline <= 0 || t.deadline > t.period) {
      throw ParseError(where + ".deadline: must satisfy 0 < deadline <= period");
    }
    if (!ids.insert(t.id).second) throw ParseError(where + ".id: duplicate id " + std::to_string(t.id));
    tasks.push_back(t);
  }
  return tasks;
}

void save_taskset(std::span<const TaskSpec> tasks, const std::filesystem::path& path) {
  write_file_atomic(path, taskset_to_json(tasks));
}

TaskSet load_taskset(const std::filesystem::path& path) {
  try {
    return taskset_from_json(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace tempo
