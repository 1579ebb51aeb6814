#include "tempo/baselines.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <tuple>

#include "tempo/error.hpp"

namespace tempo {

namespace {

double parse_double(std::string_view text, std::string_view what) {
  try {
    std::size_t used = 0;
    const std::string s(text);
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ContractError("policy: bad " + std::string(what) + " '" + std::string(text) + "'");
  }
}

}  // namespace

PolicySpec parse_policy(std::string_view text) {
  PolicySpec spec;
  const auto colon = text.find(':');
  const std::string_view head = text.substr(0, colon);
  const std::string_view args = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  auto no_args = [&] {
    if (colon != std::string_view::npos) throw ContractError("policy '" + std::string(head) + "' takes no arguments");
  };
  if (head == "rm") {
    no_args();
    spec.kind = PolicyKind::kRM;
  } else if (head == "edf") {
    no_args();
    spec.kind = PolicyKind::kEDF;
  } else if (head == "srpt") {
    no_args();
    spec.kind = PolicyKind::kSRPT;
  } else if (head == "fcfs") {
    no_args();
    spec.kind = PolicyKind::kFCFS;
  } else if (head == "minslack") {
    no_args();
    spec.kind = PolicyKind::kMinSlack;
  } else if (head == "idle") {
    no_args();
    spec.kind = PolicyKind::kIdleAlways;
  } else if (head == "random") {
    spec.kind = PolicyKind::kRandom;
    if (!args.empty()) {
      std::uint64_t seed = 0;
      auto [p, ec] = std::from_chars(args.data(), args.data() + args.size(), seed);
      if (ec != std::errc() || p != args.data() + args.size()) {
        throw ContractError("policy: bad random seed '" + std::string(args) + "'");
      }
      spec.seed = seed;
    }
  } else if (head == "wslack") {
    spec.kind = PolicyKind::kWeightedSlack;
    if (!args.empty()) {
      const auto comma = args.find(',');
      if (comma == std::string_view::npos) throw ContractError("policy: wslack expects 'wslack:ALPHA,BETA'");
      const double a = parse_double(args.substr(0, comma), "alpha");
      const double b = parse_double(args.substr(comma + 1), "beta");
      if (a < 0.0 || b < 0.0 || a + b <= 0.0) throw ContractError("policy: wslack weights must be >= 0, not both 0");
      spec.alpha = a / (a + b);
      spec.beta = b / (a + b);
    }
  } else {
    throw ContractError("unknown policy '" + std::string(text) +
                        "' (expected rm|edf|srpt|fcfs|minslack|wslack:A,B|random[:SEED]|idle)");
  }
  return spec;
}

std::string to_string(const PolicySpec& spec) {
  switch (spec.kind) {
    case PolicyKind::kRM: return "rm";
    case PolicyKind::kEDF: return "edf";
    case PolicyKind::kSRPT: return "srpt";
    case PolicyKind::kFCFS: return "fcfs";
    case PolicyKind::kMinSlack: return "minslack";
    case PolicyKind::kIdleAlways: return "idle";
    case PolicyKind::kRandom: return "random:" + std::to_string(spec.seed);
    case PolicyKind::kWeightedSlack: {
      char buf[64];
      std::snprintf(buf, sizeof buf, "wslack:%g,%g", spec.alpha, spec.beta);
      return buf;
    }
  }
  return "edf";
}

double weighted_slack_priority(double alpha, double beta, int slack_bin, Tick remaining) {
  return alpha / (static_cast<double>(slack_bin) + 1.0) + beta / (static_cast<double>(remaining) + 1.0);
}

std::vector<int> rank_tasks(const PolicySpec& spec, const SimState& state, const QuantizerConfig& quant) {
  struct Entry {
    double key;
    int id;
  };
  std::vector<Entry> entries;
  entries.reserve(state.jobs.size());
  const Tick t = state.clock;
  for (const auto& j : state.jobs) {
    double key = 0.0;
    switch (spec.kind) {
      case PolicyKind::kRM: key = static_cast<double>(j.period); break;
      case PolicyKind::kEDF: key = static_cast<double>(j.effective_deadline()); break;
      case PolicyKind::kSRPT: key = static_cast<double>(j.remaining); break;
      case PolicyKind::kFCFS: key = static_cast<double>(j.release); break;
      case PolicyKind::kMinSlack: key = static_cast<double>(slack(j, t)); break;
      case PolicyKind::kWeightedSlack:
        // Larger priority first, so rank by its negation.
        key = -weighted_slack_priority(spec.alpha, spec.beta, quantize(slack(j, t), quant), j.remaining);
        break;
      case PolicyKind::kRandom:
      case PolicyKind::kIdleAlways: throw ContractError("rank_tasks: policy has no static ranking");
    }
    entries.push_back({key, j.task_id});
  }
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return std::tie(a.key, a.id) < std::tie(b.key, b.id); });
  std::vector<int> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.id);
  return out;
}

ActionSet assign_cores(const SimState& state, std::span<const int> tasks) {
  const auto m = static_cast<std::size_t>(state.cores);
  if (tasks.size() > m) throw ContractError("assign_cores: more tasks than cores");
  ActionSet action = ActionSet::idle(state.cores);
  std::vector<int> pending;
  for (int task : tasks) {
    const auto it = state.last_core.find(task);
    if (it != state.last_core.end() && it->second >= 0 && static_cast<std::size_t>(it->second) < m &&
        action.cores[static_cast<std::size_t>(it->second)] == kIdle) {
      action.cores[static_cast<std::size_t>(it->second)] = task;
    } else {
      pending.push_back(task);
    }
  }
  std::size_t core = 0;
  for (int task : pending) {
    while (action.cores[core] != kIdle) ++core;
    action.cores[core] = task;
  }
  return action;
}

ActionSet select(const PolicySpec& spec, const SimState& state, const QuantizerConfig& quant, std::mt19937_64* rng) {
  const auto m = static_cast<std::size_t>(state.cores);
  if (spec.kind == PolicyKind::kIdleAlways) return ActionSet::idle(state.cores);
  if (spec.kind == PolicyKind::kRandom) {
    if (rng == nullptr) throw ContractError("select: random policy needs an rng");
    std::vector<int> ids;
    for (const auto& j : state.jobs) ids.push_back(j.task_id);
    std::sort(ids.begin(), ids.end());
    if (m == 1) {
      // Uniform over {idle} and every active task.
      const auto pick = std::uniform_int_distribution<std::size_t>(0, ids.size())(*rng);
      if (pick == 0) return ActionSet::idle(1);
      return ActionSet{{ids[pick - 1]}};
    }
    std::shuffle(ids.begin(), ids.end(), *rng);
    if (ids.size() > m) ids.resize(m);
    return assign_cores(state, ids);
  }
  auto ranked = rank_tasks(spec, state, quant);
  if (ranked.size() > m) ranked.resize(m);
  return assign_cores(state, ranked);
}

namespace {

class BaselinePolicy final : public Policy {
 public:
  BaselinePolicy(PolicySpec spec, QuantizerConfig quant)
      : spec_(spec), quant_(std::move(quant)), rng_(spec.seed) {}

  ActionSet act(const SimState& state) override { return select(spec_, state, quant_, &rng_); }
  std::string name() const override { return to_string(spec_); }

 private:
  PolicySpec spec_;
  QuantizerConfig quant_;
  std::mt19937_64 rng_;
};

}  // namespace

std::unique_ptr<Policy> make_policy(const PolicySpec& spec, const QuantizerConfig& quant) {
  if (spec.kind == PolicyKind::kWeightedSlack) validate_quantizer(quant);
  return std::make_unique<BaselinePolicy>(spec, quant);
}

}  // namespace tempo
