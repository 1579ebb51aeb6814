#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tempo/sim.hpp"
#include "tempo/urgency.hpp"

namespace tempo {

enum class PolicyKind { kRM, kEDF, kSRPT, kFCFS, kMinSlack, kWeightedSlack, kRandom, kIdleAlways };

struct PolicySpec {
  PolicyKind kind = PolicyKind::kEDF;
  double alpha = 0.73;  // WeightedSlack, normalized so alpha + beta = 1
  double beta = 0.27;
  std::uint64_t seed = 0;  // Random

  friend bool operator==(const PolicySpec&, const PolicySpec&) = default;
};

// "rm", "edf", "srpt", "fcfs", "minslack", "wslack:A,B", "random[:SEED]", "idle".
PolicySpec parse_policy(std::string_view text);
std::string to_string(const PolicySpec& spec);

// alpha / (s~ + 1) + beta / (c + 1)
double weighted_slack_priority(double alpha, double beta, int slack_bin, Tick remaining);

// Active task ids, most preferred first. Ties always go to the lower task id.
// Random and IdleAlways have no ranking and throw ContractError.
std::vector<int> rank_tasks(const PolicySpec& spec, const SimState& state, const QuantizerConfig& quant);

// Places `tasks` (at most one per core) on cores: a task keeps its last core
// when that core is free, the rest fill the lowest free cores in order.
ActionSet assign_cores(const SimState& state, std::span<const int> tasks);

// Picks up to m = state.cores tasks; spare cores idle.
ActionSet select(const PolicySpec& spec, const SimState& state, const QuantizerConfig& quant,
                 std::mt19937_64* rng = nullptr);

// `quant` must be resolved; only WeightedSlack reads it.
std::unique_ptr<Policy> make_policy(const PolicySpec& spec, const QuantizerConfig& quant = {});

}  // namespace tempo
