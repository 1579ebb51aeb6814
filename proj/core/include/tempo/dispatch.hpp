#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tempo/num/array.hpp"

namespace tempo {

// Index of the largest finite score; ties go to the lowest index, so the idle
// token (index 0) wins a tie with a task. Throws ContractError when every
// entry is -inf.
int argmax_action(std::span<const double> q);

struct GreedyStats {
  std::int64_t sorts = 0;
  std::int64_t mask_steps = 0;
  // Last selected and first rejected task scores are equal.
  bool boundary_tie = false;
};

// Token rows for up to m cores: the highest-scoring valid task rows, in
// selection order. Idle is never selected while a valid task remains; with no
// valid task the result is empty. One stable descending sort, then at most m
// mask steps.
std::vector<int> masked_greedy(std::span<const double> q, int m, GreedyStats* stats = nullptr);

// Row j is one-hot at chosen[j]: d a_j / d q_i on the tie-free region.
num::Array2 selection_jacobian_mask(std::size_t n_tokens, std::span<const int> chosen);

struct MitigationConfig {
  double tau_p = 0.30;
  double alpha_nom = 0.10;
  double alpha_burst = 0.05;
  int hysteresis = 5;  // calm ticks needed before reverting

  friend bool operator==(const MitigationConfig&, const MitigationConfig&) = default;
};

struct MitigationState {
  MitigationConfig cfg;
  bool active = false;
  int calm_ticks = 0;
};

void validate_mitigation(const MitigationConfig& cfg);

// p > tau_p enters burst mode immediately; leaving it needs `hysteresis`
// consecutive ticks with p <= tau_p. Returns the sparsity fraction in force.
double update_mitigation(MitigationState& state, double p);

// k' = max(1, floor(alpha * B))
int effective_k(double alpha, int B);

}  // namespace tempo
