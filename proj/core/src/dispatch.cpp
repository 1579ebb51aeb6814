#include "tempo/dispatch.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tempo/error.hpp"

namespace tempo {

int argmax_action(std::span<const double> q) {
  int best = -1;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (std::isinf(q[i]) && q[i] < 0) continue;
    if (std::isnan(q[i])) throw NumericError("argmax_action: NaN score at index " + std::to_string(i));
    if (best < 0 || q[i] > q[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  if (best < 0) throw ContractError("argmax_action: no valid entry");
  return best;
}

std::vector<int> masked_greedy(std::span<const double> q, int m, GreedyStats* stats) {
  if (m < 1) throw ContractError("masked_greedy: m must be >= 1");
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (std::isnan(q[i])) throw NumericError("masked_greedy: NaN score at index " + std::to_string(i));
  }
  std::vector<int> order(q.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return q[static_cast<std::size_t>(a)] > q[static_cast<std::size_t>(b)]; });
  if (stats) ++stats->sorts;
  std::vector<int> chosen;
  std::size_t pos = 0;
  for (; pos < order.size() && chosen.size() < static_cast<std::size_t>(m); ++pos) {
    const int i = order[pos];
    const double v = q[static_cast<std::size_t>(i)];
    if (i == 0 || (std::isinf(v) && v < 0)) continue;
    chosen.push_back(i);
    if (stats) ++stats->mask_steps;
  }
  if (stats && !chosen.empty()) {
    const double last = q[static_cast<std::size_t>(chosen.back())];
    for (; pos < order.size(); ++pos) {
      const int i = order[pos];
      const double v = q[static_cast<std::size_t>(i)];
      if (i == 0 || (std::isinf(v) && v < 0)) continue;
      if (v == last) stats->boundary_tie = true;
      break;
    }
  }
  return chosen;
}

num::Array2 selection_jacobian_mask(std::size_t n_tokens, std::span<const int> chosen) {
  num::Array2 out(chosen.size(), n_tokens);
  for (std::size_t j = 0; j < chosen.size(); ++j) {
    if (chosen[j] < 0 || static_cast<std::size_t>(chosen[j]) >= n_tokens) {
      throw ContractError("selection_jacobian_mask: chosen index out of range");
    }
    out(j, static_cast<std::size_t>(chosen[j])) = 1.0;
  }
  return out;
}

void validate_mitigation(const MitigationConfig& cfg) {
  if (!(cfg.tau_p > 0.0 && cfg.tau_p < 1.0)) throw ContractError("mitigation: tau_p must lie in (0, 1)");
  if (!(cfg.alpha_burst > 0.0 && cfg.alpha_burst < cfg.alpha_nom && cfg.alpha_nom <= 1.0)) {
    throw ContractError("mitigation: need 0 < alpha_burst < alpha_nom <= 1");
  }
  if (cfg.hysteresis < 1) throw ContractError("mitigation: hysteresis must be >= 1");
}

double update_mitigation(MitigationState& state, double p) {
  if (p > state.cfg.tau_p) {
    state.active = true;
    state.calm_ticks = 0;
  } else if (state.active) {
    if (++state.calm_ticks >= state.cfg.hysteresis) {
      state.active = false;
      state.calm_ticks = 0;
    }
  }
  return state.active ? state.cfg.alpha_burst : state.cfg.alpha_nom;
}

int effective_k(double alpha, int B) { return std::max(1, static_cast<int>(std::floor(alpha * B))); }

}  // namespace tempo
