#pragma once

#include <span>
#include <string>
#include <vector>

#include "tempo/baselines.hpp"
#include "tempo/sim.hpp"
#include "tempo/trainer.hpp"
#include "tempo/urgency.hpp"

namespace tempo {

// -sum a ln a with 0 ln 0 = 0. Throws ContractError when the row does not
// sum to 1 within 1e-6 or holds a negative entry.
double attention_entropy(std::span<const double> row);

// |Top_k(row) ∩ chosen| / min(k, |chosen|); 0 when nothing was chosen.
// Top_k ties go to the lower index.
double topk_alignment(std::span<const double> row, std::span<const int> chosen, int k);

struct StepDiagnostics {
  Tick t = 0;
  double entropy = 0.0;
  double align_top1 = 0.0;
  double align_topk = 0.0;
};

struct RunDiagnostics {
  std::vector<StepDiagnostics> steps;
  double mean_entropy = 0.0;
  double mean_align_top1 = 0.0;
  double mean_align_topk = 0.0;
};

// Runs the greedy agent with attention recording. Entropy and alignment use
// the idle (decision) token's row of the head-averaged final-layer map;
// alignment uses k = number of cores.
RunDiagnostics diagnose_run(AgentPolicy& agent, const TaskSet& tasks, const EpisodeConfig& cfg);

// CSV: t,entropy,align_top1,align_topk
std::string diagnostics_csv(const RunDiagnostics& diag);

// One scheduling decision: the candidate jobs and which of them were picked.
struct Candidate {
  int task_id = 0;
  int slack_bin = 0;
  Tick remaining = 0;
  double rem_frac = 0.0;  // c / C
};

struct Decision {
  SimState state;
  std::vector<Candidate> candidates;
  std::vector<int> chosen;  // task ids, sorted; empty = all idle
};

// Records every decision of `policy` over one episode.
std::vector<Decision> record_decisions(const TaskSet& tasks, Policy& policy, const EpisodeConfig& cfg,
                                       const QuantizerConfig& quant);

struct HeatmapCell {
  int slack_bin = 0;
  int rem_bin = 0;
  std::int64_t count = 0;
  std::int64_t selected = 0;
  double p = 0.0;
  bool sparse = true;  // fewer than 10 observations
};

struct Heatmap {
  int slack_bins = 10;
  int rem_bins = 10;
  std::vector<HeatmapCell> cells;  // row-major over (slack_bin, rem_bin)

  const HeatmapCell& at(int s, int r) const { return cells[static_cast<std::size_t>(s * rem_bins + r)]; }
};

// P(selected | quantized-slack bin, c/C bin). Slack bins rescale [0, Q) onto
// `slack_bins` columns.
Heatmap policy_heatmap(std::span<const Decision> decisions, int Q, int slack_bins = 10, int rem_bins = 10);
// CSV: slack_bin,rem_bin,p,count
std::string heatmap_csv(const Heatmap& map);

struct DistilledRule {
  double alpha = 0.0;
  double beta = 1.0;
  double agreement = 0.0;
  // Range of alpha values that reach the maximal agreement.
  double alpha_lo = 0.0;
  double alpha_hi = 0.0;
};

// Tasks WeightedSlack(alpha, 1 - alpha) would pick for a decision, sorted.
std::vector<int> weighted_slack_choice(const Decision& d, double alpha, int m);

// Grid search alpha in {0, 0.01, ..., 1}; returns the median alpha among the
// maximizers.
DistilledRule distill_rule(std::span<const Decision> decisions);
std::string distilled_json(const DistilledRule& rule);

// Fraction of recorded decisions on which `other` picks the same task set.
double agreement(std::span<const Decision> decisions, Policy& other);

struct PowerLawFit {
  double c = 0.0;
  double exponent = 0.0;
  double r2 = 0.0;
};

// Least squares of log T on log N. Needs >= 4 points, all positive.
PowerLawFit fit_power_law(std::span<const double> sizes, std::span<const double> times);

}  // namespace tempo
