#include "tempo/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <nlohmann/json.hpp>

#include "tempo/error.hpp"

namespace tempo {

double attention_entropy(std::span<const double> row) {
  double sum = 0.0;
  double h = 0.0;
  for (double a : row) {
    if (a < 0.0) throw ContractError("attention_entropy: negative weight");
    sum += a;
    if (a > 0.0) h -= a * std::log(a);
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ContractError("attention_entropy: row sums to " + std::to_string(sum));
  return h;
}

double topk_alignment(std::span<const double> row, std::span<const int> chosen, int k) {
  if (k < 1) throw ContractError("topk_alignment: k must be >= 1");
  if (chosen.empty()) return 0.0;
  std::vector<int> idx(row.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto take = std::min(static_cast<std::size_t>(k), idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(), [&](int a, int b) {
    const double ra = row[static_cast<std::size_t>(a)], rb = row[static_cast<std::size_t>(b)];
    return ra > rb || (ra == rb && a < b);
  });
  std::size_t hits = 0;
  for (std::size_t i = 0; i < take; ++i) {
    if (std::find(chosen.begin(), chosen.end(), idx[i]) != chosen.end()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(std::min(static_cast<std::size_t>(k), chosen.size()));
}

RunDiagnostics diagnose_run(AgentPolicy& agent, const TaskSet& tasks, const EpisodeConfig& cfg) {
  RunDiagnostics out;
  agent.record_attention(true);
  run_episode(tasks, agent, cfg, [&](const SimState& before, const ActionSet&, const StepResult&, const SimState&) {
    const auto& att = agent.last_attention();
    if (att.mean.empty()) return;
    const auto row = att.mean[0].row(0);
    const auto& rows = agent.last_rows();
    std::vector<int> chosen = rows.empty() ? std::vector<int>{kIdle} : rows;
    StepDiagnostics s;
    s.t = before.clock;
    s.entropy = attention_entropy(row);
    s.align_top1 = topk_alignment(row, chosen, 1);
    s.align_topk = topk_alignment(row, chosen, before.cores);
    out.steps.push_back(s);
  });
  agent.record_attention(false);
  if (!out.steps.empty()) {
    for (const auto& s : out.steps) {
      out.mean_entropy += s.entropy;
      out.mean_align_top1 += s.align_top1;
      out.mean_align_topk += s.align_topk;
    }
    const auto n = static_cast<double>(out.steps.size());
    out.mean_entropy /= n;
    out.mean_align_top1 /= n;
    out.mean_align_topk /= n;
  }
  return out;
}

std::string diagnostics_csv(const RunDiagnostics& diag) {
  std::string out = "t,entropy,align_top1,align_topk\n";
  char buf[128];
  for (const auto& s : diag.steps) {
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.6g,%.6g\n", static_cast<long long>(s.t), s.entropy, s.align_top1,
                  s.align_topk);
    out += buf;
  }
  return out;
}

std::vector<Decision> record_decisions(const TaskSet& tasks, Policy& policy, const EpisodeConfig& cfg,
                                       const QuantizerConfig& quant) {
  std::vector<Decision> out;
  run_episode(tasks, policy, cfg, [&](const SimState& before, const ActionSet& action, const StepResult&, const SimState&) {
    Decision d;
    d.state = before;
    for (const auto& j : before.jobs) {
      d.candidates.push_back({j.task_id, quantize(slack(j, before.clock), quant), j.remaining,
                              static_cast<double>(j.remaining) / static_cast<double>(j.wcet)});
    }
    for (int t : action.cores) {
      if (t != kIdle) d.chosen.push_back(t);
    }
    std::sort(d.chosen.begin(), d.chosen.end());
    out.push_back(std::move(d));
  });
  return out;
}

Heatmap policy_heatmap(std::span<const Decision> decisions, int Q, int slack_bins, int rem_bins) {
  if (Q < 1 || slack_bins < 1 || rem_bins < 1) throw ContractError("policy_heatmap: bin counts must be positive");
  Heatmap map;
  map.slack_bins = slack_bins;
  map.rem_bins = rem_bins;
  map.cells.resize(static_cast<std::size_t>(slack_bins * rem_bins));
  for (int s = 0; s < slack_bins; ++s) {
    for (int r = 0; r < rem_bins; ++r) {
      auto& c = map.cells[static_cast<std::size_t>(s * rem_bins + r)];
      c.slack_bin = s;
      c.rem_bin = r;
    }
  }
  for (const auto& d : decisions) {
    for (const auto& c : d.candidates) {
      const int sb = std::clamp(c.slack_bin * slack_bins / Q, 0, slack_bins - 1);
      const int rb = std::clamp(static_cast<int>(std::floor(c.rem_frac * rem_bins)), 0, rem_bins - 1);
      auto& cell = map.cells[static_cast<std::size_t>(sb * rem_bins + rb)];
      ++cell.count;
      if (std::binary_search(d.chosen.begin(), d.chosen.end(), c.task_id)) ++cell.selected;
    }
  }
  for (auto& c : map.cells) {
    c.p = c.count > 0 ? static_cast<double>(c.selected) / static_cast<double>(c.count) : 0.0;
    c.sparse = c.count < 10;
  }
  return map;
}

std::string heatmap_csv(const Heatmap& map) {
  std::string out = "slack_bin,rem_bin,p,count\n";
  char buf[128];
  for (const auto& c : map.cells) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.6f,%lld\n", c.slack_bin, c.rem_bin, c.p, static_cast<long long>(c.count));
    out += buf;
  }
  return out;
}

std::vector<int> weighted_slack_choice(const Decision& d, double alpha, int m) {
  const double beta = 1.0 - alpha;
  std::vector<std::pair<double, int>> ranked;
  for (const auto& c : d.candidates) {
    ranked.emplace_back(-weighted_slack_priority(alpha, beta, c.slack_bin, c.remaining), c.task_id);
  }
  std::sort(ranked.begin(), ranked.end());
  std::vector<int> out;
  for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(m); ++i) out.push_back(ranked[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

DistilledRule distill_rule(std::span<const Decision> decisions) {
  DistilledRule best;
  if (decisions.empty()) return best;
  std::vector<int> hits(101);
  for (int a = 0; a <= 100; ++a) {
    const double alpha = a / 100.0;
    for (const auto& d : decisions) {
      if (weighted_slack_choice(d, alpha, d.state.cores) == d.chosen) ++hits[static_cast<std::size_t>(a)];
    }
  }
  const int top = *std::max_element(hits.begin(), hits.end());
  std::vector<int> winners;
  for (int a = 0; a <= 100; ++a) {
    if (hits[static_cast<std::size_t>(a)] == top) winners.push_back(a);
  }
  const int pick = winners[(winners.size() - 1) / 2];
  best.alpha = pick / 100.0;
  best.beta = 1.0 - best.alpha;
  best.agreement = static_cast<double>(top) / static_cast<double>(decisions.size());
  best.alpha_lo = winners.front() / 100.0;
  best.alpha_hi = winners.back() / 100.0;
  return best;
}

std::string distilled_json(const DistilledRule& rule) {
  nlohmann::json j{{"alpha", rule.alpha},       {"beta", rule.beta},          {"agreement", rule.agreement},
                   {"alpha_lo", rule.alpha_lo}, {"alpha_hi", rule.alpha_hi}};
  return j.dump(2) + "\n";
}

double agreement(std::span<const Decision> decisions, Policy& other) {
  if (decisions.empty()) return 0.0;
  std::size_t same = 0;
  for (const auto& d : decisions) {
    const ActionSet a = other.act(d.state);
    std::vector<int> picked;
    for (int t : a.cores) {
      if (t != kIdle) picked.push_back(t);
    }
    std::sort(picked.begin(), picked.end());
    if (picked == d.chosen) ++same;
  }
  return static_cast<double>(same) / static_cast<double>(decisions.size());
}

PowerLawFit fit_power_law(std::span<const double> sizes, std::span<const double> times) {
  if (sizes.size() != times.size()) throw ContractError("fit_power_law: size/time length mismatch");
  if (sizes.size() < 4) throw ContractError("fit_power_law: need at least 4 points");
  const auto n = static_cast<double>(sizes.size());
  double sx = 0, sy = 0;
  std::vector<double> x, y;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (!(sizes[i] > 0.0) || !(times[i] > 0.0)) throw DomainError("fit_power_law: values must be positive");
    x.push_back(std::log(sizes[i]));
    y.push_back(std::log(times[i]));
    sx += x.back();
    sy += y.back();
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0) throw DomainError("fit_power_law: sizes must not all be equal");
  PowerLawFit fit;
  fit.exponent = sxy / sxx;
  const double intercept = my - fit.exponent * mx;
  fit.c = std::exp(intercept);
  double ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (intercept + fit.exponent * x[i]);
    ss_res += r * r;
  }
  fit.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  if (ss_res <= 1e-24) fit.r2 = 1.0;
  return fit;
}

}  // namespace tempo
