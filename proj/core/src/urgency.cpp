#include "tempo/urgency.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "tempo/error.hpp"

namespace tempo {

using num::Array2;
using num::Tape;
using num::Var;

std::string_view to_string(BinScheme scheme) {
  switch (scheme) {
    case BinScheme::kUniform: return "uniform";
    case BinScheme::kLogSpaced: return "log";
    case BinScheme::kKMeans: return "kmeans";
  }
  return "uniform";
}

BinScheme parse_bin_scheme(std::string_view text) {
  if (text == "uniform") return BinScheme::kUniform;
  if (text == "log" || text == "log_spaced") return BinScheme::kLogSpaced;
  if (text == "kmeans") return BinScheme::kKMeans;
  throw ContractError("unknown bin scheme '" + std::string(text) + "' (expected uniform|log|kmeans)");
}

QuantizerConfig resolve_quantizer(QuantizerConfig cfg, std::span<const TaskSpec> tasks) {
  if (cfg.Q < 2) throw ContractError("quantizer: Q must be at least 2");
  if (cfg.s_max <= 0.0) {
    if (cfg.delta > 0.0) {
      cfg.s_max = cfg.delta * cfg.Q;
    } else {
      Tick p = 0;
      for (const auto& t : tasks) p = std::max(p, t.period);
      if (p <= 0) throw ContractError("quantizer: cannot derive S_max from an empty task set");
      cfg.s_max = static_cast<double>(p);
    }
  }
  if (cfg.delta <= 0.0) cfg.delta = cfg.s_max / cfg.Q;
  if (cfg.reserve && cfg.reserve_threshold <= 0.0) cfg.reserve_threshold = (cfg.Q - 1) * cfg.delta;
  if (cfg.scheme == BinScheme::kKMeans && cfg.centers.empty() && !tasks.empty()) {
    // Slack a job shows after waiting tau ticks, for every tau inside its window.
    std::vector<double> samples;
    for (const auto& t : tasks) {
      for (Tick tau = 0; tau < t.deadline; ++tau) samples.push_back(static_cast<double>(t.deadline - t.wcet - tau));
    }
    std::vector<double> uniq = samples;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    const int k = std::min(cfg.Q, static_cast<int>(uniq.size()));
    cfg.centers = fit_kmeans_bins(samples, k).centers;
    cfg.centers.erase(std::unique(cfg.centers.begin(), cfg.centers.end()), cfg.centers.end());
  }
  validate_quantizer(cfg);
  return cfg;
}

void validate_quantizer(const QuantizerConfig& cfg) {
  if (cfg.Q < 2) throw ContractError("quantizer: Q must be at least 2");
  if (!(cfg.delta > 0.0)) throw ContractError("quantizer: delta must be positive");
  if (cfg.scheme == BinScheme::kLogSpaced && !(cfg.s_max > 0.0)) {
    throw ContractError("quantizer: log bins need a positive S_max");
  }
  if (cfg.scheme == BinScheme::kKMeans) {
    if (cfg.centers.empty() || static_cast<int>(cfg.centers.size()) > cfg.Q) {
      throw ContractError("quantizer: kmeans needs between 1 and Q centers");
    }
    if (!std::is_sorted(cfg.centers.begin(), cfg.centers.end())) {
      throw ContractError("quantizer: kmeans centers must be ascending");
    }
  }
  if (cfg.reserve && cfg.Q < 3) throw ContractError("quantizer: reserve mode needs Q >= 3");
}

namespace {

int raw_bin(double s, const QuantizerConfig& cfg) {
  const int top = cfg.Q - 1;
  switch (cfg.scheme) {
    case BinScheme::kUniform: {
      const double b = std::floor(s / cfg.delta);
      return static_cast<int>(std::clamp(b, 0.0, static_cast<double>(top)));
    }
    case BinScheme::kLogSpaced: {
      const double b = std::floor(cfg.Q * std::log1p(std::max(s, 0.0)) / std::log1p(cfg.s_max));
      return static_cast<int>(std::clamp(b, 0.0, static_cast<double>(top)));
    }
    case BinScheme::kKMeans: {
      // Centers are sorted, so the nearest one is found by bisection; ties go low.
      const auto& c = cfg.centers;
      auto it = std::lower_bound(c.begin(), c.end(), s);
      if (it == c.begin()) return 0;
      if (it == c.end()) return static_cast<int>(c.size()) - 1;
      const auto hi = static_cast<int>(it - c.begin());
      return (s - c[hi - 1] <= c[hi] - s) ? hi - 1 : hi;
    }
  }
  return 0;
}

}  // namespace

int quantize(Tick s, const QuantizerConfig& cfg) {
  const auto x = static_cast<double>(s);
  if (cfg.reserve) {
    if (x >= cfg.reserve_threshold) return cfg.Q - 1;
    return std::min(raw_bin(x, cfg), cfg.Q - 2);
  }
  return raw_bin(x, cfg);
}

KMeansReport fit_kmeans_bins(std::span<const double> samples, int Q, std::uint64_t seed) {
  if (Q < 1) throw ContractError("fit_kmeans_bins: Q must be positive");
  if (samples.size() < static_cast<std::size_t>(Q)) {
    throw ContractError("fit_kmeans_bins: need at least Q samples, got " + std::to_string(samples.size()));
  }
  std::vector<double> xs(samples.begin(), samples.end());
  std::sort(xs.begin(), xs.end());
  std::vector<double> uniq = xs;
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

  KMeansReport report;
  report.degenerate = uniq.size() < static_cast<std::size_t>(Q);

  // k-means++ seeding.
  std::mt19937_64 rng(seed);
  std::vector<double> centers;
  centers.reserve(static_cast<std::size_t>(Q));
  centers.push_back(xs[std::uniform_int_distribution<std::size_t>(0, xs.size() - 1)(rng)]);
  std::vector<double> d2(xs.size());
  while (centers.size() < static_cast<std::size_t>(Q)) {
    double total = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, (xs[i] - c) * (xs[i] - c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(centers.back());
      continue;
    }
    double r = std::uniform_real_distribution<double>(0.0, total)(rng);
    std::size_t pick = xs.size() - 1;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (d2[i] <= 0.0) continue;
      r -= d2[i];
      if (r < 0.0) {
        pick = i;
        break;
      }
    }
    while (d2[pick] <= 0.0 && pick > 0) --pick;
    centers.push_back(xs[pick]);
  }
  std::sort(centers.begin(), centers.end());

  std::vector<double> sums(centers.size());
  std::vector<std::size_t> counts(centers.size());
  for (int iter = 0; iter < 100; ++iter) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    double inertia = 0.0;
    for (double x : xs) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < centers.size(); ++k) {
        const double d = (x - centers[k]) * (x - centers[k]);
        if (d < bd) {
          bd = d;
          best = k;
        }
      }
      sums[best] += x;
      ++counts[best];
      inertia += bd;
    }
    report.inertia.push_back(inertia);
    report.iterations = iter + 1;
    double shift = 0.0;
    for (std::size_t k = 0; k < centers.size(); ++k) {
      if (counts[k] == 0) continue;
      const double next = sums[k] / static_cast<double>(counts[k]);
      shift = std::max(shift, std::abs(next - centers[k]));
      centers[k] = next;
    }
    std::sort(centers.begin(), centers.end());
    if (shift < 1e-6) break;
  }
  report.centers = std::move(centers);
  return report;
}

double short_slack_fraction(std::span<const JobInstance> jobs, Tick clock, double delta) {
  if (jobs.empty()) return 0.0;
  std::size_t n = 0;
  for (const auto& j : jobs) {
    if (static_cast<double>(slack(j, clock)) < delta) ++n;
  }
  return static_cast<double>(n) / static_cast<double>(jobs.size());
}

TokenBatch make_token_batch(Tick clock, std::span<const JobInstance> jobs, const QuantizerConfig& cfg,
                            std::size_t pad_to) {
  TokenBatch b;
  const std::size_t n = jobs.size() + 1;
  const std::size_t rows = std::max(n, pad_to);
  b.task_id.reserve(rows);
  b.task_id.push_back(kIdle);
  b.bin.push_back(-1);
  b.rem_frac.push_back(0.0);
  b.time_frac.push_back(0.0);
  b.deadline.push_back(std::numeric_limits<Tick>::min());
  b.valid.push_back(1);
  b.reserved.push_back(0);
  for (const auto& j : jobs) {
    const int bin = quantize(slack(j, clock), cfg);
    b.task_id.push_back(j.task_id);
    b.bin.push_back(bin);
    b.rem_frac.push_back(static_cast<double>(j.remaining) / static_cast<double>(j.wcet));
    b.time_frac.push_back(static_cast<double>(j.effective_deadline() - clock) / static_cast<double>(j.period));
    b.deadline.push_back(j.effective_deadline());
    b.valid.push_back(1);
    b.reserved.push_back(cfg.reserve && bin == cfg.Q - 1 ? 1 : 0);
  }
  for (std::size_t r = n; r < rows; ++r) {
    b.task_id.push_back(-1);
    b.bin.push_back(-1);
    b.rem_frac.push_back(0.0);
    b.time_frac.push_back(0.0);
    b.deadline.push_back(std::numeric_limits<Tick>::max());
    b.valid.push_back(0);
    b.reserved.push_back(0);
  }
  b.offsets = {0, rows};
  return b;
}

TokenBatch pack(std::span<const TokenBatch> parts) {
  TokenBatch out;
  std::size_t total = 0;
  for (const auto& p : parts) total += p.rows();
  out.task_id.reserve(total);
  for (const auto& p : parts) {
    auto append = [](auto& dst, const auto& src) { dst.insert(dst.end(), src.begin(), src.end()); };
    append(out.task_id, p.task_id);
    append(out.bin, p.bin);
    append(out.rem_frac, p.rem_frac);
    append(out.time_frac, p.time_frac);
    append(out.deadline, p.deadline);
    append(out.valid, p.valid);
    append(out.reserved, p.reserved);
    const std::size_t base = out.offsets.back();
    for (std::size_t s = 1; s < p.offsets.size(); ++s) out.offsets.push_back(base + p.offsets[s]);
  }
  return out;
}

Var embed_tokens(Tape& tape, const num::ParamStore& params, const TokenBatch& batch, bool trainable) {
  for (const char* name : {kIdleToken, kSlackEmbedding, kFeatureProjection}) {
    if (!params.contains(name)) throw ContractError(std::string("tokenizer: missing parameter '") + name + "'");
  }
  auto get = [&](const char* name) {
    return trainable ? tape.param(params, name) : tape.constant(params.at(name));
  };
  const std::size_t rows = batch.rows();
  const int q = static_cast<int>(params.at(kSlackEmbedding).rows());
  std::vector<int> slack_idx(rows, -1), idle_idx(rows, -1), reserve_idx(rows, -1);
  Array2 feats(rows, 2);
  bool any_reserved = false;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!batch.valid[r]) continue;
    if (batch.task_id[r] == kIdle) {
      idle_idx[r] = 0;
      continue;
    }
    if (batch.bin[r] < 0 || batch.bin[r] >= q) {
      throw ContractError("tokenizer: bin " + std::to_string(batch.bin[r]) + " outside embedding table of " +
                          std::to_string(q) + " rows");
    }
    slack_idx[r] = batch.bin[r];
    feats(r, 0) = batch.rem_frac[r];
    feats(r, 1) = batch.time_frac[r];
    if (batch.reserved[r]) {
      reserve_idx[r] = 0;
      any_reserved = true;
    }
  }
  Var x = num::embedding_lookup(get(kSlackEmbedding), slack_idx);
  x = num::add(x, num::embedding_lookup(get(kIdleToken), idle_idx));
  x = num::add(x, num::matmul(tape.constant(std::move(feats)), get(kFeatureProjection)));
  if (any_reserved) {
    if (!params.contains(kReserveBias)) throw ContractError("tokenizer: reserve mode needs 'tok.reserve'");
    x = num::add(x, num::embedding_lookup(get(kReserveBias), reserve_idx));
  }
  return x;
}

TokenBatch tokenize(const SimState& state, const num::ParamStore& params, const QuantizerConfig& cfg,
                    std::size_t pad_to) {
  TokenBatch b = make_token_batch(state.clock, state.jobs, cfg, pad_to);
  Tape tape;
  b.X = embed_tokens(tape, params, b, false).value();
  return b;
}

}  // namespace tempo
