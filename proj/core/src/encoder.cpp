#include "tempo/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <random>

#include "tempo/error.hpp"

namespace tempo {

using num::Array2;
using num::Tape;
using num::Var;

namespace {

const double* cptr(const Array2& a, std::size_t r, std::size_t c) { return a.data().data() + r * a.cols() + c; }
double* mptr(Array2& a, std::size_t r, std::size_t c) { return a.data().data() + r * a.cols() + c; }

int ceil_sqrt(int n) {
  int b = 0;
  while (static_cast<std::int64_t>(b) * b < n) ++b;
  return b;
}

int ceil_log2(int n) {
  int m = 0;
  while ((std::int64_t{1} << m) < n) ++m;
  return m;
}

int floor_log2(int n) {
  int m = 0;
  while ((n >> (m + 1)) > 0) ++m;
  return m;
}

int parse_int(std::string_view text) {
  try {
    std::size_t used = 0;
    const std::string s(text);
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ContractError("sparse: bad integer '" + std::string(text) + "'");
  }
}

}  // namespace

SparseConfig parse_sparse(std::string_view text) {
  SparseConfig cfg;
  if (text == "dense") return cfg;
  cfg.mode = SparseConfig::Mode::kBlockTopK;
  if (text == "auto") return cfg;
  const auto c1 = text.find(',');
  const auto c2 = c1 == std::string_view::npos ? c1 : text.find(',', c1 + 1);
  if (c2 == std::string_view::npos) throw ContractError("sparse: expected dense|auto|B,k,M, got '" + std::string(text) + "'");
  cfg.automatic = false;
  cfg.B = parse_int(text.substr(0, c1));
  cfg.k = parse_int(text.substr(c1 + 1, c2 - c1 - 1));
  cfg.M = parse_int(text.substr(c2 + 1));
  if (cfg.B < 1 || cfg.k < 1 || cfg.M < 1) throw ContractError("sparse: B, k and M must be positive");
  return cfg;
}

std::string to_string(const SparseConfig& cfg) {
  if (cfg.mode == SparseConfig::Mode::kDense) return "dense";
  if (cfg.automatic) return "auto";
  return std::to_string(cfg.B) + "," + std::to_string(cfg.k) + "," + std::to_string(cfg.M);
}

SparseParams auto_sparse_params(int n) {
  if (n < 1) n = 1;
  SparseParams p;
  p.B = ceil_sqrt(n);
  p.k = n <= 100 ? std::max(1, p.B / 10) : floor_log2(p.B) + 1;
  p.M = std::max(1, ceil_log2(n));
  p.C = (n + p.M - 1) / p.M;
  return p;
}

SparseParams resolve_sparse(const SparseConfig& cfg, int n) {
  SparseParams p;
  if (cfg.automatic) {
    p = auto_sparse_params(n);
  } else {
    p.B = cfg.B;
    p.k = cfg.k;
    p.M = cfg.M;
    p.C = (std::max(n, 1) + p.M - 1) / p.M;
  }
  if (cfg.alpha > 0.0) p.k = std::max(1, static_cast<int>(std::floor(cfg.alpha * p.B)));
  return p;
}

NonzeroCount nonzero_count(int n, const SparseConfig& cfg) {
  NonzeroCount out;
  if (n < 0) throw ContractError("nonzero_count: negative task count");
  out.idle_entries = 2 * static_cast<std::int64_t>(n) + 1;
  if (cfg.mode == SparseConfig::Mode::kDense || n == 0) {
    out.task_entries = static_cast<std::int64_t>(n) * n;
  } else {
    const auto p = resolve_sparse(cfg, n);
    const int chunks = (n + p.C - 1) / p.C;
    for (int c = 0; c < chunks; ++c) {
      const int len = std::min(p.C, n - c * p.C);
      std::int64_t per_query = chunks - 1;
      for (int b = 0; b < len; b += p.B) per_query += std::min(p.k, std::min(p.B, len - b));
      out.task_entries += per_query * len;
    }
  }
  out.total = out.task_entries + out.idle_entries;
  return out;
}

std::vector<char> attention_pattern(const Array2& scores, std::span<const std::size_t> order, const SparseParams& p) {
  const std::size_t rows = scores.rows();
  std::vector<char> allowed(rows * rows, 0);
  for (std::size_t j = 0; j < rows; ++j) allowed[j] = 1;  // idle query sees everything
  for (std::size_t i = 0; i < rows; ++i) allowed[i * rows] = 1;  // everyone sees idle
  const int n = static_cast<int>(order.size());
  if (n == 0) return allowed;
  const int C = std::max(1, p.C);
  const int chunks = (n + C - 1) / C;
  std::vector<int> idx;
  for (int qp = 0; qp < n; ++qp) {
    const std::size_t qi = order[static_cast<std::size_t>(qp)];
    char* keep = allowed.data() + qi * rows;
    const int qc = qp / C;
    for (int c = 0; c < chunks; ++c) {
      const int cs = c * C;
      const int ce = std::min(n, cs + C);
      if (c == qc) {
        for (int bs = cs; bs < ce; bs += p.B) {
          const int be = std::min(ce, bs + p.B);
          idx.resize(static_cast<std::size_t>(be - bs));
          std::iota(idx.begin(), idx.end(), bs);
          const auto take = static_cast<std::size_t>(std::min(p.k, be - bs));
          // Highest scores first; ties go to the earlier sorted position.
          std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(), [&](int a, int b) {
            const double sa = scores(qi, order[static_cast<std::size_t>(a)]);
            const double sb = scores(qi, order[static_cast<std::size_t>(b)]);
            return sa > sb || (sa == sb && a < b);
          });
          for (std::size_t t = 0; t < take; ++t) keep[order[static_cast<std::size_t>(idx[t])]] = 1;
        }
      } else {
        int best = cs;
        for (int kp = cs + 1; kp < ce; ++kp) {
          if (scores(qi, order[static_cast<std::size_t>(kp)]) > scores(qi, order[static_cast<std::size_t>(best)])) best = kp;
        }
        keep[order[static_cast<std::size_t>(best)]] = 1;
      }
    }
  }
  return allowed;
}

void validate_encoder(const EncoderConfig& cfg) {
  if (cfg.layers < 1) throw ContractError("encoder: layers must be >= 1");
  if (cfg.heads < 1 || cfg.d < 1 || cfg.d % cfg.heads != 0) {
    throw ContractError("encoder: d (" + std::to_string(cfg.d) + ") must be divisible by heads (" +
                        std::to_string(cfg.heads) + ")");
  }
  if (cfg.d < 2) throw ContractError("encoder: d must be at least 2 for layer norm");
  if (cfg.d_ff < 1) throw ContractError("encoder: d_ff must be positive");
  if (cfg.sparse.mode == SparseConfig::Mode::kBlockTopK && !cfg.sparse.automatic &&
      (cfg.sparse.B < 1 || cfg.sparse.k < 1 || cfg.sparse.M < 1)) {
    throw ContractError("encoder: sparse B, k and M must be positive");
  }
}

namespace {

Array2 xavier(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Array2 out(rows, cols);
  for (auto& v : out.data()) v = dist(rng);
  return out;
}

std::string lname(int l, const char* leaf) { return "l" + std::to_string(l) + "." + leaf; }

}  // namespace

num::ParamStore init_params(const EncoderConfig& cfg, const QuantizerConfig& quant, std::uint64_t seed) {
  validate_encoder(cfg);
  if (quant.Q < 2) throw ContractError("init_params: Q must be at least 2");
  std::mt19937_64 rng(seed);
  const auto d = static_cast<std::size_t>(cfg.d);
  const auto ff = static_cast<std::size_t>(cfg.d_ff);
  num::ParamStore p;
  p.set(kSlackEmbedding, xavier(static_cast<std::size_t>(quant.Q), d, rng));
  p.set(kIdleToken, xavier(1, d, rng));
  p.set(kFeatureProjection, xavier(2, d, rng));
  if (quant.reserve) p.set(kReserveBias, Array2(1, d));
  for (int l = 0; l < cfg.layers; ++l) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) p.set(lname(l, w), xavier(d, d, rng));
    for (const char* b : {"bq", "bk", "bv", "bo"}) p.set(lname(l, b), Array2(1, d));
    p.set(lname(l, "ln1.g"), Array2(1, d, 1.0));
    p.set(lname(l, "ln1.b"), Array2(1, d));
    p.set(lname(l, "ln2.g"), Array2(1, d, 1.0));
    p.set(lname(l, "ln2.b"), Array2(1, d));
    p.set(lname(l, "ff.w1"), xavier(d, ff, rng));
    p.set(lname(l, "ff.b1"), Array2(1, ff));
    p.set(lname(l, "ff.w2"), xavier(ff, d, rng));
    p.set(lname(l, "ff.b2"), Array2(1, d));
  }
  p.set("head.w", xavier(d, 1, rng));
  p.set("head.b", Array2(1, 1));
  return p;
}

namespace {

// Softmax attention restricted to each sample's rows, all heads at once.
// Probabilities are kept for the backward pass.
struct AttentionCache {
  std::vector<std::size_t> offsets;
  int heads = 1;
  std::size_t dh = 1;
  // probs[s][h] is n_s x n_s.
  std::vector<std::vector<Array2>> probs;
};

Var segmented_attention(Var q, Var k, Var v, const TokenBatch& batch, const EncoderConfig& cfg,
                        const std::vector<std::vector<std::size_t>>& orders,
                        std::shared_ptr<const AttentionCache>* cache_out) {
  Tape& tape = *q.tape();
  const Array2& Q = q.value();
  const Array2& K = k.value();
  const Array2& V = v.value();
  const std::size_t rows = Q.rows();
  const std::size_t d = Q.cols();
  auto cache = std::make_shared<AttentionCache>();
  cache->offsets = batch.offsets;
  cache->heads = cfg.heads;
  cache->dh = d / static_cast<std::size_t>(cfg.heads);
  const std::size_t dh = cache->dh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool sparse = cfg.sparse.mode == SparseConfig::Mode::kBlockTopK;

  Array2 out(rows, d);
  cache->probs.resize(batch.samples());
  for (std::size_t s = 0; s < batch.samples(); ++s) {
    const std::size_t o = batch.offsets[s];
    const std::size_t n = batch.sample_rows(s);
    const auto& order = orders[s];
    const SparseParams sp = sparse ? resolve_sparse(cfg.sparse, static_cast<int>(order.size())) : SparseParams{};
    auto& per_head = cache->probs[s];
    per_head.assign(static_cast<std::size_t>(cfg.heads), Array2(n, n));
    for (int h = 0; h < cfg.heads; ++h) {
      const std::size_t c0 = static_cast<std::size_t>(h) * dh;
      Array2 S(n, n);
      for (std::size_t i = 0; i < n; ++i) {
        const double* qi = cptr(Q, o + i, c0);
        for (std::size_t j = 0; j < n; ++j) {
          const double* kj = cptr(K, o + j, c0);
          double acc = 0.0;
          for (std::size_t c = 0; c < dh; ++c) acc += qi[c] * kj[c];
          S(i, j) = acc * scale;
        }
      }
      std::vector<char> allowed;
      if (sparse) allowed = attention_pattern(S, order, sp);
      // Masked softmax: excluded keys get exactly zero weight, the same result
      // as adding a -1e9 bias before a plain softmax.
      Array2& P = per_head[static_cast<std::size_t>(h)];
      std::vector<char> keep(n);
      for (std::size_t i = 0; i < n; ++i) {
        const bool qvalid = batch.valid[o + i] != 0;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          bool k = qvalid ? batch.valid[o + j] != 0 : i == j;
          if (k && sparse && qvalid) k = allowed[i * n + j] != 0;
          keep[j] = k;
          if (k) mx = std::max(mx, S(i, j));
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double e = keep[j] ? std::exp(S(i, j) - mx) : 0.0;
          P(i, j) = e;
          sum += e;
        }
        for (std::size_t j = 0; j < n; ++j) P(i, j) /= sum;
      }
      for (std::size_t i = 0; i < n; ++i) {
        double* oi = mptr(out, o + i, c0);
        for (std::size_t j = 0; j < n; ++j) {
          const double pij = P(i, j);
          if (pij == 0.0) continue;
          const double* vj = cptr(V, o + j, c0);
          for (std::size_t c = 0; c < dh; ++c) oi[c] += pij * vj[c];
        }
      }
    }
  }

  const auto iq = q.id(), ik = k.id(), iv = v.id();
  const bool rg = tape.requires_grad(iq) || tape.requires_grad(ik) || tape.requires_grad(iv);
  Var result = tape.record(std::move(out), rg, [iq, ik, iv, cache, scale](Tape& tp, std::size_t self) {
    const Array2& G = tp.grad(self);
    const Array2& Q = tp.value(iq);
    const Array2& K = tp.value(ik);
    const Array2& V = tp.value(iv);
    Array2 dQ(Q.rows(), Q.cols()), dK(K.rows(), K.cols()), dV(V.rows(), V.cols());
    const std::size_t dh = cache->dh;
    for (std::size_t s = 0; s + 1 < cache->offsets.size(); ++s) {
      const std::size_t o = cache->offsets[s];
      const std::size_t n = cache->offsets[s + 1] - o;
      for (int h = 0; h < cache->heads; ++h) {
        const std::size_t c0 = static_cast<std::size_t>(h) * dh;
        const Array2& P = cache->probs[s][static_cast<std::size_t>(h)];
        for (std::size_t i = 0; i < n; ++i) {
          const double* gi = cptr(G, o + i, c0);
          // dP_ij = g_i . v_j ; dS = P (dP - <dP, P>)
          std::vector<double> dp(n);
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double* vj = cptr(V, o + j, c0);
            double acc = 0.0;
            for (std::size_t c = 0; c < dh; ++c) acc += gi[c] * vj[c];
            dp[j] = acc;
            dot += acc * P(i, j);
          }
          double* dqi = mptr(dQ, o + i, c0);
          const double* qi = cptr(Q, o + i, c0);
          for (std::size_t j = 0; j < n; ++j) {
            const double pij = P(i, j);
            if (pij == 0.0) continue;
            double* dvj = mptr(dV, o + j, c0);
            for (std::size_t c = 0; c < dh; ++c) dvj[c] += pij * gi[c];
            const double ds = pij * (dp[j] - dot) * scale;
            const double* kj = cptr(K, o + j, c0);
            double* dkj = mptr(dK, o + j, c0);
            for (std::size_t c = 0; c < dh; ++c) {
              dqi[c] += ds * kj[c];
              dkj[c] += ds * qi[c];
            }
          }
        }
      }
    }
    tp.accumulate(iq, dQ);
    tp.accumulate(ik, dK);
    tp.accumulate(iv, dV);
  });
  if (cache_out) *cache_out = cache;
  return result;
}

// Task rows of each sample sorted by (deadline, task id), as local indices.
std::vector<std::vector<std::size_t>> deadline_orders(const TokenBatch& batch) {
  std::vector<std::vector<std::size_t>> orders(batch.samples());
  for (std::size_t s = 0; s < batch.samples(); ++s) {
    const std::size_t o = batch.offsets[s];
    auto& ord = orders[s];
    for (std::size_t i = 0; i < batch.sample_rows(s); ++i) {
      if (batch.valid[o + i] && batch.task_id[o + i] != kIdle) ord.push_back(i);
    }
    std::sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) {
      const auto ka = std::make_pair(batch.deadline[o + a], batch.task_id[o + a]);
      const auto kb = std::make_pair(batch.deadline[o + b], batch.task_id[o + b]);
      return ka < kb;
    });
  }
  return orders;
}

void check_finite(const Var& v, int layer, const char* where) {
  if (!v.value().all_finite()) {
    throw NumericError("encoder layer " + std::to_string(layer) + ": non-finite values after " + where);
  }
}

}  // namespace

ForwardResult forward(Tape& tape, const num::ParamStore& params, const TokenBatch& batch, const EncoderConfig& cfg,
                      const ForwardOptions& opts) {
  validate_encoder(cfg);
  if (batch.rows() == 0) throw ContractError("forward: empty token batch");
  auto get = [&](const std::string& name) {
    return opts.trainable ? tape.param(params, name) : tape.constant(params.at(name));
  };
  Var h = embed_tokens(tape, params, batch, opts.trainable);
  if (h.cols() != static_cast<std::size_t>(cfg.d)) {
    throw ContractError("forward: token width " + std::to_string(h.cols()) + " does not match d=" +
                        std::to_string(cfg.d));
  }
  const auto orders = deadline_orders(batch);
  std::shared_ptr<const AttentionCache> last;
  for (int l = 0; l < cfg.layers; ++l) {
    Var q = num::add_row(num::matmul(h, get(lname(l, "wq"))), get(lname(l, "bq")));
    Var k = num::add_row(num::matmul(h, get(lname(l, "wk"))), get(lname(l, "bk")));
    Var v = num::add_row(num::matmul(h, get(lname(l, "wv"))), get(lname(l, "bv")));
    Var a = segmented_attention(q, k, v, batch, cfg, orders, &last);
    Var o = num::add_row(num::matmul(a, get(lname(l, "wo"))), get(lname(l, "bo")));
    Var z = num::layer_norm(num::add(h, o), get(lname(l, "ln1.g")), get(lname(l, "ln1.b")));
    check_finite(z, l, "attention");
    Var f = num::relu(num::add_row(num::matmul(z, get(lname(l, "ff.w1"))), get(lname(l, "ff.b1"))));
    f = num::add_row(num::matmul(f, get(lname(l, "ff.w2"))), get(lname(l, "ff.b2")));
    h = num::layer_norm(num::add(z, f), get(lname(l, "ln2.g")), get(lname(l, "ln2.b")));
    check_finite(h, l, "feed-forward");
  }
  ForwardResult out;
  out.q = num::add_row(num::matmul(h, get("head.w")), get("head.b"));
  check_finite(out.q, cfg.layers - 1, "Q head");
  const Array2& qv = out.q.value();
  out.q_values.resize(qv.rows());
  for (std::size_t r = 0; r < qv.rows(); ++r) {
    out.q_values[r] = batch.valid[r] ? qv[r] : -std::numeric_limits<double>::infinity();
  }
  if (opts.record_attention && last) {
    for (std::size_t s = 0; s < batch.samples(); ++s) {
      const auto& heads = last->probs[s];
      Array2 mean(heads[0].rows(), heads[0].cols());
      for (const auto& p : heads) mean += p;
      mean *= 1.0 / static_cast<double>(heads.size());
      out.attention.mean.push_back(std::move(mean));
      if (opts.per_head) out.attention.per_head.push_back(heads);
    }
  }
  return out;
}

std::vector<double> q_scores(const num::ParamStore& params, const TokenBatch& batch, const EncoderConfig& cfg) {
  Tape tape;
  return forward(tape, params, batch, cfg, ForwardOptions{.trainable = false}).q_values;
}

}  // namespace tempo
