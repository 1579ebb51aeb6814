#include "tempo/num/tape.hpp"

#include <algorithm>
#include <cmath>

#include "tempo/error.hpp"

namespace tempo::num {

const Array2& Var::value() const {
  if (tape_ == nullptr) throw ContractError("Var: not bound to a tape");
  return tape_->value(id_);
}

Var Tape::constant(Array2 value) { return record(std::move(value), false, nullptr); }

Var Tape::leaf(Array2 value) { return record(std::move(value), true, nullptr); }

Var Tape::param(const ParamStore& store, const std::string& name) {
  if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Var(this, it->second);
  Var v = record(store.at(name), true, nullptr);
  nodes_[v.id()].param_name = name;
  param_nodes_.emplace(name, v.id());
  return v;
}

Var Tape::record(Array2 value, bool requires_grad, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Array2& Tape::grad_buffer(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty() && !node.value.empty()) node.grad = Array2(node.value.rows(), node.value.cols());
  return node.grad;
}

void Tape::accumulate(std::size_t id, const Array2& delta) {
  if (!nodes_[id].requires_grad) return;
  grad_buffer(id) += delta;
}

void Tape::backward(Var loss) {
  if (loss.value().size() != 1) throw ContractError("backward: loss must be 1x1, got " + loss.value().shape_string());
  backward(loss, Array2(1, 1, 1.0));
}

void Tape::backward(Var output, const Array2& seed) {
  if (output.tape() != this) throw ContractError("backward: output belongs to another tape");
  if (!seed.same_shape(output.value())) throw ContractError("backward: seed shape mismatch");
  for (auto& node : nodes_) node.grad = Array2();
  backward_visits_ = 0;
  if (!nodes_[output.id()].requires_grad) return;
  grad_buffer(output.id()) += seed;
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
    ++backward_visits_;
    node.backward(*this, i);
  }
}

void Tape::collect_grads(GradStore& grads) const {
  for (const auto& [name, id] : param_nodes_) {
    const auto& g = nodes_[id].grad;
    if (!grads.contains(name)) grads.set(name, Array2(nodes_[id].value.rows(), nodes_[id].value.cols()));
    if (!g.empty()) grads.at(name) += g;
  }
}

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape()) throw ContractError(std::string(op) + ": operands on different tapes");
  return *a.tape();
}

bool needs(Tape& t, Var v) { return t.requires_grad(v.id()); }

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  Array2 out = matmul(a.value(), b.value());
  const auto ia = a.id(), ib = b.id();
  return t.record(std::move(out), needs(t, a) || needs(t, b), [ia, ib](Tape& tp, std::size_t self) {
    const Array2& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, matmul_nt(g, tp.value(ib)));
    if (tp.requires_grad(ib)) tp.accumulate(ib, matmul_tn(tp.value(ia), g));
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b, "add");
  if (!a.value().same_shape(b.value())) {
    throw ContractError("add: " + a.value().shape_string() + " + " + b.value().shape_string());
  }
  Array2 out = a.value();
  out += b.value();
  const auto ia = a.id(), ib = b.id();
  return t.record(std::move(out), needs(t, a) || needs(t, b), [ia, ib](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self));
    tp.accumulate(ib, tp.grad(self));
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b, "sub");
  if (!a.value().same_shape(b.value())) {
    throw ContractError("sub: " + a.value().shape_string() + " - " + b.value().shape_string());
  }
  Array2 out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const auto ia = a.id(), ib = b.id();
  return t.record(std::move(out), needs(t, a) || needs(t, b), [ia, ib](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self));
    if (tp.requires_grad(ib)) {
      Array2 neg = tp.grad(self);
      neg *= -1.0;
      tp.accumulate(ib, neg);
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b, "mul");
  if (!a.value().same_shape(b.value())) {
    throw ContractError("mul: " + a.value().shape_string() + " * " + b.value().shape_string());
  }
  Array2 out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const auto ia = a.id(), ib = b.id();
  return t.record(std::move(out), needs(t, a) || needs(t, b), [ia, ib](Tape& tp, std::size_t self) {
    const Array2& g = tp.grad(self);
    if (tp.requires_grad(ia)) {
      Array2 d = g;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= tp.value(ib)[i];
      tp.accumulate(ia, d);
    }
    if (tp.requires_grad(ib)) {
      Array2 d = g;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= tp.value(ia)[i];
      tp.accumulate(ib, d);
    }
  });
}

Var mul_scalar(Var a, double s) {
  Tape& t = *a.tape();
  Array2 out = a.value();
  out *= s;
  const auto ia = a.id();
  return t.record(std::move(out), needs(t, a), [ia, s](Tape& tp, std::size_t self) {
    Array2 d = tp.grad(self);
    d *= s;
    tp.accumulate(ia, d);
  });
}

Var add_row(Var a, Var row) {
  Tape& t = same_tape(a, row, "add_row");
  const auto& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != a.value().cols()) {
    throw ContractError("add_row: " + a.value().shape_string() + " + row " + rv.shape_string());
  }
  Array2 out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += rv[j];
  }
  const auto ia = a.id(), ir = row.id();
  return t.record(std::move(out), needs(t, a) || needs(t, row), [ia, ir](Tape& tp, std::size_t self) {
    const Array2& g = tp.grad(self);
    tp.accumulate(ia, g);
    if (tp.requires_grad(ir)) {
      Array2 d(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) d[j] += g(i, j);
      }
      tp.accumulate(ir, d);
    }
  });
}

Var add_const(Var a, const Array2& c) {
  Tape& t = *a.tape();
  Array2 out = a.value();
  out += c;
  const auto ia = a.id();
  return t.record(std::move(out), needs(t, a), [ia](Tape& tp, std::size_t self) { tp.accumulate(ia, tp.grad(self)); });
}

Var transpose(Var a) {
  Tape& t = *a.tape();
  const auto ia = a.id();
  return t.record(transpose(a.value()), needs(t, a),
                  [ia](Tape& tp, std::size_t self) { tp.accumulate(ia, transpose(tp.grad(self))); });
}

Var relu(Var a) {
  Tape& t = *a.tape();
  Array2 out = a.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  const auto ia = a.id();
  return t.record(std::move(out), needs(t, a), [ia](Tape& tp, std::size_t self) {
    Array2 d = tp.grad(self);
    const Array2& x = tp.value(ia);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (x[i] <= 0.0) d[i] = 0.0;
    }
    tp.accumulate(ia, d);
  });
}

Var softmax_rows(Var a) {
  Tape& t = *a.tape();
  const auto ia = a.id();
  return t.record(softmax_rows(a.value()), needs(t, a), [ia](Tape& tp, std::size_t self) {
    const Array2& y = tp.value(self);
    const Array2& g = tp.grad(self);
    Array2 d(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) d(i, j) = y(i, j) * (g(i, j) - dot);
    }
    tp.accumulate(ia, d);
  });
}

Var layer_norm(Var x, Var gain, Var bias) {
  Tape& t = same_tape(x, gain, "layer_norm");
  same_tape(x, bias, "layer_norm");
  const Array2& xv = x.value();
  const std::size_t n = xv.rows(), c = xv.cols();
  if (c < 2) throw ContractError("layer_norm: needs at least 2 columns");
  if (gain.value().rows() != 1 || gain.value().cols() != c || !gain.value().same_shape(bias.value())) {
    throw ContractError("layer_norm: gain/bias must be 1x" + std::to_string(c));
  }
  Array2 xhat(n, c);
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = xv.row(i);
    double mu = 0.0;
    for (double v : r) mu += v;
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (double v : r) var += (v - mu) * (v - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < c; ++j) xhat(i, j) = (r[j] - mu) * inv_std[i];
  }
  Array2 out(n, c);
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) out(i, j) = xhat(i, j) * gv[j] + bv[j];
  }
  const auto ix = x.id(), ig = gain.id(), ib = bias.id();
  const bool rg = needs(t, x) || needs(t, gain) || needs(t, bias);
  return t.record(std::move(out), rg,
                  [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, std::size_t self) {
                    const Array2& g = tp.grad(self);
                    const Array2& gv = tp.value(ig);
                    const std::size_t n = g.rows(), c = g.cols();
                    if (tp.requires_grad(ig) || tp.requires_grad(ib)) {
                      Array2 dg(1, c), db(1, c);
                      for (std::size_t i = 0; i < n; ++i) {
                        for (std::size_t j = 0; j < c; ++j) {
                          dg[j] += g(i, j) * xhat(i, j);
                          db[j] += g(i, j);
                        }
                      }
                      tp.accumulate(ig, dg);
                      tp.accumulate(ib, db);
                    }
                    if (tp.requires_grad(ix)) {
                      Array2 dx(n, c);
                      const double inv_c = 1.0 / static_cast<double>(c);
                      for (std::size_t i = 0; i < n; ++i) {
                        double mean_d = 0.0, mean_dx = 0.0;
                        for (std::size_t j = 0; j < c; ++j) {
                          const double dxh = g(i, j) * gv[j];
                          mean_d += dxh;
                          mean_dx += dxh * xhat(i, j);
                        }
                        mean_d *= inv_c;
                        mean_dx *= inv_c;
                        for (std::size_t j = 0; j < c; ++j) {
                          const double dxh = g(i, j) * gv[j];
                          dx(i, j) = inv_std[i] * (dxh - mean_d - xhat(i, j) * mean_dx);
                        }
                      }
                      tp.accumulate(ix, dx);
                    }
                  });
}

Var embedding_lookup(Var table, std::span<const int> indices) {
  Tape& t = *table.tape();
  const Array2& e = table.value();
  Array2 out(indices.size(), e.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx == -1) continue;
    if (idx < 0 || static_cast<std::size_t>(idx) >= e.rows()) {
      throw ContractError("embedding_lookup: index " + std::to_string(idx) + " outside [0, " +
                          std::to_string(e.rows()) + ")");
    }
    std::copy(e.row(static_cast<std::size_t>(idx)).begin(), e.row(static_cast<std::size_t>(idx)).end(),
              out.row(i).begin());
  }
  const auto it = table.id();
  return t.record(std::move(out), needs(t, table),
                  [it, idx = std::vector<int>(indices.begin(), indices.end())](Tape& tp, std::size_t self) {
                    const Array2& g = tp.grad(self);
                    Array2& dst = tp.grad_buffer(it);
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      if (idx[i] < 0) continue;
                      auto row = dst.row(static_cast<std::size_t>(idx[i]));
                      const auto src = g.row(i);
                      for (std::size_t j = 0; j < row.size(); ++j) row[j] += src[j];
                    }
                  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& t = *a.tape();
  const Array2& av = a.value();
  if (begin > end || end > av.cols()) throw ContractError("slice_cols: bad range");
  const std::size_t w = end - begin;
  Array2 out(av.rows(), w);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    for (std::size_t j = 0; j < w; ++j) out(i, j) = av(i, begin + j);
  }
  const auto ia = a.id();
  return t.record(std::move(out), needs(t, a), [ia, begin, w](Tape& tp, std::size_t self) {
    const Array2& g = tp.grad(self);
    Array2& dst = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < w; ++j) dst(i, begin + j) += g(i, j);
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape& t = *parts[0].tape();
  const std::size_t n = parts[0].value().rows();
  std::size_t total = 0;
  bool rg = false;
  std::vector<std::size_t> ids, widths;
  for (const auto& p : parts) {
    if (p.tape() != &t || p.value().rows() != n) throw ContractError("concat_cols: incompatible parts");
    total += p.value().cols();
    rg = rg || t.requires_grad(p.id());
    ids.push_back(p.id());
    widths.push_back(p.value().cols());
  }
  Array2 out(n, total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Array2& pv = p.value();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, off + j) = pv(i, j);
    }
    off += pv.cols();
  }
  return t.record(std::move(out), rg, [ids, widths](Tape& tp, std::size_t self) {
    const Array2& g = tp.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(ids[k])) {
        Array2& dst = tp.grad_buffer(ids[k]);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          for (std::size_t j = 0; j < widths[k]; ++j) dst(i, j) += g(i, off + j);
        }
      }
      off += widths[k];
    }
  });
}

Var gather(Var a, std::span<const std::pair<std::size_t, std::size_t>> entries) {
  Tape& t = *a.tape();
  const Array2& av = a.value();
  Array2 out(entries.size(), 1);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto [r, c] = entries[k];
    if (r >= av.rows() || c >= av.cols()) throw ContractError("gather: entry out of range");
    out[k] = av(r, c);
  }
  const auto ia = a.id();
  return t.record(std::move(out), needs(t, a),
                  [ia, e = std::vector<std::pair<std::size_t, std::size_t>>(entries.begin(), entries.end())](
                      Tape& tp, std::size_t self) {
                    const Array2& g = tp.grad(self);
                    Array2& dst = tp.grad_buffer(ia);
                    for (std::size_t k = 0; k < e.size(); ++k) dst(e[k].first, e[k].second) += g[k];
                  });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const auto ia = a.id();
  return t.record(Array2(1, 1, s), needs(t, a), [ia](Tape& tp, std::size_t self) {
    const Array2& x = tp.value(ia);
    tp.accumulate(ia, Array2(x.rows(), x.cols(), tp.grad(self)[0]));
  });
}

Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  if (n == 0) throw ContractError("mean: empty input");
  return mul_scalar(sum(a), 1.0 / n);
}

Var square(Var a) { return mul(a, a); }

Var group_log_softmax(Var q, const std::vector<std::vector<std::size_t>>& groups) {
  Tape& t = *q.tape();
  const Array2& qv = q.value();
  if (qv.cols() != 1) throw ContractError("group_log_softmax: expects a column");
  Array2 out(qv.rows(), 1);
  for (const auto& grp : groups) {
    if (grp.empty()) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (auto r : grp) {
      if (r >= qv.rows()) throw ContractError("group_log_softmax: row out of range");
      mx = std::max(mx, qv[r]);
    }
    double s = 0.0;
    for (auto r : grp) s += std::exp(qv[r] - mx);
    const double lse = mx + std::log(s);
    for (auto r : grp) out[r] = qv[r] - lse;
  }
  const auto iq = q.id();
  return t.record(std::move(out), needs(t, q), [iq, groups](Tape& tp, std::size_t self) {
    const Array2& g = tp.grad(self);
    const Array2& y = tp.value(self);
    Array2 d(g.rows(), 1);
    for (const auto& grp : groups) {
      double gsum = 0.0;
      for (auto r : grp) gsum += g[r];
      for (auto r : grp) d[r] = g[r] - std::exp(y[r]) * gsum;
    }
    tp.accumulate(iq, d);
  });
}

}  // namespace tempo::num
