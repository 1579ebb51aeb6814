#include "tempo/num/params.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "tempo/error.hpp"

namespace tempo::num {

using nlohmann::json;

const Array2& ParamStore::at(std::string_view name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw ContractError("missing parameter '" + std::string(name) + "'");
  return it->second;
}

Array2& ParamStore::at(std::string_view name) {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw ContractError("missing parameter '" + std::string(name) + "'");
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, a] : arrays_) n += a.size();
  return n;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  for (const auto& [name, a] : arrays_) out.set(name, Array2(a.rows(), a.cols()));
  return out;
}

void ParamStore::zero() {
  for (auto& [_, a] : arrays_) a.fill(0.0);
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (arrays_.size() != other.arrays_.size()) return false;
  auto it = other.arrays_.begin();
  for (const auto& [name, a] : arrays_) {
    if (it->first != name || !it->second.same_shape(a)) return false;
    ++it;
  }
  return true;
}

void polyak_update(ParamStore& target, const ParamStore& online, double tau) {
  if (!target.same_layout(online)) throw ContractError("polyak_update: parameter layouts differ");
  auto src = online.begin();
  for (auto& [name, dst] : target) {
    auto in = src->second.data();
    auto out = dst.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = tau * in[i] + (1.0 - tau) * out[i];
    ++src;
  }
}

void adam_step(ParamStore& params, const GradStore& grads, AdamState& state, const AdamConfig& cfg) {
  if (!params.same_layout(grads)) throw ContractError("adam_step: gradient layout does not match parameters");
  if (state.m.size() == 0) {
    state.m = params.zeros_like();
    state.v = params.zeros_like();
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    const auto g = grads.at(name).data();
    auto m = state.m.at(name).data();
    auto v = state.v.at(name).data();
    auto w = p.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double clip_grad_norm(GradStore& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, g] : grads) {
    for (double v : g.data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [_, g] : grads) g *= s;
  }
  return norm;
}

std::string params_to_json(const ParamStore& params, std::string_view meta_json) {
  json doc;
  doc["version"] = kParamFormatVersion;
  doc["meta"] = json::parse(meta_json);
  json arrays = json::object();
  for (const auto& [name, a] : params) {
    if (!a.all_finite()) throw NumericError("parameter '" + name + "' holds a non-finite value");
    arrays[name] = {{"rows", a.rows()}, {"cols", a.cols()}, {"data", std::vector<double>(a.data().begin(), a.data().end())}};
  }
  doc["params"] = std::move(arrays);
  return doc.dump() + "\n";
}

ParamStore params_from_json(std::string_view text, std::string* meta_json) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("parameter file: ") + e.what());
  }
  if (!doc.contains("version") || doc["version"].get<int>() != kParamFormatVersion) {
    throw ParseError("parameter file: unsupported version");
  }
  ParamStore out;
  for (const auto& [name, entry] : doc.at("params").items()) {
    const auto rows = entry.at("rows").get<std::size_t>();
    const auto cols = entry.at("cols").get<std::size_t>();
    auto data = entry.at("data").get<std::vector<double>>();
    if (data.size() != rows * cols) throw ParseError("parameter '" + name + "': shape header does not match data");
    out.set(name, Array2(rows, cols, std::move(data)));
  }
  if (meta_json) *meta_json = doc.contains("meta") ? doc["meta"].dump() : "{}";
  return out;
}

}  // namespace tempo::num
