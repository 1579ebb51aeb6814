#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "tempo/num/array.hpp"

namespace tempo::num {

// Named learnable arrays. Ordered by name so iteration (and serialization)
// is deterministic.
class ParamStore {
 public:
  using Map = std::map<std::string, Array2, std::less<>>;

  void set(std::string name, Array2 value) { arrays_[std::move(name)] = std::move(value); }
  bool contains(std::string_view name) const { return arrays_.find(name) != arrays_.end(); }
  const Array2& at(std::string_view name) const;
  Array2& at(std::string_view name);

  std::size_t size() const { return arrays_.size(); }
  std::size_t scalar_count() const;
  auto begin() const { return arrays_.begin(); }
  auto end() const { return arrays_.end(); }
  auto begin() { return arrays_.begin(); }
  auto end() { return arrays_.end(); }

  // Same keys, same shapes, all zeros.
  ParamStore zeros_like() const;
  void zero();
  bool same_layout(const ParamStore& other) const;

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  Map arrays_;
};

// Gradients share the parameter layout.
using GradStore = ParamStore;

// θ⁻ ← τ·θ + (1 − τ)·θ⁻, elementwise. Throws ContractError on layout mismatch.
void polyak_update(ParamStore& target, const ParamStore& online, double tau);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct AdamState {
  ParamStore m;
  ParamStore v;
  std::int64_t step = 0;
};

void adam_step(ParamStore& params, const GradStore& grads, AdamState& state, const AdamConfig& cfg);

// Scales all gradients so their global L2 norm is at most `max_norm`.
// Returns the norm before clipping.
double clip_grad_norm(GradStore& grads, double max_norm);

// JSON document {"version":1,"meta":{...},"params":{name:{"rows","cols","data"}}}.
// Doubles are written with round-trip precision.
std::string params_to_json(const ParamStore& params, std::string_view meta_json = "{}");
ParamStore params_from_json(std::string_view text, std::string* meta_json = nullptr);

inline constexpr int kParamFormatVersion = 1;

}  // namespace tempo::num
