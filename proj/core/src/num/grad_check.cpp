#include "tempo/num/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "tempo/error.hpp"

namespace tempo::num {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const std::function<double(const ParamStore&)>& f, const ParamStore& params,
                           const GradStore& analytic, double h, std::size_t max_coords, std::uint64_t seed) {
  if (!params.same_layout(analytic)) throw ContractError("grad_check: gradient layout does not match parameters");
  struct Coord {
    std::string name;
    std::size_t index;
  };
  std::vector<Coord> coords;
  for (const auto& [name, a] : params) {
    for (std::size_t i = 0; i < a.size(); ++i) coords.push_back({name, i});
  }
  if (max_coords > 0 && coords.size() > max_coords) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coords);
  }

  GradCheckResult out;
  ParamStore probe = params;
  for (const auto& c : coords) {
    double& x = probe.at(c.name)[c.index];
    const double x0 = x;
    x = x0 + h;
    const double fp = f(probe);
    x = x0 - h;
    const double fm = f(probe);
    x = x0;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic.at(c.name)[c.index];
    const double err = relative_error(a, numeric);
    ++out.coords_checked;
    if (err > out.max_rel_error || out.coords_checked == 1) {
      out.max_rel_error = std::max(out.max_rel_error, err);
      out.worst_param = c.name;
      out.worst_index = c.index;
      out.worst_analytic = a;
      out.worst_numeric = numeric;
    }
  }
  return out;
}

double loss_and_grads(const LossBuilder& build, const ParamStore& params, GradStore& grads) {
  Tape tape;
  Var loss = build(tape, params);
  tape.backward(loss);
  grads = params.zeros_like();
  tape.collect_grads(grads);
  return loss.value()[0];
}

GradCheckResult grad_check(const LossBuilder& build, const ParamStore& params, double h, std::size_t max_coords,
                           std::uint64_t seed) {
  GradStore analytic;
  loss_and_grads(build, params, analytic);
  auto f = [&build](const ParamStore& p) {
    Tape tape;
    return build(tape, p).value()[0];
  };
  return grad_check(f, params, analytic, h, max_coords, seed);
}

}  // namespace tempo::num
