#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "tempo/num/params.hpp"
#include "tempo/num/tape.hpp"

namespace tempo::num {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// |a - n| / max(|a|, |n|, 1e-6)
double relative_error(double analytic, double numeric);

// Central differences of `f` around `params` compared with `analytic`.
// Checks every coordinate when the store holds at most `max_coords` scalars,
// otherwise a seeded sample of `max_coords` of them.
GradCheckResult grad_check(const std::function<double(const ParamStore&)>& f, const ParamStore& params,
                           const GradStore& analytic, double h = 1e-5, std::size_t max_coords = 400,
                           std::uint64_t seed = 0);

// Same check for a loss built on a tape from `params` (via Tape::param).
using LossBuilder = std::function<Var(Tape&, const ParamStore&)>;
GradCheckResult grad_check(const LossBuilder& build, const ParamStore& params, double h = 1e-5,
                           std::size_t max_coords = 400, std::uint64_t seed = 0);

// Loss value and parameter gradients for one build of the tape.
double loss_and_grads(const LossBuilder& build, const ParamStore& params, GradStore& grads);

}  // namespace tempo::num
