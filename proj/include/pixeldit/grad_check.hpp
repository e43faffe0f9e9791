#pragma once

#include <functional>
#include <span>
#include <string>

#include "pixeldit/autograd.hpp"

namespace pixeldit {

// Per coordinate: |analytic - central| / (|central| + abs_eps). The central
// difference is the 4-point stencil
//   (-f(x + 2h) + 8 f(x + h) - 8 f(x - h) + f(x - 2h)) / 12h
// by default, or (f(x + h) - f(x - h)) / 2h.
inline constexpr double kGradCheckAbsEps = 1e-8;

enum class Stencil { two_point, four_point };

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "<name>[<flat index>]" of the worst coordinate
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

using ScalarFn = std::function<Var(Tape&, const Var&)>;
using ParamLossFn = std::function<Var(Tape&)>;

// Checks d f(x) / dx for a scalar-valued f. Throws NumericError if the
// analytic gradient has non-finite entries.
GradCheckReport grad_check(const ScalarFn& f, const Tensor& x, double step, Stencil stencil = Stencil::four_point);

// Same check over every coordinate of every parameter in `params`. The
// parameters are perturbed in place and restored before returning.
GradCheckReport grad_check_parameters(const ParamLossFn& f, std::span<Parameter* const> params, double step,
                                      Stencil stencil = Stencil::four_point);

}  // namespace pixeldit
