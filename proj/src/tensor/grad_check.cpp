#include "pixeldit/grad_check.hpp"

#include <cmath>

#include "pixeldit/errors.hpp"

namespace pixeldit {

namespace {

double evaluate(const ParamLossFn& f) {
  Tape tape(false);
  const Var out = f(tape);
  return out.value().item();
}

void update(GradCheckReport& rep, const std::string& name, std::size_t i, double analytic, double numeric) {
  const double rel = std::abs(analytic - numeric) / (std::abs(numeric) + kGradCheckAbsEps);
  ++rep.coordinates;
  if (rel > rep.max_rel_error || rep.worst.empty()) {
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
    rep.worst = name + "[" + std::to_string(i) + "]";
    rep.worst_analytic = analytic;
    rep.worst_numeric = numeric;
  }
}

}  // namespace

GradCheckReport grad_check_parameters(const ParamLossFn& f, std::span<Parameter* const> params, double step,
                                      Stencil stencil) {
  if (!(step > 0.0)) throw InputError("grad_check: step must be positive");
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    const Var out = f(tape);
    if (out.value().numel() != 1) throw DimensionError("grad_check: function must be scalar-valued");
    tape.backward(out);
  }
  GradCheckReport rep;
  for (Parameter* p : params) {
    const Tensor analytic = p->grad;
    analytic.require_finite("grad_check analytic gradient of " + p->name);
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double saved = p->value[i];
      auto at = [&](double offset) {
        p->value[i] = saved + offset;
        return evaluate(f);
      };
      double numeric = 0.0;
      if (stencil == Stencil::two_point) {
        numeric = (at(step) - at(-step)) / (2.0 * step);
      } else {
        const double near = at(step) - at(-step);
        const double far = at(2 * step) - at(-2 * step);
        numeric = (8.0 * near - far) / (12.0 * step);
      }
      p->value[i] = saved;
      update(rep, p->name, i, analytic[i], numeric);
    }
  }
  return rep;
}

GradCheckReport grad_check(const ScalarFn& f, const Tensor& x, double step, Stencil stencil) {
  Parameter input("x", x);
  Parameter* ptr = &input;
  return grad_check_parameters([&](Tape& tape) { return f(tape, tape.param(input)); }, std::span(&ptr, 1), step, stencil);
}

}  // namespace pixeldit
