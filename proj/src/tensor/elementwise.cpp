#include <cmath>

#include "broadcast.hpp"
#include "pixeldit/errors.hpp"
#include "pixeldit/ops.hpp"

namespace pixeldit {

namespace detail {

BroadcastPlan make_plan(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  BroadcastPlan plan;
  plan.out.assign(rank, 1);
  plan.a_stride.assign(rank, 0);
  plan.b_stride.assign(rank, 0);
  std::size_t sa = 1, sb = 1;
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t ax = rank - 1 - k;
    const std::size_t ea = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::size_t eb = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError(std::string(op) + ": shapes " + shape_string(a) + " and " + shape_string(b) +
                           " are not broadcastable");
    }
    plan.out[ax] = std::max(ea, eb);
    plan.a_stride[ax] = (ea == 1) ? 0 : sa;
    plan.b_stride[ax] = (eb == 1) ? 0 : sb;
    sa *= ea;
    sb *= eb;
  }
  return plan;
}

}  // namespace detail

Shape broadcast_shapes(const Shape& a, const Shape& b) { return detail::make_plan(a, b, "broadcast").out; }

Tensor sum_to_shape(Tensor&& g, const Shape& shape) {
  if (g.shape() == shape) return std::move(g);
  return sum_to_shape(static_cast<const Tensor&>(g), shape);
}

Tensor sum_to_shape(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  auto plan = detail::make_plan(g.shape(), shape, "sum_to_shape");
  if (plan.out != g.shape()) {
    throw DimensionError("sum_to_shape: " + shape_string(shape) + " does not broadcast to " +
                         shape_string(g.shape()));
  }
  Tensor out(shape);
  double* po = out.data();
  const double* pg = g.data();
  detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t, std::size_t ob) { po[ob] += pg[i]; });
  return out;
}

namespace {

enum class BinOp { add, sub, mul };

Var binary(const Var& a, const Var& b, BinOp op, const char* name) {
  Tape& tape = a.tape();
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  const bool grad = tape.any_requires_grad({a, b});

  Tensor out;
  if (va.shape() == vb.shape()) {
    out = Tensor::uninitialized(va.shape());
    const double* pa = va.data();
    const double* pb = vb.data();
    double* po = out.data();
    const std::size_t n = out.numel();
    switch (op) {
      case BinOp::add: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
      case BinOp::sub: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
      case BinOp::mul: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
    }
  } else {
    auto plan = detail::make_plan(va.shape(), vb.shape(), name);
    out = Tensor::uninitialized(plan.out);
    const double* pa = va.data();
    const double* pb = vb.data();
    double* po = out.data();
    switch (op) {
      case BinOp::add:
        detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { po[i] = pa[ia] + pb[ib]; });
        break;
      case BinOp::sub:
        detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { po[i] = pa[ia] - pb[ib]; });
        break;
      case BinOp::mul:
        detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { po[i] = pa[ia] * pb[ib]; });
        break;
    }
  }

  Tape::BackwardFn fn;
  if (grad) {
    const int ia = a.id(), ib = b.id();
    fn = [ia, ib, op, name](Tape& t, Tensor& g) {
      const Tensor& xa = t.value(ia);
      const Tensor& xb = t.value(ib);
      const bool need_a = t.requires_grad(ia);
      const bool need_b = t.requires_grad(ib);
      if (op != BinOp::mul) {
        if (need_a) t.accumulate(ia, sum_to_shape(g, xa.shape()));
        if (need_b) {
          Tensor gb = sum_to_shape(std::move(g), xb.shape());
          if (op == BinOp::sub) {
            for (auto& v : gb.values()) v = -v;
          }
          t.accumulate(ib, gb);
        }
        return;
      }
      auto plan = detail::make_plan(xa.shape(), xb.shape(), name);
      const double* pg = g.data();
      const double* pa = xa.data();
      const double* pb = xb.data();
      if (need_a) {
        Tensor& ga = t.grad_buffer(ia);
        double* pga = ga.data();
        detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t oa, std::size_t ob) { pga[oa] += pg[i] * pb[ob]; });
      }
      if (need_b) {
        Tensor& gb = t.grad_buffer(ib);
        double* pgb = gb.data();
        detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t oa, std::size_t ob) { pgb[ob] += pg[i] * pa[oa]; });
      }
    };
  }
  return tape.record(std::move(out), {a.id(), b.id()}, std::move(fn));
}

// y = f(x) pointwise; dfdx(x, y) gives the local derivative.
template <class F, class D>
Var unary(const Var& x, F f, D dfdx) {
  Tape& tape = x.tape();
  const Tensor& vx = x.value();
  Tensor out = Tensor::uninitialized(vx.shape());
  const double* px = vx.data();
  double* po = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = f(px[i]);
  Tape::BackwardFn fn;
  if (tape.any_requires_grad({x})) {
    const int ix = x.id();
    fn = [ix, dfdx](Tape& t, const Tensor& g) {
      const Tensor& xv = t.value(ix);
      Tensor& gx = t.grad_buffer(ix);
      const double* p = xv.data();
      const double* pg = g.data();
      double* pgx = gx.data();
      for (std::size_t i = 0; i < gx.numel(); ++i) pgx[i] += pg[i] * dfdx(p[i]);
    };
  }
  return tape.record(std::move(out), {x.id()}, std::move(fn));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// tanh via a single exp (absolute error near machine epsilon).
double fast_tanh(double u) { return 1.0 - 2.0 / (1.0 + std::exp(2.0 * u)); }

constexpr double kGeluK = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluC = 0.044715;

}  // namespace

Var add(const Var& a, const Var& b) { return binary(a, b, BinOp::add, "add"); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinOp::sub, "sub"); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinOp::mul, "mul"); }

Var scale(const Var& x, double s) {
  return unary(x, [s](double v) { return s * v; }, [s](double) { return s; });
}

Var add_scalar(const Var& x, double s) {
  return unary(x, [s](double v) { return v + s; }, [](double) { return 1.0; });
}

Var square(const Var& x) {
  return unary(x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var exp(const Var& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Var silu(const Var& x) {
  return unary(
      x, [](double v) { return v * sigmoid(v); },
      [](double v) {
        const double s = sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Var gelu_tanh(const Var& x) {
  Tape& tape = x.tape();
  const Tensor& vx = x.value();
  const std::size_t n = vx.numel();
  Tensor out = Tensor::uninitialized(vx.shape());
  const bool grad = tape.any_requires_grad({x});
  // tanh values are kept for backward
  std::vector<double> th(grad ? n : 0);
  const double* px = vx.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = px[i];
    const double tv = fast_tanh(kGeluK * (v + kGeluC * v * v * v));
    po[i] = 0.5 * v * (1.0 + tv);
    if (grad) th[i] = tv;
  }
  Tape::BackwardFn fn;
  if (grad) {
    const int ix = x.id();
    fn = [ix, th = std::move(th)](Tape& t, const Tensor& g) {
      const double* p = t.value(ix).data();
      const double* pg = g.data();
      double* pgx = t.grad_buffer(ix).data();
      for (std::size_t i = 0; i < th.size(); ++i) {
        const double v = p[i], tv = th[i];
        pgx[i] += pg[i] * (0.5 * (1.0 + tv) + 0.5 * v * (1.0 - tv * tv) * kGeluK * (1.0 + 3.0 * kGeluC * v * v));
      }
    };
  }
  return tape.record(std::move(out), {x.id()}, std::move(fn));
}

}  // namespace pixeldit
