// Primitives that act independently on each row of the last axis.
#include <cmath>
#include <memory>

#include "pixeldit/errors.hpp"
#include "pixeldit/ops.hpp"

namespace pixeldit {

Var softmax_lastdim(const Var& x) {
  Tape& tape = x.tape();
  const Tensor& vx = x.value();
  if (vx.rank() == 0) throw DimensionError("softmax_lastdim on a scalar");
  const std::size_t width = vx.shape().back();
  const std::size_t rows = vx.numel() / width;
  Tensor out = Tensor::uninitialized(vx.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = vx.data() + r * width;
    double* y = out.data() + r * width;
    double mx = in[0];
    for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      y[j] = std::exp(in[j] - mx);
      z += y[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < width; ++j) y[j] *= inv;
  }
  Tape::BackwardFn fn;
  if (tape.any_requires_grad({x})) {
    const int ix = x.id();
    // The output is needed in backward; keep a copy rather than a record id
    // since the record is not created yet.
    Tensor y = out;
    fn = [ix, y = std::move(y), width, rows](Tape& t, const Tensor& g) {
      double* gx = t.grad_buffer(ix).data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* yr = y.data() + r * width;
        const double* gr = g.data() + r * width;
        double dot = 0.0;
        for (std::size_t j = 0; j < width; ++j) dot += gr[j] * yr[j];
        double* dst = gx + r * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += yr[j] * (gr[j] - dot);
      }
    };
  }
  return tape.record(std::move(out), {x.id()}, std::move(fn));
}

Var rms_norm(const Var& x, const Var& gain, double eps) {
  Tape& tape = x.tape();
  const Tensor& vx = x.value();
  const Tensor& vg = gain.value();
  if (vx.rank() == 0 || vg.rank() != 1 || vg.dim(0) != vx.shape().back()) {
    throw DimensionError("rms_norm: gain " + shape_string(vg.shape()) + " does not match input " +
                         shape_string(vx.shape()));
  }
  const std::size_t width = vx.shape().back();
  const std::size_t rows = vx.numel() / width;
  Tensor out = Tensor::uninitialized(vx.shape());
  std::vector<double> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = vx.data() + r * width;
    double ms = 0.0;
    for (std::size_t j = 0; j < width; ++j) ms += in[j] * in[j];
    ms /= static_cast<double>(width);
    const double inv = 1.0 / std::sqrt(ms + eps);
    inv_rms[r] = inv;
    double* y = out.data() + r * width;
    for (std::size_t j = 0; j < width; ++j) y[j] = vg[j] * in[j] * inv;
  }
  Tape::BackwardFn fn;
  if (tape.any_requires_grad({x, gain})) {
    const int ix = x.id(), ig = gain.id();
    fn = [ix, ig, width, rows, inv_rms = std::move(inv_rms)](Tape& t, const Tensor& g) {
      const Tensor& xv = t.value(ix);
      const Tensor& gv = t.value(ig);
      double* gx = t.requires_grad(ix) ? t.grad_buffer(ix).data() : nullptr;
      double* gg = t.requires_grad(ig) ? t.grad_buffer(ig).data() : nullptr;
      const double inv_w = 1.0 / static_cast<double>(width);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * width;
        const double* gr = g.data() + r * width;
        const double inv = inv_rms[r];
        if (gg) {
          for (std::size_t j = 0; j < width; ++j) gg[j] += gr[j] * xr[j] * inv;
        }
        if (gx) {
          // u = gain * dy; dx = inv * u - inv^3 * x * <u, x> / D
          double dot = 0.0;
          for (std::size_t j = 0; j < width; ++j) dot += gv[j] * gr[j] * xr[j];
          const double c = inv * inv * inv * dot * inv_w;
          double* dst = gx + r * width;
          for (std::size_t j = 0; j < width; ++j) dst[j] += inv * gv[j] * gr[j] - c * xr[j];
        }
      }
    };
  }
  return tape.record(std::move(out), {x.id(), gain.id()}, std::move(fn));
}

Var cosine_similarity_lastdim(const Var& a, const Var& b, std::size_t* zero_norm_count) {
  Tape& tape = a.tape();
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  require_same_shape(va, vb, "cosine_similarity_lastdim");
  if (va.rank() == 0) throw DimensionError("cosine_similarity_lastdim on a scalar");
  const std::size_t width = va.shape().back();
  const std::size_t rows = va.numel() / width;
  Shape out_shape(va.shape().begin(), va.shape().end() - 1);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out = Tensor::uninitialized(out_shape);
  std::vector<double> na(rows), nb(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* pa = va.data() + r * width;
    const double* pb = vb.data() + r * width;
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      dot += pa[j] * pb[j];
      sa += pa[j] * pa[j];
      sb += pb[j] * pb[j];
    }
    na[r] = std::sqrt(sa);
    nb[r] = std::sqrt(sb);
    if (na[r] == 0.0 || nb[r] == 0.0) {
      out[r] = 0.0;
      if (zero_norm_count) ++*zero_norm_count;
    } else {
      out[r] = dot / (na[r] * nb[r]);
    }
  }
  Tape::BackwardFn fn;
  if (tape.any_requires_grad({a, b})) {
    const int ia = a.id(), ib = b.id();
    Tensor cosv = out;
    fn = [ia, ib, width, rows, na = std::move(na), nb = std::move(nb), cosv = std::move(cosv)](Tape& t,
                                                                                                const Tensor& g) {
      const Tensor& xa = t.value(ia);
      const Tensor& xb = t.value(ib);
      double* ga = t.requires_grad(ia) ? t.grad_buffer(ia).data() : nullptr;
      double* gb = t.requires_grad(ib) ? t.grad_buffer(ib).data() : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        if (na[r] == 0.0 || nb[r] == 0.0) continue;
        const double* pa = xa.data() + r * width;
        const double* pb = xb.data() + r * width;
        const double c = cosv[r];
        const double inv_ab = 1.0 / (na[r] * nb[r]);
        for (std::size_t j = 0; j < width; ++j) {
          if (ga) ga[r * width + j] += g[r] * (pb[j] * inv_ab - c * pa[j] / (na[r] * na[r]));
          if (gb) gb[r * width + j] += g[r] * (pa[j] * inv_ab - c * pb[j] / (nb[r] * nb[r]));
        }
      }
    };
  }
  return tape.record(std::move(out), {a.id(), b.id()}, std::move(fn));
}

namespace {

struct RopeTable {
  std::vector<double> cos, sin;  // [tokens, head_dim / 2]
  std::size_t outer, tokens, heads, head_dim;
};

// dst += R(sign * angle) src, per token and head.
void rope_rotate(const RopeTable& tb, const double* src, double* dst, double sign) {
  const std::size_t pairs = tb.head_dim / 2;
  for (std::size_t o = 0; o < tb.outer; ++o) {
    for (std::size_t tok = 0; tok < tb.tokens; ++tok) {
      const double* c = tb.cos.data() + tok * pairs;
      const double* s = tb.sin.data() + tok * pairs;
      for (std::size_t h = 0; h < tb.heads; ++h) {
        const std::size_t off = ((o * tb.tokens + tok) * tb.heads + h) * tb.head_dim;
        for (std::size_t j = 0; j < pairs; ++j) {
          const double a = src[off + 2 * j], b = src[off + 2 * j + 1];
          dst[off + 2 * j] += a * c[j] - b * sign * s[j];
          dst[off + 2 * j + 1] += a * sign * s[j] + b * c[j];
        }
      }
    }
  }
}

}  // namespace

Var rope_2d(const Var& x, Grid grid, double base) {
  Tape& tape = x.tape();
  const Tensor& vx = x.value();
  if (vx.rank() < 3) throw DimensionError("rope_2d: expected [.., T, heads, head_dim], got " + shape_string(vx.shape()));
  const std::size_t tokens = vx.dim(-3), heads = vx.dim(-2), head_dim = vx.dim(-1);
  if (tokens != grid.rows * grid.cols) {
    throw DimensionError("rope_2d: " + std::to_string(tokens) + " tokens for a " + std::to_string(grid.rows) + "x" +
                         std::to_string(grid.cols) + " grid");
  }
  if (head_dim % 4 != 0) throw DimensionError("rope_2d: head_dim must be divisible by 4, got " + std::to_string(head_dim));
  const std::size_t quarter = head_dim / 4;

  // cos/sin table per (token, pair)
  const std::size_t pairs = head_dim / 2;
  std::vector<double> cs(tokens * pairs), sn(tokens * pairs);
  for (std::size_t tok = 0; tok < tokens; ++tok) {
    const double row = static_cast<double>(tok / grid.cols);
    const double col = static_cast<double>(tok % grid.cols);
    for (std::size_t j = 0; j < pairs; ++j) {
      const std::size_t i = j < quarter ? j : j - quarter;
      const double freq = std::pow(base, -static_cast<double>(i) / static_cast<double>(quarter));
      const double angle = (j < quarter ? row : col) * freq;
      cs[tok * pairs + j] = std::cos(angle);
      sn[tok * pairs + j] = std::sin(angle);
    }
  }
  const std::size_t outer = vx.numel() / (tokens * heads * head_dim);
  auto table = std::make_shared<RopeTable>(RopeTable{std::move(cs), std::move(sn), outer, tokens, heads, head_dim});
  Tensor out(vx.shape());
  rope_rotate(*table, vx.data(), out.data(), 1.0);
  Tape::BackwardFn fn;
  if (tape.any_requires_grad({x})) {
    const int ix = x.id();
    // The transpose of a rotation is the rotation by the negated angle.
    fn = [ix, table](Tape& t, const Tensor& g) { rope_rotate(*table, g.data(), t.grad_buffer(ix).data(), -1.0); };
  }
  return tape.record(std::move(out), {x.id()}, std::move(fn));
}

}  // namespace pixeldit
