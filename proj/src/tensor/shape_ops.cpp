#include <algorithm>
#include <numeric>

#include "broadcast.hpp"
#include "pixeldit/errors.hpp"
#include "pixeldit/ops.hpp"

namespace pixeldit {

Var reshape(const Var& x, Shape shape) {
  Tape& tape = x.tape();
  Tensor out = x.value().reshaped(std::move(shape));
  Tape::BackwardFn fn;
  if (tape.any_requires_grad({x})) {
    const int ix = x.id();
    fn = [ix](Tape& t, Tensor& g) { t.accumulate(ix, std::move(g).reshaped(t.value(ix).shape())); };
  }
  return tape.record(std::move(out), {x.id()}, std::move(fn));
}

Tensor permute_tensor(const Tensor& x, const std::vector<std::size_t>& perm) {
  const Shape& in = x.shape();
  const std::size_t rank = in.size();
  if (perm.size() != rank) {
    throw DimensionError("permute: permutation length " + std::to_string(perm.size()) + " for shape " + shape_string(in));
  }
  std::vector<bool> seen(rank, false);
  for (auto p : perm) {
    if (p >= rank || seen[p]) throw DimensionError("permute: invalid permutation for shape " + shape_string(in));
    seen[p] = true;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t ax = rank; ax-- > 1;) in_stride[ax - 1] = in_stride[ax] * in[ax];

  Shape out_shape(rank);
  detail::BroadcastPlan plan;
  plan.a_stride.resize(rank);
  plan.b_stride.assign(rank, 0);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in[perm[i]];
    plan.a_stride[i] = in_stride[perm[i]];
  }
  plan.out = out_shape;
  Tensor out = Tensor::uninitialized(out_shape);
  double* po = out.data();
  const double* px = x.data();
  detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t) { po[i] = px[ia]; });
  return out;
}

Var permute(const Var& x, const std::vector<std::size_t>& perm) {
  Tape& tape = x.tape();
  Tensor out = permute_tensor(x.value(), perm);
  Tape::BackwardFn fn;
  if (tape.any_requires_grad({x})) {
    const int ix = x.id();
    std::vector<std::size_t> inverse(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
    fn = [ix, inverse](Tape& t, const Tensor& g) { t.accumulate(ix, permute_tensor(g, inverse)); };
  }
  return tape.record(std::move(out), {x.id()}, std::move(fn));
}

Var slice_lastdim(const Var& x, std::size_t start, std::size_t length) {
  Tape& tape = x.tape();
  const Tensor& vx = x.value();
  if (vx.rank() == 0) throw DimensionError("slice_lastdim on a scalar");
  const std::size_t width = vx.shape().back();
  if (length == 0 || start + length > width) {
    throw DimensionError("slice_lastdim: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") outside last extent of " + shape_string(vx.shape()));
  }
  Shape out_shape = vx.shape();
  out_shape.back() = length;
  Tensor out = Tensor::uninitialized(out_shape);
  const std::size_t rows = vx.numel() / width;
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(vx.data() + r * width + start, length, out.data() + r * length);
  }
  Tape::BackwardFn fn;
  if (tape.any_requires_grad({x})) {
    const int ix = x.id();
    fn = [ix, start, length, width, rows](Tape& t, const Tensor& g) {
      double* gx = t.grad_buffer(ix).data();
      const double* pg = g.data();
      for (std::size_t r = 0; r < rows; ++r) {
        double* dst = gx + r * width + start;
        const double* src = pg + r * length;
        for (std::size_t j = 0; j < length; ++j) dst[j] += src[j];
      }
    };
  }
  return tape.record(std::move(out), {x.id()}, std::move(fn));
}

Var broadcast_to(const Var& x, const Shape& shape) {
  Tape& tape = x.tape();
  const Tensor& vx = x.value();
  auto plan = detail::make_plan(vx.shape(), shape, "broadcast_to");
  if (plan.out != shape) {
    throw DimensionError("broadcast_to: " + shape_string(vx.shape()) + " cannot expand to " + shape_string(shape));
  }
  Tensor out = Tensor::uninitialized(shape);
  double* po = out.data();
  const double* px = vx.data();
  detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t) { po[i] = px[ia]; });
  Tape::BackwardFn fn;
  if (tape.any_requires_grad({x})) {
    const int ix = x.id();
    fn = [ix](Tape& t, const Tensor& g) { t.accumulate(ix, sum_to_shape(g, t.value(ix).shape())); };
  }
  return tape.record(std::move(out), {x.id()}, std::move(fn));
}

Var gather_rows(const Var& table, std::span<const int> ids) {
  Tape& tape = table.tape();
  const Tensor& vt = table.value();
  if (vt.rank() != 2) throw DimensionError("gather_rows: table must be [V, D], got " + shape_string(vt.shape()));
  const std::size_t rows = vt.dim(0), width = vt.dim(1);
  std::vector<int> idx(ids.begin(), ids.end());
  for (int id : idx) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      throw InputError("gather_rows: index " + std::to_string(id) + " outside [0, " + std::to_string(rows) + ")");
    }
  }
  if (idx.empty()) throw DimensionError("gather_rows: empty index list");
  Tensor out = Tensor::uninitialized(Shape{idx.size(), width});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(vt.data() + static_cast<std::size_t>(idx[i]) * width, width, out.data() + i * width);
  }
  Tape::BackwardFn fn;
  if (tape.any_requires_grad({table})) {
    const int it = table.id();
    fn = [it, idx, width](Tape& t, const Tensor& g) {
      double* gt = t.grad_buffer(it).data();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        double* dst = gt + static_cast<std::size_t>(idx[i]) * width;
        const double* src = g.data() + i * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
      }
    };
  }
  return tape.record(std::move(out), {table.id()}, std::move(fn));
}

Var sum(const Var& x) {
  Tape& tape = x.tape();
  const auto v = x.value().values();
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  Tape::BackwardFn fn;
  if (tape.any_requires_grad({x})) {
    const int ix = x.id();
    fn = [ix](Tape& t, const Tensor& g) {
      Tensor& gx = t.grad_buffer(ix);
      const double gv = g.item();
      for (auto& e : gx.values()) e += gv;
    };
  }
  return tape.record(Tensor::scalar(s), {x.id()}, std::move(fn));
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

}  // namespace pixeldit
