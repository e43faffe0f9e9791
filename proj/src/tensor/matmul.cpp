#include <Eigen/Core>

#include "broadcast.hpp"
#include "pixeldit/errors.hpp"
#include "pixeldit/ops.hpp"

namespace pixeldit {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

using Index = Eigen::Index;

// c (+)= a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n, bool acc) {
  MapC A(a, static_cast<Index>(m), static_cast<Index>(k));
  MapC B(b, static_cast<Index>(k), static_cast<Index>(n));
  Map C(c, static_cast<Index>(m), static_cast<Index>(n));
  if (acc) {
    C.noalias() += A * B;
  } else {
    C.noalias() = A * B;
  }
}

// da[m,k] += g[m,n] * b[k,n]^T
void gemm_nt_acc(const double* g, const double* b, double* da, std::size_t m, std::size_t k, std::size_t n) {
  MapC G(g, static_cast<Index>(m), static_cast<Index>(n));
  MapC B(b, static_cast<Index>(k), static_cast<Index>(n));
  Map DA(da, static_cast<Index>(m), static_cast<Index>(k));
  DA.noalias() += G * B.transpose();
}

// db[k,n] += a[m,k]^T * g[m,n]
void gemm_tn_acc(const double* a, const double* g, double* db, std::size_t m, std::size_t k, std::size_t n) {
  MapC A(a, static_cast<Index>(m), static_cast<Index>(k));
  MapC G(g, static_cast<Index>(m), static_cast<Index>(n));
  Map DB(db, static_cast<Index>(k), static_cast<Index>(n));
  DB.noalias() += A.transpose() * G;
}

struct MatmulGeometry {
  std::size_t m, k, n;
  Shape a_batch, b_batch;
  detail::BroadcastPlan batch;  // over batch axes only
  bool flat_b = false;          // b is a plain [k, n] matrix
};

MatmulGeometry geometry(const Shape& a, const Shape& b) {
  if (a.size() < 2 || b.size() < 2) {
    throw DimensionError("matmul: operands need rank >= 2, got " + shape_string(a) + " and " + shape_string(b));
  }
  MatmulGeometry g;
  g.m = a[a.size() - 2];
  g.k = a[a.size() - 1];
  g.n = b[b.size() - 1];
  if (b[b.size() - 2] != g.k) {
    throw DimensionError("matmul: inner extents differ for " + shape_string(a) + " and " + shape_string(b));
  }
  g.a_batch.assign(a.begin(), a.end() - 2);
  g.b_batch.assign(b.begin(), b.end() - 2);
  g.flat_b = g.b_batch.empty();
  try {
    g.batch = detail::make_plan(g.a_batch, g.b_batch, "matmul");
  } catch (const DimensionError&) {
    throw DimensionError("matmul: batch extents of " + shape_string(a) + " and " + shape_string(b) +
                         " are not broadcastable");
  }
  return g;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& tape = a.tape();
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  const auto geo = geometry(va.shape(), vb.shape());

  Shape out_shape = geo.batch.out;
  out_shape.push_back(geo.m);
  out_shape.push_back(geo.n);
  Tensor out = Tensor::uninitialized(out_shape);

  const std::size_t sa = geo.m * geo.k, sb = geo.k * geo.n, sc = geo.m * geo.n;
  if (geo.flat_b) {
    // Fold every batch row into one [rows, k] x [k, n] product.
    gemm_nn(va.data(), vb.data(), out.data(), shape_numel(geo.a_batch) * geo.m, geo.k, geo.n, false);
  } else {
    detail::for_each_broadcast(geo.batch, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      gemm_nn(va.data() + ia * sa, vb.data() + ib * sb, out.data() + i * sc, geo.m, geo.k, geo.n, false);
    });
  }

  Tape::BackwardFn fn;
  if (tape.any_requires_grad({a, b})) {
    const int ia = a.id(), ib = b.id();
    fn = [ia, ib](Tape& t, const Tensor& g) {
      const Tensor& xa = t.value(ia);
      const Tensor& xb = t.value(ib);
      const auto geo = geometry(xa.shape(), xb.shape());
      const bool need_a = t.requires_grad(ia);
      const bool need_b = t.requires_grad(ib);
      const std::size_t sa = geo.m * geo.k, sb = geo.k * geo.n, sc = geo.m * geo.n;
      if (geo.flat_b) {
        const std::size_t rows = shape_numel(geo.a_batch) * geo.m;
        if (need_a) gemm_nt_acc(g.data(), xb.data(), t.grad_buffer(ia).data(), rows, geo.k, geo.n);
        if (need_b) gemm_tn_acc(xa.data(), g.data(), t.grad_buffer(ib).data(), rows, geo.k, geo.n);
        return;
      }
      double* ga = need_a ? t.grad_buffer(ia).data() : nullptr;
      double* gb = need_b ? t.grad_buffer(ib).data() : nullptr;
      detail::for_each_broadcast(geo.batch, [&](std::size_t i, std::size_t oa, std::size_t ob) {
        if (ga) gemm_nt_acc(g.data() + i * sc, xb.data() + ob * sb, ga + oa * sa, geo.m, geo.k, geo.n);
        if (gb) gemm_tn_acc(xa.data() + oa * sa, g.data() + i * sc, gb + ob * sb, geo.m, geo.k, geo.n);
      });
    };
  }
  return tape.record(std::move(out), {a.id(), b.id()}, std::move(fn));
}

Var linear(const Var& x, const Var& w) {
  if (w.shape().size() != 2) throw DimensionError("linear: weight must be [in, out], got " + shape_string(w.shape()));
  return matmul(x, w);
}

Var linear(const Var& x, const Var& w, const Var& bias) { return add(linear(x, w), bias); }

}  // namespace pixeldit
