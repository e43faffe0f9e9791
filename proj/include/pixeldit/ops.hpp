#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pixeldit/autograd.hpp"

namespace pixeldit {

// Differentiable primitives. Binary elementwise ops broadcast numpy-style
// (right-aligned, extent 1 stretches); mismatches raise DimensionError naming
// both shapes. Gradients of broadcast operands are summed back to their shape.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);

Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);
Var square(const Var& x);
Var exp(const Var& x);
Var silu(const Var& x);
Var gelu_tanh(const Var& x);

// [.., m, k] x [.., k, n] -> [.., m, n]; batch extents broadcast.
Var matmul(const Var& a, const Var& b);
// x[.., in] * w[in, out] (+ bias[out]).
Var linear(const Var& x, const Var& w);
Var linear(const Var& x, const Var& w, const Var& bias);

Var softmax_lastdim(const Var& x);

Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, const std::vector<std::size_t>& perm);
Var slice_lastdim(const Var& x, std::size_t start, std::size_t length);
Var broadcast_to(const Var& x, const Shape& shape);
// Rows of a [V, D] table -> [ids.size(), D].
Var gather_rows(const Var& table, std::span<const int> ids);

Var sum(const Var& x);
Var mean(const Var& x);

// gain * x / sqrt(mean(x^2) + eps) over the last axis.
Var rms_norm(const Var& x, const Var& gain, double eps = 1e-6);

struct Grid {
  std::size_t rows = 1;
  std::size_t cols = 1;
};
// Axial rotary embedding on [.., T, heads, head_dim] with T = rows * cols.
// Rotary pairs are adjacent lanes (2j, 2j+1); the first head_dim/4 pairs
// rotate by the row index, the rest by the column index.
Var rope_2d(const Var& x, Grid grid, double base = 10000.0);

// Cosine similarity over the last axis -> [..]. Rows where either side has
// zero norm yield 0 (no gradient) and bump `zero_norm_count` when given.
Var cosine_similarity_lastdim(const Var& a, const Var& b, std::size_t* zero_norm_count = nullptr);

// Plain-tensor helpers shared with tests and the sampler.
Tensor permute_tensor(const Tensor& x, const std::vector<std::size_t>& perm);
Shape broadcast_shapes(const Shape& a, const Shape& b);
Tensor sum_to_shape(const Tensor& g, const Shape& shape);
Tensor sum_to_shape(Tensor&& g, const Shape& shape);

}  // namespace pixeldit
