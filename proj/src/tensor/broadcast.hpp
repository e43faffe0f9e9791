#pragma once

#include <cstddef>
#include <vector>

#include "pixeldit/tensor.hpp"

namespace pixeldit::detail {

// Output shape plus per-operand strides expressed in output rank; a stride
// of 0 marks a stretched (extent-1 or missing) axis.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_stride;
  std::vector<std::size_t> b_stride;
};

BroadcastPlan make_plan(const Shape& a, const Shape& b, const char* op);

// Calls f(out_index, a_offset, b_offset) for every output element in
// row-major order.
template <class F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
  const std::size_t rank = plan.out.size();
  if (rank == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = plan.out[rank - 1];
  const std::size_t sa = plan.a_stride[rank - 1];
  const std::size_t sb = plan.b_stride[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0, o = 0;
  const std::size_t total = shape_numel(plan.out);
  while (o < total) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, oa + j * sa, ob + j * sb);
    o += inner;
    // advance odometer on the outer axes
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      oa += plan.a_stride[ax];
      ob += plan.b_stride[ax];
      if (idx[ax] < plan.out[ax]) break;
      oa -= plan.a_stride[ax] * idx[ax];
      ob -= plan.b_stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace pixeldit::detail
