#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pixeldit {

struct GradientSuiteEntry {
  std::string group;  // "primitive", "block" or "model"
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t coordinates = 0;
  std::string worst;

  bool passed() const { return max_rel_error <= tolerance; }
};

// Finite-difference checks of every primitive, every block kind and the
// end-to-end toy model (p = 2, D = 16, D_pix = 4, N = 2, M = 2, 8 x 8).
std::vector<GradientSuiteEntry> run_gradient_suite(std::uint64_t seed = 0, double tolerance = 1e-4);

}  // namespace pixeldit
