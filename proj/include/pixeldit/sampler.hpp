#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pixeldit/config.hpp"
#include "pixeldit/model.hpp"

namespace pixeldit {

enum class Solver { euler, heun, flow_dpm };

std::string solver_name(Solver s);
Solver parse_solver(std::string_view name);

struct SamplerConfig {
  Solver solver = Solver::flow_dpm;
  std::size_t steps = 100;
  double cfg_scale = 1.0;
  double cfg_lo = 0.0;  // guidance active for t in [cfg_lo, cfg_hi]
  double cfg_hi = 1.0;
  double shift = 1.0;  // timestep shift alpha >= 1
  std::uint64_t seed = 0;

  void validate() const;
  KeyValues to_map() const;
  // Keys absent from `kv` keep their value in `base`.
  static SamplerConfig from_map(const KeyValues& kv, SamplerConfig base);
  static SamplerConfig from_map(const KeyValues& kv) { return from_map(kv, SamplerConfig{}); }
};

// steps + 1 times from 1 down to 0: t_i = a u_i / (1 + (a - 1) u_i),
// u_i = 1 - i / steps.
std::vector<double> make_schedule(std::size_t steps, double shift);

bool in_guidance_interval(double t, double lo, double hi);
// v_u + scale (v_c - v_u) inside [lo, hi], v_c outside.
Tensor guided_velocity(const Tensor& v_cond, const Tensor& v_uncond, double scale, double t, double lo, double hi);

using VelocityFn = std::function<Tensor(const Tensor& x, double t)>;

Tensor euler_step(const Tensor& x, double t, double t_next, const Tensor& v);
Tensor heun_step(const Tensor& x, double t, double t_next, const VelocityFn& velocity);

// Second-order multistep data-prediction solver in lambda = log((1 - t) / t).
struct FlowDpmHistory {
  bool has_previous = false;
  Tensor x0_previous;      // data prediction at the previous step
  double h_previous = 0.0;  // lambda increment of the previous step
};
inline constexpr double kFlowDpmTMin = 1e-4;
Tensor flow_dpm_step(FlowDpmHistory& history, const Tensor& x, double t, double t_next, const VelocityFn& velocity);

// Integrates x from schedule.front() to schedule.back(). Non-finite state
// raises NumericError naming the step.
Tensor integrate(Tensor x, std::span<const double> schedule, Solver solver, const VelocityFn& velocity);

// One sample per class id in `y`; initial noise drawn from cfg.seed. The
// unconditional branch uses the null class and is evaluated only where
// guidance is active. The result is clamped to [-1, 1].
Tensor sample(PixelDiTModel& model, const SamplerConfig& cfg, std::span<const int> y);

}  // namespace pixeldit
