#include "pixeldit/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "pixeldit/errors.hpp"
#include "pixeldit/parameters.hpp"

namespace pixeldit {

std::string solver_name(Solver s) {
  switch (s) {
    case Solver::euler: return "euler";
    case Solver::heun: return "heun";
    case Solver::flow_dpm: return "flow_dpm";
  }
  return "?";
}

Solver parse_solver(std::string_view name) {
  if (name == "euler") return Solver::euler;
  if (name == "heun") return Solver::heun;
  if (name == "flow_dpm" || name == "dpm") return Solver::flow_dpm;
  throw ConfigError("unknown solver '" + std::string(name) + "' (euler, heun, flow_dpm)");
}

void SamplerConfig::validate() const {
  if (steps == 0) throw ConfigError("sampler steps must be >= 1");
  if (!(cfg_scale >= 0.0)) throw ConfigError("cfg scale must be >= 0");
  if (!(0.0 <= cfg_lo && cfg_lo <= cfg_hi && cfg_hi <= 1.0)) {
    throw ConfigError("cfg interval must satisfy 0 <= lo <= hi <= 1");
  }
  if (!(shift >= 1.0)) throw ConfigError("timestep shift must be >= 1");
}

namespace {

FieldBinder sampler_fields(SamplerConfig& c) {
  FieldBinder b("sampler");
  b.bind("solver", [&c] { return solver_name(c.solver); }, [&c](const std::string& s) { c.solver = parse_solver(s); })
      .bind("steps", c.steps)
      .bind("cfg_scale", c.cfg_scale)
      .bind("cfg_lo", c.cfg_lo)
      .bind("cfg_hi", c.cfg_hi)
      .bind("shift", c.shift)
      .bind("seed", c.seed);
  return b;
}

}  // namespace

KeyValues SamplerConfig::to_map() const {
  SamplerConfig copy = *this;
  return sampler_fields(copy).dump();
}

SamplerConfig SamplerConfig::from_map(const KeyValues& kv, SamplerConfig base) {
  sampler_fields(base).load(kv);
  base.validate();
  return base;
}

std::vector<double> make_schedule(std::size_t steps, double shift) {
  if (steps == 0) throw ConfigError("schedule needs at least one step");
  if (!(shift >= 1.0)) throw ConfigError("timestep shift must be >= 1");
  std::vector<double> t(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) {
    const double u = 1.0 - static_cast<double>(i) / static_cast<double>(steps);
    t[i] = shift == 1.0 ? u : shift * u / (1.0 + (shift - 1.0) * u);
  }
  t.front() = 1.0;
  t.back() = 0.0;
  return t;
}

bool in_guidance_interval(double t, double lo, double hi) { return lo <= t && t <= hi; }

Tensor guided_velocity(const Tensor& v_cond, const Tensor& v_uncond, double scale, double t, double lo, double hi) {
  require_same_shape(v_cond, v_uncond, "guided_velocity");
  if (scale == 1.0 || !in_guidance_interval(t, lo, hi)) return v_cond;
  Tensor out = Tensor::uninitialized(v_cond.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = v_uncond[i] + scale * (v_cond[i] - v_uncond[i]);
  return out;
}

Tensor euler_step(const Tensor& x, double t, double t_next, const Tensor& v) {
  require_same_shape(x, v, "euler_step");
  Tensor out = x;
  axpy(t_next - t, v, out);
  return out;
}

Tensor heun_step(const Tensor& x, double t, double t_next, const VelocityFn& velocity) {
  const Tensor v0 = velocity(x, t);
  const Tensor pred = euler_step(x, t, t_next, v0);
  const Tensor v1 = velocity(pred, t_next);
  Tensor slope = Tensor::uninitialized(x.shape());
  for (std::size_t i = 0; i < slope.numel(); ++i) slope[i] = 0.5 * (v0[i] + v1[i]);
  return euler_step(x, t, t_next, slope);
}

namespace {

double lambda_of(double t) {
  const double c = std::clamp(t, kFlowDpmTMin, 1.0 - kFlowDpmTMin);
  return std::log((1.0 - c) / c);
}

}  // namespace

Tensor flow_dpm_step(FlowDpmHistory& history, const Tensor& x, double t, double t_next, const VelocityFn& velocity) {
  const Tensor v = velocity(x, t);
  require_same_shape(x, v, "flow_dpm_step");
  Tensor x0 = x;
  axpy(-t, v, x0);  // data prediction

  const double h = lambda_of(t_next) - lambda_of(t);
  Tensor d = x0;
  if (history.has_previous) {
    const double r = history.h_previous / h;
    const double k = 1.0 / (2.0 * r);
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] = x0[i] + k * (x0[i] - history.x0_previous[i]);
  }
  // exact linear part with sigma = t, alpha = 1 - t:
  // x' = (sigma'/sigma) x + (alpha' - alpha sigma'/sigma) D
  const double tc = std::clamp(t, kFlowDpmTMin, 1.0);
  const double ratio = t_next / tc;
  const double coef = (1.0 - t_next) - (1.0 - t) * ratio;
  Tensor out = Tensor::uninitialized(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ratio * x[i] + coef * d[i];

  history.has_previous = true;
  history.x0_previous = std::move(x0);
  history.h_previous = h;
  return out;
}

Tensor integrate(Tensor x, std::span<const double> schedule, Solver solver, const VelocityFn& velocity) {
  FlowDpmHistory history;
  for (std::size_t i = 0; i + 1 < schedule.size(); ++i) {
    const double t = schedule[i], t_next = schedule[i + 1];
    switch (solver) {
      case Solver::euler: x = euler_step(x, t, t_next, velocity(x, t)); break;
      case Solver::heun: x = heun_step(x, t, t_next, velocity); break;
      case Solver::flow_dpm: x = flow_dpm_step(history, x, t, t_next, velocity); break;
    }
    if (!x.all_finite()) {
      throw NumericError("sampler state became non-finite at step " + std::to_string(i) + " (t = " +
                         std::to_string(t) + ")");
    }
  }
  return x;
}

Tensor sample(PixelDiTModel& model, const SamplerConfig& cfg, std::span<const int> y) {
  cfg.validate();
  const ModelConfig& mc = model.config();
  if (y.empty()) throw InputError("sample: no class ids given");
  Rng rng(cfg.seed);
  Tensor x = normal_tensor({y.size(), mc.channels, mc.height, mc.width}, 1.0, rng);
  const std::vector<int> cond(y.begin(), y.end());
  const std::vector<int> uncond(y.size(), static_cast<int>(mc.null_class()));
  const bool guided = cfg.cfg_scale != 1.0;
  VelocityFn fn = [&](const Tensor& xt, double t) {
    const std::vector<double> ts(y.size(), t);
    Tensor vc = model.velocity(xt, ts, cond);
    if (!guided || !in_guidance_interval(t, cfg.cfg_lo, cfg.cfg_hi)) return vc;
    const Tensor vu = model.velocity(xt, ts, uncond);
    return guided_velocity(vc, vu, cfg.cfg_scale, t, cfg.cfg_lo, cfg.cfg_hi);
  };
  x = integrate(std::move(x), make_schedule(cfg.steps, cfg.shift), cfg.solver, fn);
  for (auto& v : x.values()) v = std::clamp(v, -1.0, 1.0);
  return x;
}

}  // namespace pixeldit
