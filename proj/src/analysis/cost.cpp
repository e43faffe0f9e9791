#include <map>

#include "pixeldit/analysis.hpp"

namespace pixeldit {

namespace {

std::size_t linear_params(std::size_t in, std::size_t out, bool bias = true) { return in * out + (bias ? out : 0); }

struct Dims {
  std::size_t d, l, hw, pd, dp, c, h, hp, rows6, k, f;
};

Dims dims(const ModelConfig& cfg) {
  cfg.validate();
  Dims m;
  m.d = cfg.hidden;
  m.l = cfg.tokens();
  m.hw = cfg.height * cfg.width;
  m.pd = cfg.patch_dim();
  m.dp = cfg.pixel_hidden;
  m.c = cfg.channels;
  m.h = mlp_hidden_width(cfg.hidden, cfg.mlp_ratio);
  m.hp = mlp_hidden_width(cfg.pixel_hidden, cfg.mlp_ratio);
  m.rows6 = cfg.pit_geometry().modulation_rows() * 6 * cfg.pixel_hidden;
  m.k = cfg.compaction;
  m.f = cfg.repa_dim;
  return m;
}

bool pixel_attention_on(const ModelConfig& cfg) {
  return cfg.variant != Variant::no_pixel_attention && cfg.variant != Variant::vanilla_dit;
}

}  // namespace

CostReport count_params(const ModelConfig& cfg) {
  const Dims m = dims(cfg);
  const std::size_t d = m.d;
  CostReport r;
  auto add = [&r](const char* name, std::size_t n) {
    if (n > 0) r.params_by_module.emplace_back(name, n);
    r.params_total += n;
  };
  add("patch_embed", linear_params(m.pd, d));
  add("t_embed", 2 * linear_params(d, d) + linear_params(d, d, false));
  add("class_embed", (cfg.num_classes + 1) * d + d);
  const std::size_t attn = linear_params(d, 3 * d) + linear_params(d, d);
  const std::size_t dit = 2 * d + attn + linear_params(d, m.h) + linear_params(m.h, d) + linear_params(d, 6 * d);
  add("dit", cfg.depth_patch * dit);
  if (cfg.variant == Variant::vanilla_dit) {
    add("final", d + linear_params(d, 2 * d) + linear_params(d, m.pd));
  } else {
    add("pixel_embed", linear_params(m.c, m.dp));
    const std::size_t area = cfg.patch_area();
    std::size_t pit = linear_params(d, m.rows6) + 2 * m.dp + linear_params(m.dp, m.hp) + linear_params(m.hp, m.dp);
    if (pixel_attention_on(cfg)) {
      pit += linear_params(area * m.dp, m.k * d) + attn + linear_params(m.k * d, area * m.dp);
    }
    add("pit", cfg.depth_pixel * pit);
    add("pixel_head", linear_params(m.dp, m.c));
  }
  if (m.f > 0) add("repa", linear_params(d, d) + linear_params(d, m.f));
  return r;
}

double pixel_attention_quadratic_flops(const ModelConfig& cfg, bool compacted) {
  const Dims m = dims(cfg);
  const double t = static_cast<double>(compacted ? m.k * m.l : m.hw);
  // scores q k^T and mixing a v, one multiply-add = 2
  return static_cast<double>(cfg.depth_pixel) * 2.0 * 2.0 * t * t * static_cast<double>(m.d);
}

CostReport estimate_flops(const ModelConfig& cfg) {
  CostReport r = count_params(cfg);
  const Dims m = dims(cfg);
  const double d = static_cast<double>(m.d), l = static_cast<double>(m.l), hw = static_cast<double>(m.hw);
  auto mm = [](double rows, double in, double out) { return 2.0 * rows * in * out; };

  double f = mm(l, static_cast<double>(m.pd), d);  // patch embedding
  f += 3.0 * mm(1.0, d, d);                       // timestep MLP
  const double patch_quadratic = 2.0 * 2.0 * l * l * d;
  const double dit = mm(l, d, 3.0 * d) + patch_quadratic + mm(l, d, d) + mm(l, d, static_cast<double>(m.h)) +
                     mm(l, static_cast<double>(m.h), d) + mm(1.0, d, 6.0 * d);
  f += static_cast<double>(cfg.depth_patch) * dit;
  r.attention_flops = static_cast<double>(cfg.depth_patch) * patch_quadratic;

  if (cfg.variant == Variant::vanilla_dit) {
    f += mm(1.0, d, 2.0 * d) + mm(l, d, static_cast<double>(m.pd));
  } else {
    const double dp = static_cast<double>(m.dp), area = static_cast<double>(cfg.patch_area());
    const double kd = static_cast<double>(m.k) * d, kl = static_cast<double>(m.k) * l;
    f += mm(hw, static_cast<double>(m.c), dp);
    double pit = mm(l, d, static_cast<double>(m.rows6)) + mm(hw, dp, static_cast<double>(m.hp)) +
                 mm(hw, static_cast<double>(m.hp), dp);
    if (pixel_attention_on(cfg)) {
      const double quadratic = 2.0 * 2.0 * kl * kl * d;
      pit += mm(l, area * dp, kd) + mm(kl, d, 3.0 * d) + quadratic + mm(kl, d, d) + mm(l, kd, area * dp);
      r.attention_flops += static_cast<double>(cfg.depth_pixel) * quadratic;
      r.attention_token_count = m.k * m.l;
    }
    f += static_cast<double>(cfg.depth_pixel) * pit;
    f += mm(hw, dp, static_cast<double>(m.c));
  }
  if (m.f > 0) f += mm(l, d, d) + mm(l, d, static_cast<double>(m.f));
  r.flops_forward = f;
  return r;
}

std::vector<std::pair<std::string, std::size_t>> measure_params(const PixelDiTModel& model) {
  std::vector<std::pair<std::string, std::size_t>> out;
  for (const Parameter* p : model.params().all()) {
    const std::string module = p->name.substr(0, p->name.find('.'));
    if (out.empty() || out.back().first != module) out.emplace_back(module, 0);
    out.back().second += p->value.numel();
  }
  return out;
}

}  // namespace pixeldit
