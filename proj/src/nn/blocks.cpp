#include "pixeldit/blocks.hpp"

#include <cmath>

#include "pixeldit/errors.hpp"

namespace pixeldit {

Var LinearParams::operator()(Tape& tape, const Var& x) const {
  if (bias) return linear(x, tape.param(*weight), tape.param(*bias));
  return linear(x, tape.param(*weight));
}

LinearParams make_linear(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, bool bias,
                         Init init, Rng& rng) {
  if (in == 0 || out == 0) throw ConfigError("linear " + name + " needs positive widths");
  LinearParams lp;
  Tensor w = init == Init::xavier ? xavier_uniform(in, out, rng) : Tensor(Shape{in, out});
  lp.weight = &ps.add(name + ".weight", std::move(w));
  if (bias) lp.bias = &ps.add(name + ".bias", Tensor(Shape{out}));
  return lp;
}

AttentionConfig AttentionConfig::for_width(std::size_t width, std::size_t heads, bool rope, Grid grid) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("attention width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  AttentionConfig cfg{heads, width / heads, rope, grid};
  if (rope && cfg.head_dim % 4 != 0) {
    throw ConfigError("2D RoPE needs head_dim divisible by 4, got " + std::to_string(cfg.head_dim));
  }
  return cfg;
}

AttentionParams make_attention(ParameterSet& ps, const std::string& prefix, std::size_t width, Rng& rng) {
  AttentionParams a;
  a.qkv = make_linear(ps, prefix + ".qkv", width, 3 * width, true, Init::xavier, rng);
  a.proj = make_linear(ps, prefix + ".proj", width, width, true, Init::xavier, rng);
  return a;
}

Var multi_head_attention(Tape& tape, const Var& x, const AttentionParams& p, const AttentionConfig& cfg) {
  const Shape& xs = x.shape();
  const std::size_t width = cfg.heads * cfg.head_dim;
  if (xs.size() != 3 || xs[2] != width) {
    throw DimensionError("attention expects [B, T, " + std::to_string(width) + "], got " + shape_string(xs));
  }
  const std::size_t b = xs[0], t = xs[1];
  const Shape split{b, t, cfg.heads, cfg.head_dim};
  const Var qkv = p.qkv(tape, x);
  Var q = reshape(slice_lastdim(qkv, 0, width), split);
  Var k = reshape(slice_lastdim(qkv, width, width), split);
  Var v = reshape(slice_lastdim(qkv, 2 * width, width), split);
  if (cfg.rope_enabled) {
    q = rope_2d(q, cfg.grid);
    k = rope_2d(k, cfg.grid);
  }
  q = permute(q, {0, 2, 1, 3});  // [B, H, T, hd]
  k = permute(k, {0, 2, 3, 1});  // [B, H, hd, T]
  v = permute(v, {0, 2, 1, 3});
  const Var scores = scale(matmul(q, k), 1.0 / std::sqrt(static_cast<double>(cfg.head_dim)));
  const Var mixed = matmul(softmax_lastdim(scores), v);
  return p.proj(tape, reshape(permute(mixed, {0, 2, 1, 3}), {b, t, width}));
}

std::size_t mlp_hidden_width(std::size_t width, double ratio) {
  const auto h = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(width)));
  if (h == 0) throw ConfigError("mlp hidden width rounds to zero");
  return h;
}

MlpParams make_mlp(ParameterSet& ps, const std::string& prefix, std::size_t width, double ratio, Rng& rng) {
  const std::size_t hidden = mlp_hidden_width(width, ratio);
  MlpParams m;
  m.fc1 = make_linear(ps, prefix + ".fc1", width, hidden, true, Init::xavier, rng);
  m.fc2 = make_linear(ps, prefix + ".fc2", hidden, width, true, Init::xavier, rng);
  return m;
}

Var mlp(Tape& tape, const Var& x, const MlpParams& p) { return p.fc2(tape, gelu_tanh(p.fc1(tape, x))); }

Var adaln_modulate(const Var& x_norm, const Var& gamma, const Var& beta) { return add(mul(gamma, x_norm), beta); }

Var modulate(const Var& x_norm, const Var& gamma, const Var& beta) {
  return adaln_modulate(x_norm, add_scalar(gamma, 1.0), beta);
}

ModulationParams split_modulation(const Var& theta, std::size_t width) {
  if (theta.shape().empty() || theta.shape().back() != 6 * width) {
    throw ConfigError("modulation width " + shape_string(theta.shape()) + " is not 6 x " + std::to_string(width));
  }
  return {slice_lastdim(theta, 0, width),         slice_lastdim(theta, width, width),
          slice_lastdim(theta, 2 * width, width), slice_lastdim(theta, 3 * width, width),
          slice_lastdim(theta, 4 * width, width), slice_lastdim(theta, 5 * width, width)};
}

DitBlockParams make_dit_block(ParameterSet& ps, const std::string& prefix, std::size_t width, double mlp_ratio,
                              Rng& rng) {
  DitBlockParams b;
  b.norm1 = &ps.add(prefix + ".norm1.gain", Tensor(Shape{width}, 1.0));
  b.attn = make_attention(ps, prefix + ".attn", width, rng);
  b.norm2 = &ps.add(prefix + ".norm2.gain", Tensor(Shape{width}, 1.0));
  b.mlp = make_mlp(ps, prefix + ".mlp", width, mlp_ratio, rng);
  b.adaln = make_linear(ps, prefix + ".adaln", width, 6 * width, true, Init::zero, rng);
  return b;
}

Var dit_block(Tape& tape, const Var& s, const Var& c, const DitBlockParams& p, const AttentionConfig& cfg) {
  const std::size_t width = s.shape().back();
  const ModulationParams m = split_modulation(p.adaln(tape, silu(c)), width);
  const Var h = modulate(rms_norm(s, tape.param(*p.norm1)), m.gamma1, m.beta1);
  const Var s_bar = add(s, mul(m.alpha1, multi_head_attention(tape, h, p.attn, cfg)));
  const Var h2 = modulate(rms_norm(s_bar, tape.param(*p.norm2)), m.gamma2, m.beta2);
  return add(s_bar, mul(m.alpha2, mlp(tape, h2, p.mlp)));
}

PitBlockParams make_pit_block(ParameterSet& ps, const std::string& prefix, const PitGeometry& g, Rng& rng) {
  PitBlockParams b;
  b.phi = make_linear(ps, prefix + ".phi", g.width, g.modulation_rows() * 6 * g.pixel_width, true, Init::zero, rng);
  b.norm1 = &ps.add(prefix + ".norm1.gain", Tensor(Shape{g.pixel_width}, 1.0));
  if (g.attention) {
    b.compact = make_linear(ps, prefix + ".compact", g.patch_area * g.pixel_width, g.compaction * g.width, true,
                            Init::xavier, rng);
    b.attn = make_attention(ps, prefix + ".attn", g.width, rng);
    b.expand = make_linear(ps, prefix + ".expand", g.compaction * g.width, g.patch_area * g.pixel_width, true,
                           Init::xavier, rng);
  }
  b.norm2 = &ps.add(prefix + ".norm2.gain", Tensor(Shape{g.pixel_width}, 1.0));
  b.mlp = make_mlp(ps, prefix + ".mlp", g.pixel_width, g.mlp_ratio, rng);
  return b;
}

ModulationParams pixel_adaln_params(Tape& tape, const Var& cond, const LinearParams& phi, const PitGeometry& g) {
  const std::size_t rows = g.modulation_rows();
  if (phi.out() != rows * 6 * g.pixel_width) {
    throw ConfigError("phi emits " + std::to_string(phi.out()) + " values, expected " + std::to_string(rows) +
                      " x 6 x " + std::to_string(g.pixel_width));
  }
  const std::size_t tokens = cond.value().numel() / cond.shape().back();
  const Var theta = reshape(phi(tape, cond), {tokens, rows, 6 * g.pixel_width});
  return split_modulation(theta, g.pixel_width);
}

Var pit_block(Tape& tape, const Var& x, const Var& cond, const PitBlockParams& p, const PitGeometry& g,
              const AttentionConfig& cfg, std::size_t* attention_tokens) {
  const Shape& cs = cond.shape();
  const Shape& xs = x.shape();
  if (cs.size() != 3 || cs[2] != g.width) throw DimensionError("pit_block: cond must be [B, L, D], got " + shape_string(cs));
  const std::size_t batch = cs[0], tokens = cs[1];
  if (xs != Shape{batch * tokens, g.patch_area, g.pixel_width}) {
    throw DimensionError("pit_block: pixel tokens " + shape_string(xs) + " do not match cond " + shape_string(cs));
  }
  const ModulationParams m = pixel_adaln_params(tape, cond, p.phi, g);
  Var out = x;
  if (g.attention) {
    const Var xh = modulate(rms_norm(x, tape.param(*p.norm1)), m.gamma1, m.beta1);
    const Var u = reshape(p.compact(tape, reshape(xh, {batch * tokens, g.patch_area * g.pixel_width})),
                          {batch, tokens * g.compaction, g.width});
    if (attention_tokens) *attention_tokens = u.shape()[1];
    const Var a = multi_head_attention(tape, u, p.attn, cfg);
    const Var y = reshape(p.expand(tape, reshape(a, {batch * tokens, g.compaction * g.width})), xs);
    out = add(out, mul(m.alpha1, y));
  }
  const Var h2 = modulate(rms_norm(out, tape.param(*p.norm2)), m.gamma2, m.beta2);
  return add(out, mul(m.alpha2, mlp(tape, h2, p.mlp)));
}

}  // namespace pixeldit
