#include "pixeldit/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pixeldit/errors.hpp"

namespace pixeldit {

namespace {

constexpr std::pair<Variant, const char*> kVariantNames[] = {
    {Variant::pixelwise, "pixelwise"},
    {Variant::patchwise, "patchwise"},
    {Variant::global, "global"},
    {Variant::no_pixel_attention, "no_pixel_attention"},
    {Variant::vanilla_dit, "vanilla_dit"},
};

}  // namespace

std::string variant_name(Variant v) {
  for (auto& [k, name] : kVariantNames)
    if (k == v) return name;
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (auto& [k, n] : kVariantNames)
    if (name == n) return k;
  if (name == "C") return Variant::pixelwise;
  if (name == "B") return Variant::patchwise;
  if (name == "A") return Variant::global;
  throw ConfigError("unknown model variant '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw ConfigError(std::string(what) + " must be positive");
  };
  positive(hidden, "hidden (D)");
  positive(pixel_hidden, "pixel_hidden (D_pix)");
  positive(patch, "patch (p)");
  positive(heads, "heads");
  positive(num_classes, "num_classes");
  positive(height, "height");
  positive(width, "width");
  positive(channels, "channels");
  positive(compaction, "compaction");
  if (height % patch || width % patch) {
    throw ConfigError("resolution " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by patch " + std::to_string(patch));
  }
  if (hidden % 2) throw ConfigError("hidden (D) must be even for sinusoidal timestep features");
  AttentionConfig::for_width(hidden, heads, true, {});
  if (!(mlp_ratio > 0.0)) throw ConfigError("mlp_ratio must be positive");
  if (repa_dim > 0 && depth_patch == 0) throw ConfigError("alignment projector needs at least one patch block");
  if (repa_dim > 0 && repa_block == 0) throw ConfigError("repa_block must be positive");
}

PitGeometry ModelConfig::pit_geometry() const {
  PitGeometry g;
  g.patch_area = patch_area();
  g.pixel_width = pixel_hidden;
  g.width = hidden;
  g.compaction = compaction;
  g.mlp_ratio = mlp_ratio;
  g.modulation = variant == Variant::patchwise ? PixelModulation::patchwise
                 : variant == Variant::global  ? PixelModulation::global
                                               : PixelModulation::pixelwise;
  g.attention = variant != Variant::no_pixel_attention;
  return g;
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  return {
      {"depth_patch", std::to_string(depth_patch)}, {"depth_pixel", std::to_string(depth_pixel)},
      {"hidden", std::to_string(hidden)},           {"pixel_hidden", std::to_string(pixel_hidden)},
      {"patch", std::to_string(patch)},             {"heads", std::to_string(heads)},
      {"num_classes", std::to_string(num_classes)}, {"height", std::to_string(height)},
      {"width", std::to_string(width)},             {"channels", std::to_string(channels)},
      {"compaction", std::to_string(compaction)},   {"mlp_ratio", num(mlp_ratio)},
      {"variant", variant_name(variant)},           {"pixel_rope", pixel_rope ? "true" : "false"},
      {"cond_uses_c", cond_uses_c ? "true" : "false"}, {"repa_dim", std::to_string(repa_dim)},
      {"repa_block", std::to_string(repa_block)},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError(std::string("model config is missing '") + key + "'");
    return it->second;
  };
  auto uint = [&](const char* key) {
    const std::string& s = get(key);
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != s.size() || s.empty() || s[0] == '-') throw ConfigError(std::string("bad integer for ") + key + ": " + s);
    return static_cast<std::size_t>(v);
  };
  auto boolean = [&](const char* key) {
    const std::string& s = get(key);
    if (s == "true") return true;
    if (s == "false") return false;
    throw ConfigError(std::string("bad boolean for ") + key + ": " + s);
  };
  for (const auto& [k, v] : kv) {
    if (!c.to_map().count(k)) throw ConfigError("unknown model config key '" + k + "'");
  }
  c.depth_patch = uint("depth_patch");
  c.depth_pixel = uint("depth_pixel");
  c.hidden = uint("hidden");
  c.pixel_hidden = uint("pixel_hidden");
  c.patch = uint("patch");
  c.heads = uint("heads");
  c.num_classes = uint("num_classes");
  c.height = uint("height");
  c.width = uint("width");
  c.channels = uint("channels");
  c.compaction = uint("compaction");
  try {
    c.mlp_ratio = std::stod(get("mlp_ratio"));
  } catch (const std::invalid_argument&) {
    throw ConfigError("bad mlp_ratio: " + get("mlp_ratio"));
  }
  c.variant = parse_variant(get("variant"));
  c.pixel_rope = boolean("pixel_rope");
  c.cond_uses_c = boolean("cond_uses_c");
  c.repa_dim = uint("repa_dim");
  c.repa_block = uint("repa_block");
  c.validate();
  return c;
}

ModelConfig preset(std::string_view name) {
  ModelConfig c;
  c.patch = 16;
  c.height = c.width = 256;
  c.channels = 3;
  c.num_classes = 1000;
  c.pixel_hidden = 16;
  if (name == "B") {
    c.depth_patch = 12, c.depth_pixel = 2, c.hidden = 768, c.heads = 12;
  } else if (name == "L") {
    c.depth_patch = 22, c.depth_pixel = 4, c.hidden = 1024, c.heads = 16;
  } else if (name == "XL") {
    c.depth_patch = 26, c.depth_pixel = 4, c.hidden = 1152, c.heads = 16;
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected B, L or XL)");
  }
  return c;
}

Tensor timestep_features(std::span<const double> t, std::size_t dim, double base) {
  if (dim % 2) throw ConfigError("timestep feature dimension must be even");
  Tensor out(Shape{t.size(), dim});
  const std::size_t half = dim / 2;
  for (std::size_t b = 0; b < t.size(); ++b) {
    const double pos = 1000.0 * t[b];
    for (std::size_t i = 0; i < half; ++i) {
      const double w = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
      out[b * dim + 2 * i] = std::sin(pos * w);
      out[b * dim + 2 * i + 1] = std::cos(pos * w);
    }
  }
  return out;
}

namespace {

void check_image(const Shape& s, std::size_t p) {
  if (s.size() != 4) throw DimensionError("expected an image batch [B, C, H, W], got " + shape_string(s));
  if (p == 0 || s[2] % p || s[3] % p) {
    throw DimensionError("image " + shape_string(s) + " is not divisible into " + std::to_string(p) + "x" +
                         std::to_string(p) + " patches");
  }
}

// [B, C, R, p, Q, p] <-> [B, R, Q, p, p, C]
const std::vector<std::size_t> kToTokens{0, 2, 4, 3, 5, 1};
const std::vector<std::size_t> kToImage{0, 5, 1, 3, 2, 4};

}  // namespace

Var patchify(const Var& x, std::size_t p) {
  const Shape& s = x.shape();
  check_image(s, p);
  const std::size_t r = s[2] / p, q = s[3] / p;
  const Var grid = permute(reshape(x, {s[0], s[1], r, p, q, p}), kToTokens);
  return reshape(grid, {s[0], r * q, p * p * s[1]});
}

Var unpatchify(const Var& tokens, std::size_t p, std::size_t channels, std::size_t height, std::size_t width) {
  const Shape& s = tokens.shape();
  const std::size_t r = height / p, q = width / p;
  if (s.size() != 3 || s[1] != r * q || s[2] != p * p * channels) {
    throw DimensionError("unpatchify: tokens " + shape_string(s) + " do not match a " + std::to_string(channels) + "x" +
                         std::to_string(height) + "x" + std::to_string(width) + " image");
  }
  const Var grid = permute(reshape(tokens, {s[0], r, q, p, p, channels}), kToImage);
  return reshape(grid, {s[0], channels, height, width});
}

Tensor patchify(const Tensor& x, std::size_t p) {
  const Shape& s = x.shape();
  check_image(s, p);
  const std::size_t r = s[2] / p, q = s[3] / p;
  return permute_tensor(x.reshaped({s[0], s[1], r, p, q, p}), kToTokens).reshaped({s[0], r * q, p * p * s[1]});
}

Tensor unpatchify(const Tensor& tokens, std::size_t p, std::size_t channels, std::size_t height, std::size_t width) {
  const std::size_t r = height / p, q = width / p;
  const std::size_t b = tokens.numel() / (r * q * p * p * channels);
  if (tokens.shape() != Shape{b, r * q, p * p * channels}) {
    throw DimensionError("unpatchify: tokens " + shape_string(tokens.shape()) + " do not match the image size");
  }
  return permute_tensor(tokens.reshaped({b, r, q, p, p, channels}), kToImage).reshaped({b, channels, height, width});
}

PixelDiTModel::PixelDiTModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const std::size_t d = cfg_.hidden;
  patch_embed_ = make_linear(params_, "patch_embed", cfg_.patch_dim(), d, true, Init::xavier, rng);
  t_fc1_ = make_linear(params_, "t_embed.fc1", d, d, true, Init::xavier, rng);
  t_fc2_ = make_linear(params_, "t_embed.fc2", d, d, true, Init::xavier, rng);
  t_proj_ = make_linear(params_, "t_embed.proj", d, d, false, Init::xavier, rng);
  class_table_ = &params_.add("class_embed.table", normal_tensor({cfg_.num_classes + 1, d}, 0.02, rng));
  class_bias_ = &params_.add("class_embed.bias", Tensor(Shape{d}));
  for (std::size_t i = 0; i < cfg_.depth_patch; ++i) {
    dit_.push_back(make_dit_block(params_, "dit." + std::to_string(i), d, cfg_.mlp_ratio, rng));
  }
  if (cfg_.variant == Variant::vanilla_dit) {
    final_norm_ = &params_.add("final.norm.gain", Tensor(Shape{d}, 1.0));
    final_adaln_ = make_linear(params_, "final.adaln", d, 2 * d, true, Init::zero, rng);
    final_head_ = make_linear(params_, "final.head", d, cfg_.patch_dim(), true, Init::zero, rng);
  } else {
    const PitGeometry g = cfg_.pit_geometry();
    pixel_embed_ = make_linear(params_, "pixel_embed", cfg_.channels, cfg_.pixel_hidden, true, Init::xavier, rng);
    for (std::size_t i = 0; i < cfg_.depth_pixel; ++i) {
      pit_.push_back(make_pit_block(params_, "pit." + std::to_string(i), g, rng));
    }
    pixel_head_ = make_linear(params_, "pixel_head", cfg_.pixel_hidden, cfg_.channels, true, Init::zero, rng);
  }
  if (cfg_.repa_dim > 0) {
    repa_fc1_ = make_linear(params_, "repa.fc1", d, d, true, Init::xavier, rng);
    repa_fc2_ = make_linear(params_, "repa.fc2", d, cfg_.repa_dim, true, Init::xavier, rng);
  }
}

AttentionConfig PixelDiTModel::patch_attention() const {
  return AttentionConfig::for_width(cfg_.hidden, cfg_.heads, true, {cfg_.grid_rows(), cfg_.grid_cols()});
}

AttentionConfig PixelDiTModel::pixel_attention() const {
  return AttentionConfig::for_width(cfg_.hidden, cfg_.heads, cfg_.pixel_rope,
                                    {cfg_.grid_rows(), cfg_.grid_cols() * cfg_.compaction});
}

Condition PixelDiTModel::embed_condition(Tape& tape, std::span<const double> t, std::span<const int> y) {
  if (t.size() != y.size() || t.empty()) {
    throw DimensionError("embed_condition: " + std::to_string(t.size()) + " timesteps for " +
                         std::to_string(y.size()) + " labels");
  }
  for (int id : y) {
    if (id < 0 || static_cast<std::size_t>(id) > cfg_.null_class()) {
      throw InputError("class id " + std::to_string(id) + " outside [0, " + std::to_string(cfg_.null_class()) + "]");
    }
  }
  const std::size_t b = t.size(), d = cfg_.hidden;
  const Var feats = tape.constant(timestep_features(t, d));
  const Var t_emb = reshape(t_proj_(tape, t_fc2_(tape, silu(t_fc1_(tape, feats)))), {b, 1, d});
  const Var cls = reshape(gather_rows(tape.param(*class_table_), y), {b, 1, d});
  const Var c = silu(add(add(t_emb, cls), tape.param(*class_bias_)));
  return {c, t_emb};
}

Var PixelDiTModel::patch_pathway(Tape& tape, const Var& s0, const Var& c, Var* tap) {
  const AttentionConfig attn = patch_attention();
  Var s = s0;
  for (std::size_t i = 0; i < dit_.size(); ++i) {
    s = dit_block(tape, s, c, dit_[i], attn);
    if (tap && i + 1 == cfg_.repa_tap()) *tap = s;
  }
  return s;
}

ModelOutput PixelDiTModel::forward(Tape& tape, const Var& x_t, std::span<const double> t, std::span<const int> y) {
  const Shape& xs = x_t.shape();
  if (xs.size() != 4 || xs[1] != cfg_.channels || xs[2] != cfg_.height || xs[3] != cfg_.width) {
    throw DimensionError("model expects [B, " + std::to_string(cfg_.channels) + ", " + std::to_string(cfg_.height) +
                         ", " + std::to_string(cfg_.width) + "], got " + shape_string(xs));
  }
  if (xs[0] != t.size()) throw DimensionError("batch of " + std::to_string(xs[0]) + " with " + std::to_string(t.size()) + " timesteps");
  const std::size_t b = xs[0], l = cfg_.tokens(), d = cfg_.hidden, p = cfg_.patch;
  ModelOutput out;

  const Var tokens = patchify(x_t, p);
  const Condition cond = embed_condition(tape, t, y);
  const Var s_n = patch_pathway(tape, patch_embed_(tape, tokens), cond.c, &out.tap);
  if (out.tap.valid() && cfg_.repa_dim > 0) out.repa = repa_fc2_(tape, silu(repa_fc1_(tape, out.tap)));

  Var patch_out;
  if (cfg_.variant == Variant::vanilla_dit) {
    const Var mod = final_adaln_(tape, silu(cond.c));
    const Var h = modulate(rms_norm(s_n, tape.param(*final_norm_)), slice_lastdim(mod, d, d), slice_lastdim(mod, 0, d));
    patch_out = final_head_(tape, h);
  } else {
    Var pix_cond;
    if (cfg_.variant == Variant::global) {
      pix_cond = broadcast_to(cond.c, {b, l, d});
    } else {
      pix_cond = add(s_n, cfg_.cond_uses_c ? cond.c : cond.t_emb);
    }
    const PitGeometry g = cfg_.pit_geometry();
    const AttentionConfig attn = pixel_attention();
    Var x = pixel_embed_(tape, reshape(tokens, {b * l, cfg_.patch_area(), cfg_.channels}));
    for (const auto& block : pit_) x = pit_block(tape, x, pix_cond, block, g, attn, &out.pixel_attention_tokens);
    patch_out = reshape(pixel_head_(tape, x), {b, l, cfg_.patch_dim()});
  }
  out.velocity = unpatchify(patch_out, p, cfg_.channels, cfg_.height, cfg_.width);
  return out;
}

Tensor PixelDiTModel::velocity(const Tensor& x_t, std::span<const double> t, std::span<const int> y) {
  Tape tape(false);
  return forward(tape, tape.constant(x_t), t, y).velocity.value();
}

void PixelDiTModel::randomize(std::uint64_t seed, double stddev) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, stddev);
  for (Parameter* p : params_.all()) {
    const bool gain = p->name.size() >= 5 && p->name.compare(p->name.size() - 5, 5, ".gain") == 0;
    for (auto& v : p->value.values()) v = (gain ? 1.0 : 0.0) + n(rng);
  }
}

}  // namespace pixeldit
