#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pixeldit/blocks.hpp"

namespace pixeldit {

enum class Variant {
  pixelwise,           // C: full model
  patchwise,           // B
  global,              // A: pixel pathway modulated by the global condition only
  no_pixel_attention,  // C without compaction, attention and expansion
  vanilla_dit,         // patch pathway with a linear patch head
};

std::string variant_name(Variant v);
Variant parse_variant(std::string_view name);

struct ModelConfig {
  std::size_t depth_patch = 2;   // N
  std::size_t depth_pixel = 2;   // M
  std::size_t hidden = 16;       // D
  std::size_t pixel_hidden = 4;  // D_pix
  std::size_t patch = 2;         // p
  std::size_t heads = 2;
  std::size_t num_classes = 10;  // the null class id is num_classes
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t channels = 3;
  std::size_t compaction = 1;  // k compacted tokens per patch
  double mlp_ratio = 4.0;
  Variant variant = Variant::pixelwise;
  bool pixel_rope = true;
  bool cond_uses_c = false;   // s_cond = s_N + c instead of s_N + t_emb
  std::size_t repa_dim = 0;   // 0 disables the alignment projector
  std::size_t repa_block = 8;

  void validate() const;

  std::size_t grid_rows() const { return height / patch; }
  std::size_t grid_cols() const { return width / patch; }
  std::size_t tokens() const { return grid_rows() * grid_cols(); }
  std::size_t patch_area() const { return patch * patch; }
  std::size_t patch_dim() const { return patch_area() * channels; }
  std::size_t null_class() const { return num_classes; }
  // 1-based index of the patch block whose output feeds the alignment loss.
  std::size_t repa_tap() const { return std::min(repa_block, depth_patch); }
  std::size_t pixel_attention_tokens() const { return tokens() * compaction; }
  PitGeometry pit_geometry() const;

  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);
  bool operator==(const ModelConfig&) const = default;
};

// Presets at 256x256, p = 16, 1000 classes.
ModelConfig preset(std::string_view name);

// Transformer sinusoidal features of pos = 1000 t: [sin(pos w_0), cos(pos w_0),
// sin(pos w_1), ...] with w_i = base^(-2i / dim).
Tensor timestep_features(std::span<const double> t, std::size_t dim, double base = 10000.0);

// [B, C, H, W] -> [B, L, p^2 C]; token l is the row-major patch (r, q) and
// entry (py * p + px) * C + c within it.
Var patchify(const Var& x, std::size_t p);
Var unpatchify(const Var& tokens, std::size_t p, std::size_t channels, std::size_t height, std::size_t width);
Tensor patchify(const Tensor& x, std::size_t p);
Tensor unpatchify(const Tensor& tokens, std::size_t p, std::size_t channels, std::size_t height, std::size_t width);

struct Condition {
  Var c;      // SiLU(t_emb + W_y[y] + b), [B, 1, D]
  Var t_emb;  // [B, 1, D]
};

struct ModelOutput {
  Var velocity;  // [B, C, H, W]
  Var tap;       // patch tokens after block repa_tap(), if N > 0
  Var repa;      // projector(tap) [B, L, F], if repa_dim > 0
  std::size_t pixel_attention_tokens = 0;  // sequence length seen by PiT attention
};

class PixelDiTModel {
 public:
  explicit PixelDiTModel(const ModelConfig& cfg, std::uint64_t seed = 0);
  PixelDiTModel(const PixelDiTModel&) = delete;
  PixelDiTModel& operator=(const PixelDiTModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  Condition embed_condition(Tape& tape, std::span<const double> t, std::span<const int> y);
  Var patch_pathway(Tape& tape, const Var& s0, const Var& c, Var* tap = nullptr);
  ModelOutput forward(Tape& tape, const Var& x_t, std::span<const double> t, std::span<const int> y);
  // Gradient-free evaluation.
  Tensor velocity(const Tensor& x_t, std::span<const double> t, std::span<const int> y);

  const std::vector<DitBlockParams>& dit_blocks() const { return dit_; }
  const std::vector<PitBlockParams>& pit_blocks() const { return pit_; }
  AttentionConfig patch_attention() const;
  AttentionConfig pixel_attention() const;

  // Replaces every parameter with N(0, stddev) draws (gains get 1 + draw).
  // Used by derivative checks so that no path is gated off.
  void randomize(std::uint64_t seed, double stddev);

 private:
  ModelConfig cfg_;
  ParameterSet params_;
  LinearParams patch_embed_;
  LinearParams t_fc1_, t_fc2_, t_proj_;
  Parameter* class_table_ = nullptr;
  Parameter* class_bias_ = nullptr;
  std::vector<DitBlockParams> dit_;
  LinearParams pixel_embed_;
  std::vector<PitBlockParams> pit_;
  LinearParams pixel_head_;
  Parameter* final_norm_ = nullptr;  // vanilla_dit only
  LinearParams final_adaln_, final_head_;
  LinearParams repa_fc1_, repa_fc2_;
};

}  // namespace pixeldit
