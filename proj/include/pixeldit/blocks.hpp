#pragma once

#include <string>

#include "pixeldit/ops.hpp"
#include "pixeldit/parameters.hpp"

namespace pixeldit {

enum class Init { xavier, zero };

struct LinearParams {
  Parameter* weight = nullptr;  // [in, out]
  Parameter* bias = nullptr;    // [out], or null

  Var operator()(Tape& tape, const Var& x) const;
  std::size_t in() const { return weight->value.dim(0); }
  std::size_t out() const { return weight->value.dim(1); }
};

LinearParams make_linear(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, bool bias,
                         Init init, Rng& rng);

struct AttentionConfig {
  std::size_t heads = 1;
  std::size_t head_dim = 1;
  bool rope_enabled = true;
  Grid grid;

  static AttentionConfig for_width(std::size_t width, std::size_t heads, bool rope, Grid grid);
};

struct AttentionParams {
  LinearParams qkv;   // D -> 3D, laid out [q | k | v]
  LinearParams proj;  // D -> D
};

AttentionParams make_attention(ParameterSet& ps, const std::string& prefix, std::size_t width, Rng& rng);

// x: [B, T, D] -> [B, T, D].
Var multi_head_attention(Tape& tape, const Var& x, const AttentionParams& p, const AttentionConfig& cfg);

struct MlpParams {
  LinearParams fc1;
  LinearParams fc2;
};

std::size_t mlp_hidden_width(std::size_t width, double ratio);
MlpParams make_mlp(ParameterSet& ps, const std::string& prefix, std::size_t width, double ratio, Rng& rng);
// fc2(gelu_tanh(fc1(x)))
Var mlp(Tape& tape, const Var& x, const MlpParams& p);

// gamma * x_norm + beta
Var adaln_modulate(const Var& x_norm, const Var& gamma, const Var& beta);

struct ModulationParams {
  Var beta1, gamma1, alpha1, beta2, gamma2, alpha2;
};

// Splits the last axis of theta [.., 6 * width] into the six groups, in the
// order beta1, gamma1, alpha1, beta2, gamma2, alpha2.
ModulationParams split_modulation(const Var& theta, std::size_t width);

// adaln_modulate with the scale taken as (1 + gamma); used inside the blocks.
Var modulate(const Var& x_norm, const Var& gamma, const Var& beta);

struct DitBlockParams {
  Parameter* norm1 = nullptr;
  AttentionParams attn;
  Parameter* norm2 = nullptr;
  MlpParams mlp;
  LinearParams adaln;  // D -> 6D on SiLU(c), zero-initialized
};

DitBlockParams make_dit_block(ParameterSet& ps, const std::string& prefix, std::size_t width, double mlp_ratio,
                              Rng& rng);

// s: [B, L, D], c: [B, 1, D].
Var dit_block(Tape& tape, const Var& s, const Var& c, const DitBlockParams& p, const AttentionConfig& cfg);

enum class PixelModulation {
  global,     // one parameter set per image (variant A)
  patchwise,  // one per patch, shared by its p^2 pixels (variant B)
  pixelwise,  // one per pixel (variant C)
};

struct PitGeometry {
  std::size_t patch_area = 1;   // p^2
  std::size_t pixel_width = 1;  // D_pix
  std::size_t width = 1;        // D
  std::size_t compaction = 1;   // k tokens per patch
  double mlp_ratio = 4.0;
  PixelModulation modulation = PixelModulation::pixelwise;
  bool attention = true;  // false drops compaction, attention and expansion

  std::size_t modulation_rows() const { return modulation == PixelModulation::pixelwise ? patch_area : 1; }
};

struct PitBlockParams {
  LinearParams phi;  // D -> rows * 6 * D_pix, zero-initialized
  Parameter* norm1 = nullptr;
  LinearParams compact;  // p^2 * D_pix -> k * D
  AttentionParams attn;
  LinearParams expand;  // k * D -> p^2 * D_pix
  Parameter* norm2 = nullptr;
  MlpParams mlp;
};

PitBlockParams make_pit_block(ParameterSet& ps, const std::string& prefix, const PitGeometry& g, Rng& rng);

// cond: [B*L, D] or [B, L, D] -> six groups of [B*L, rows, D_pix].
ModulationParams pixel_adaln_params(Tape& tape, const Var& cond, const LinearParams& phi, const PitGeometry& g);

// x: [B*L, p^2, D_pix]; cond: [B, L, D]. cfg describes attention over the
// k*L compacted tokens. `attention_tokens`, when given, receives the
// sequence length the attention step ran on.
Var pit_block(Tape& tape, const Var& x, const Var& cond, const PitBlockParams& p, const PitGeometry& g,
              const AttentionConfig& cfg, std::size_t* attention_tokens = nullptr);

}  // namespace pixeldit
