#pragma once

#include <memory>
#include <span>
#include <vector>

#include "pixeldit/model.hpp"
#include "pixeldit/parameters.hpp"

namespace pixeldit {

// Convention: t = 0 is data, t = 1 is noise.
struct FlowBatch {
  Tensor x0;
  Tensor eps;
  std::vector<double> t;  // one per sample
  Tensor x_t;             // (1 - t) x0 + t eps
  Tensor v_t;             // eps - x0
};

struct TimestepSampler {
  enum class Kind { logit_normal, uniform, fixed };
  Kind kind = Kind::logit_normal;
  double mean = 0.0;   // logit-normal location
  double stddev = 1.0;  // logit-normal scale
  double value = 0.5;  // Kind::fixed

  // Strictly inside (0, 1) for the random kinds.
  double operator()(Rng& rng) const;
};

// Deterministic interpolation for given noise and times.
FlowBatch make_flow_batch(Tensor x0, Tensor eps, std::vector<double> t);
// eps ~ N(0, 1) and one t per sample, drawn from `rng` in that order.
FlowBatch make_flow_batch(Tensor x0, Rng& rng, const TimestepSampler& t_sampler);

// Mean over all elements of (prediction - target)^2.
Var loss_diffusion(const Var& prediction, const Tensor& target);
Var loss_diffusion(PixelDiTModel& model, Tape& tape, const FlowBatch& batch, std::span<const int> y);

// Mean over [B, L] of 1 - cos(projected, features). Zero-norm rows count as
// similarity 0 and bump `zero_norm_count`.
Var loss_repa(const Var& projected, const Tensor& features, std::size_t* zero_norm_count = nullptr);

// Frozen per-patch feature extractor used by the alignment loss.
class AlignmentEncoder {
 public:
  virtual ~AlignmentEncoder() = default;
  virtual std::size_t feature_dim() const = 0;
  // [B, C, H, W] images -> [B, L, F] features.
  virtual Tensor evaluate(const Tensor& images) const = 0;
};

// Seeded random projection of each p x p patch, then per-row standardization
// (zero mean, unit variance).
class ToyAlignmentEncoder final : public AlignmentEncoder {
 public:
  ToyAlignmentEncoder(std::size_t patch, std::size_t channels, std::size_t feature_dim, std::uint64_t seed);
  std::size_t feature_dim() const override { return feature_dim_; }
  Tensor evaluate(const Tensor& images) const override;

 private:
  std::size_t patch_, channels_, feature_dim_;
  Tensor projection_;  // [p^2 C, F]
};

}  // namespace pixeldit
