#include "pixeldit/flow.hpp"

#include <cmath>

#include "pixeldit/errors.hpp"

namespace pixeldit {

double TimestepSampler::operator()(Rng& rng) const {
  switch (kind) {
    case Kind::fixed:
      return value;
    case Kind::uniform: {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      double t = 0.0;
      while (t <= 0.0 || t >= 1.0) t = u(rng);
      return t;
    }
    case Kind::logit_normal:
      break;
  }
  std::normal_distribution<double> n(mean, stddev);
  double t = 0.0;
  // sigma(z) rounds to 0 or 1 only for |z| > ~37; resample those
  while (t <= 0.0 || t >= 1.0) t = 1.0 / (1.0 + std::exp(-n(rng)));
  return t;
}

FlowBatch make_flow_batch(Tensor x0, Tensor eps, std::vector<double> t) {
  require_same_shape(x0, eps, "make_flow_batch");
  if (x0.rank() == 0 || x0.dim(0) != t.size()) {
    throw DimensionError("make_flow_batch: " + std::to_string(t.size()) + " timesteps for images " +
                         shape_string(x0.shape()));
  }
  FlowBatch b;
  b.x_t = Tensor::uninitialized(x0.shape());
  b.v_t = Tensor::uninitialized(x0.shape());
  const std::size_t per = x0.numel() / t.size();
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double ti = t[i];
    for (std::size_t j = i * per; j < (i + 1) * per; ++j) {
      b.x_t[j] = (1.0 - ti) * x0[j] + ti * eps[j];
      b.v_t[j] = eps[j] - x0[j];
    }
  }
  b.x0 = std::move(x0);
  b.eps = std::move(eps);
  b.t = std::move(t);
  return b;
}

FlowBatch make_flow_batch(Tensor x0, Rng& rng, const TimestepSampler& t_sampler) {
  if (x0.rank() == 0) throw DimensionError("make_flow_batch: images need a batch axis");
  Tensor eps = normal_tensor(x0.shape(), 1.0, rng);
  std::vector<double> t(x0.dim(0));
  for (auto& v : t) v = t_sampler(rng);
  return make_flow_batch(std::move(x0), std::move(eps), std::move(t));
}

Var loss_diffusion(const Var& prediction, const Tensor& target) {
  Tape& tape = prediction.tape();
  if (prediction.shape() != target.shape()) {
    throw DimensionError("loss_diffusion: prediction " + shape_string(prediction.shape()) + " vs target " +
                         shape_string(target.shape()));
  }
  return mean(square(sub(prediction, tape.constant(target))));
}

Var loss_diffusion(PixelDiTModel& model, Tape& tape, const FlowBatch& batch, std::span<const int> y) {
  const ModelOutput out = model.forward(tape, tape.constant(batch.x_t), batch.t, y);
  return loss_diffusion(out.velocity, batch.v_t);
}

Var loss_repa(const Var& projected, const Tensor& features, std::size_t* zero_norm_count) {
  Tape& tape = projected.tape();
  if (projected.shape() != features.shape() || features.rank() != 3) {
    throw DimensionError("loss_repa: projected " + shape_string(projected.shape()) + " vs features " +
                         shape_string(features.shape()));
  }
  const Var cos = cosine_similarity_lastdim(projected, tape.constant(features), zero_norm_count);
  return add_scalar(scale(mean(cos), -1.0), 1.0);
}

ToyAlignmentEncoder::ToyAlignmentEncoder(std::size_t patch, std::size_t channels, std::size_t feature_dim,
                                         std::uint64_t seed)
    : patch_(patch), channels_(channels), feature_dim_(feature_dim) {
  if (patch == 0 || channels == 0 || feature_dim == 0) throw ConfigError("alignment encoder needs positive sizes");
  Rng rng(seed);
  const std::size_t in = patch * patch * channels;
  projection_ = normal_tensor({in, feature_dim}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

Tensor ToyAlignmentEncoder::evaluate(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != channels_) {
    throw DimensionError("alignment encoder expects [B, " + std::to_string(channels_) + ", H, W], got " +
                         shape_string(images.shape()));
  }
  const Tensor tokens = patchify(images, patch_);
  const std::size_t rows = tokens.dim(0) * tokens.dim(1), in = tokens.dim(2);
  Tensor out(Shape{tokens.dim(0), tokens.dim(1), feature_dim_});
  for (std::size_t r = 0; r < rows; ++r) {
    double* f = out.data() + r * feature_dim_;
    const double* x = tokens.data() + r * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double* w = projection_.data() + i * feature_dim_;
      for (std::size_t j = 0; j < feature_dim_; ++j) f[j] += x[i] * w[j];
    }
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < feature_dim_; ++j) mu += f[j];
    mu /= static_cast<double>(feature_dim_);
    for (std::size_t j = 0; j < feature_dim_; ++j) var += (f[j] - mu) * (f[j] - mu);
    var /= static_cast<double>(feature_dim_);
    const double inv = 1.0 / std::sqrt(var + 1e-6);
    for (std::size_t j = 0; j < feature_dim_; ++j) f[j] = (f[j] - mu) * inv;
  }
  return out;
}

}  // namespace pixeldit
