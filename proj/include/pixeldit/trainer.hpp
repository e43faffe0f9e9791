#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "pixeldit/checkpoint.hpp"
#include "pixeldit/config.hpp"
#include "pixeldit/dataio.hpp"
#include "pixeldit/flow.hpp"
#include "pixeldit/model.hpp"

namespace pixeldit {

struct TrainConfig {
  double lr = 1e-4;
  double lr_after_switch = 1e-5;
  std::size_t switch_step = 0;  // 0 keeps lr and clip_norm fixed
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double ema_decay = 0.9999;
  double clip_norm = 1.0;
  double clip_after_switch = 0.5;
  std::size_t batch_size = 64;
  std::size_t total_steps = 1000;
  double class_drop_prob = 0.1;
  double lambda_repa = 0.5;
  double t_mean = 0.0;  // logit-normal timestep location
  double t_std = 1.0;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0 writes only the final checkpoint

  void validate() const;
  KeyValues to_map() const;
  static TrainConfig from_map(const KeyValues& kv, TrainConfig base);
  static TrainConfig from_map(const KeyValues& kv) { return from_map(kv, TrainConfig{}); }
};

struct AdamMoments {
  std::vector<Tensor> m, v;
  std::size_t t = 0;  // updates applied so far
};

// Bias-corrected Adam with decoupled weight decay (p <- p (1 - lr wd) first).
// Returns false, leaving everything untouched, if any gradient is non-finite.
bool adamw_step(std::span<Parameter* const> params, AdamMoments& moments, double lr, const TrainConfig& cfg);

// Global L2 norm over all gradients; rescales to max_norm when above it.
// Returns the norm before clipping.
double clip_gradients(std::span<Parameter* const> params, double max_norm);

// ema <- decay ema + (1 - decay) params
void ema_update(std::vector<Tensor>& ema, std::span<Parameter* const> params, double decay);

// Rounds every entry to the nearest float32 value.
void round_to_float(Tensor& t);

struct MetricRow {
  std::size_t step = 0;
  double loss = 0.0;
  double loss_diff = 0.0;
  double loss_repa = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,loss,loss_diff,loss_repa,grad_norm,lr";
std::string format_metric_row(const MetricRow& row);

class Trainer {
 public:
  // `encoder` may be null; an alignment encoder is then built from the seed
  // when the model has a projector and lambda_repa > 0.
  Trainer(PixelDiTModel& model, const ImageDataset& data, TrainConfig cfg,
          std::shared_ptr<const AlignmentEncoder> encoder = nullptr);

  // One optimization step. Non-finite losses skip the update; ten in a row
  // raise NumericError.
  MetricRow step();
  // Runs until total_steps, streaming CSV rows to `metrics` (header first
  // when starting at step 0) and writing checkpoints into `checkpoint_dir`
  // when it is non-empty.
  void run(std::ostream* metrics, const std::filesystem::path& checkpoint_dir = {});

  Checkpoint checkpoint() const;
  void resume(const Checkpoint& ckpt);

  std::size_t steps_done() const { return step_; }
  std::size_t skipped_steps() const { return skipped_; }
  std::size_t zero_norm_rows() const { return zero_norm_rows_; }
  const std::vector<MetricRow>& history() const { return history_; }
  const std::vector<Tensor>& ema() const { return ema_; }
  const AdamMoments& moments() const { return adam_; }
  const TrainConfig& config() const { return cfg_; }

  // Copies the EMA weights into `target`, which must share the architecture.
  void copy_ema_to(PixelDiTModel& target) const;

 private:
  std::vector<std::size_t> next_indices();

  PixelDiTModel& model_;
  const ImageDataset& data_;
  TrainConfig cfg_;
  std::shared_ptr<const AlignmentEncoder> encoder_;
  std::vector<Parameter*> params_;
  std::vector<std::string> names_;
  AdamMoments adam_;
  std::vector<Tensor> ema_;
  Rng rng_;
  std::size_t step_ = 0;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
  std::size_t skipped_ = 0;
  std::size_t nonfinite_streak_ = 0;
  std::size_t zero_norm_rows_ = 0;
  std::vector<MetricRow> history_;
};

}  // namespace pixeldit
