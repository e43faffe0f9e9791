#include "pixeldit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "pixeldit/errors.hpp"

namespace pixeldit {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !(lr_after_switch > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(0.0 <= beta1 && beta1 < 1.0 && 0.0 <= beta2 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(0.0 < ema_decay && ema_decay < 1.0)) throw ConfigError("ema_decay must lie in (0, 1)");
  if (!(clip_norm > 0.0) || !(clip_after_switch > 0.0)) throw ConfigError("clip norms must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(0.0 <= class_drop_prob && class_drop_prob <= 1.0)) throw ConfigError("class_drop_prob must lie in [0, 1]");
  if (!(lambda_repa >= 0.0)) throw ConfigError("lambda_repa must be >= 0");
  if (!(t_std > 0.0)) throw ConfigError("t_std must be positive");
}

namespace {

FieldBinder train_fields(TrainConfig& c) {
  FieldBinder b("train");
  b.bind("lr", c.lr)
      .bind("lr_after_switch", c.lr_after_switch)
      .bind("switch_step", c.switch_step)
      .bind("beta1", c.beta1)
      .bind("beta2", c.beta2)
      .bind("adam_eps", c.adam_eps)
      .bind("weight_decay", c.weight_decay)
      .bind("ema_decay", c.ema_decay)
      .bind("clip_norm", c.clip_norm)
      .bind("clip_after_switch", c.clip_after_switch)
      .bind("batch_size", c.batch_size)
      .bind("total_steps", c.total_steps)
      .bind("class_drop_prob", c.class_drop_prob)
      .bind("lambda_repa", c.lambda_repa)
      .bind("t_mean", c.t_mean)
      .bind("t_std", c.t_std)
      .bind("seed", c.seed)
      .bind("checkpoint_every", c.checkpoint_every);
  return b;
}

bool finite_grads(std::span<Parameter* const> params) {
  for (const Parameter* p : params) {
    if (p->has_grad() && !p->grad.all_finite()) return false;
  }
  return true;
}

}  // namespace

KeyValues TrainConfig::to_map() const {
  TrainConfig copy = *this;
  return train_fields(copy).dump();
}

TrainConfig TrainConfig::from_map(const KeyValues& kv, TrainConfig base) {
  train_fields(base).load(kv);
  base.validate();
  return base;
}

bool adamw_step(std::span<Parameter* const> params, AdamMoments& moments, double lr, const TrainConfig& cfg) {
  if (!finite_grads(params)) return false;
  if (moments.m.size() != params.size()) {
    moments.m.clear();
    moments.v.clear();
    for (const Parameter* p : params) {
      moments.m.emplace_back(p->value.shape());
      moments.v.emplace_back(p->value.shape());
    }
  }
  ++moments.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(moments.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(moments.t));
  const double shrink = 1.0 - lr * cfg.weight_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    double* m = moments.m[k].data();
    double* v = moments.v[k].data();
    double* w = p.value.data();
    const double* g = p.has_grad() ? p.grad.data() : nullptr;
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double gi = g ? g[i] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      w[i] *= shrink;
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
    }
  }
  return true;
}

double clip_gradients(std::span<Parameter* const> params, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip max_norm must be positive");
  double sq = 0.0;
  for (const Parameter* p : params) {
    if (p->has_grad()) sq += sum_of_squares(p->grad);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Parameter* p : params) {
      if (p->has_grad()) {
        for (auto& g : p->grad.values()) g *= s;
      }
    }
  }
  return norm;
}

void ema_update(std::vector<Tensor>& ema, std::span<Parameter* const> params, double decay) {
  if (ema.size() != params.size()) throw DimensionError("ema_update: parameter count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    require_same_shape(ema[k], params[k]->value, "ema_update");
    double* e = ema[k].data();
    const double* w = params[k]->value.data();
    for (std::size_t i = 0; i < ema[k].numel(); ++i) e[i] = decay * e[i] + (1.0 - decay) * w[i];
  }
}

void round_to_float(Tensor& t) {
  for (auto& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

std::string format_metric_row(const MetricRow& r) {
  return std::to_string(r.step) + "," + format_double(r.loss) + "," + format_double(r.loss_diff) + "," +
         format_double(r.loss_repa) + "," + format_double(r.grad_norm) + "," + format_double(r.lr);
}

Trainer::Trainer(PixelDiTModel& model, const ImageDataset& data, TrainConfig cfg,
                 std::shared_ptr<const AlignmentEncoder> encoder)
    : model_(model), data_(data), cfg_(std::move(cfg)), encoder_(std::move(encoder)), rng_(cfg_.seed) {
  cfg_.validate();
  const ModelConfig& mc = model.config();
  if (data.size() < cfg_.batch_size) {
    throw ConfigError("dataset has " + std::to_string(data.size()) + " items, fewer than batch_size " +
                      std::to_string(cfg_.batch_size));
  }
  const Shape& s = data.images.shape();
  if (s.size() != 4 || s[1] != mc.channels || s[2] != mc.height || s[3] != mc.width) {
    throw ConfigError("dataset images " + shape_string(s) + " do not match the model resolution");
  }
  if (data.num_classes > mc.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data.num_classes) + " classes, model only " +
                      std::to_string(mc.num_classes));
  }
  if (!encoder_ && mc.repa_dim > 0 && cfg_.lambda_repa > 0.0) {
    encoder_ = std::make_shared<ToyAlignmentEncoder>(mc.patch, mc.channels, mc.repa_dim, cfg_.seed ^ 0x5EEDu);
  }
  if (encoder_ && encoder_->feature_dim() != mc.repa_dim) {
    throw ConfigError("alignment encoder width does not match model.repa_dim");
  }
  params_ = model.params().all();
  for (Parameter* p : params_) {
    round_to_float(p->value);
    names_.push_back(p->name);
    ema_.push_back(p->value);
    adam_.m.emplace_back(p->value.shape());
    adam_.v.emplace_back(p->value.shape());
  }
}

std::vector<std::size_t> Trainer::next_indices() {
  const std::size_t n = data_.size();
  if (order_.empty() || cursor_ + cfg_.batch_size > n) {
    if (!order_.empty()) {
      ++epoch_;
      cursor_ = 0;
    }
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                      static_cast<std::uint32_t>(epoch_), 0x0D15EA5Eu};
    Rng shuffle_rng(seq);
    std::shuffle(order_.begin(), order_.end(), shuffle_rng);
  }
  std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + cfg_.batch_size));
  cursor_ += cfg_.batch_size;
  return idx;
}

MetricRow Trainer::step() {
  const bool switched = cfg_.switch_step > 0 && step_ >= cfg_.switch_step;
  const double lr = switched ? cfg_.lr_after_switch : cfg_.lr;
  const double clip = switched ? cfg_.clip_after_switch : cfg_.clip_norm;

  const auto idx = next_indices();
  Tensor x0 = data_.batch(idx);
  std::vector<int> y(idx.size());
  std::bernoulli_distribution drop(cfg_.class_drop_prob);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    y[i] = drop(rng_) ? static_cast<int>(model_.config().null_class()) : data_.labels[idx[i]];
  }
  TimestepSampler ts;
  ts.mean = cfg_.t_mean;
  ts.stddev = cfg_.t_std;
  Tensor features;
  const bool repa = encoder_ && cfg_.lambda_repa > 0.0;
  if (repa) features = encoder_->evaluate(x0);
  const FlowBatch batch = make_flow_batch(std::move(x0), rng_, ts);

  model_.params().zero_grad();
  Tape tape;
  const ModelOutput out = model_.forward(tape, tape.constant(batch.x_t), batch.t, y);
  const Var l_diff = loss_diffusion(out.velocity, batch.v_t);
  Var total = l_diff;
  Var l_repa;
  if (repa) {
    l_repa = loss_repa(out.repa, features, &zero_norm_rows_);
    total = add(l_diff, scale(l_repa, cfg_.lambda_repa));
  }

  MetricRow row;
  row.step = step_;
  row.loss = total.value().item();
  row.loss_diff = l_diff.value().item();
  row.loss_repa = repa ? l_repa.value().item() : 0.0;
  row.lr = lr;

  if (!std::isfinite(row.loss)) {
    ++skipped_;
    if (++nonfinite_streak_ >= 10) {
      std::ostringstream os;
      os << "loss was non-finite for " << nonfinite_streak_ << " consecutive steps (step " << step_
         << ", loss_diff " << row.loss_diff << ", loss_repa " << row.loss_repa << ", lr " << lr << ")";
      throw NumericError(os.str());
    }
    row.grad_norm = std::numeric_limits<double>::quiet_NaN();
  } else {
    nonfinite_streak_ = 0;
    tape.backward(total);
    row.grad_norm = clip_gradients(params_, clip);
    if (std::isfinite(row.grad_norm) && adamw_step(params_, adam_, lr, cfg_)) {
      for (std::size_t k = 0; k < params_.size(); ++k) {
        round_to_float(params_[k]->value);
        round_to_float(adam_.m[k]);
        round_to_float(adam_.v[k]);
      }
      ema_update(ema_, params_, cfg_.ema_decay);
      for (auto& e : ema_) round_to_float(e);
    } else {
      ++skipped_;
    }
  }
  ++step_;
  history_.push_back(row);
  return row;
}

void Trainer::run(std::ostream* metrics, const std::filesystem::path& checkpoint_dir) {
  if (metrics && step_ == 0) *metrics << kMetricsHeader << "\n";
  auto save = [&](const std::string& name) {
    if (!checkpoint_dir.empty()) save_checkpoint(checkpoint_dir / name, checkpoint());
  };
  while (step_ < cfg_.total_steps) {
    const MetricRow row = step();
    if (metrics) *metrics << format_metric_row(row) << "\n";
    if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0 && step_ < cfg_.total_steps) {
      char name[32];
      std::snprintf(name, sizeof(name), "step_%08zu.ckpt", step_);
      save(name);
    }
  }
  if (metrics) metrics->flush();
  save("final.ckpt");
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  put_model_config(c, model_.config());
  for (const auto& [k, v] : cfg_.to_map()) c.header["train." + k] = v;
  c.header["state.step"] = std::to_string(step_);
  c.header["state.adam_t"] = std::to_string(adam_.t);
  c.header["state.epoch"] = std::to_string(epoch_);
  c.header["state.cursor"] = std::to_string(cursor_);
  c.header["state.order_ready"] = order_.empty() ? "false" : "true";
  c.header["state.skipped"] = std::to_string(skipped_);
  c.header["state.nonfinite_streak"] = std::to_string(nonfinite_streak_);
  c.header["state.zero_norm_rows"] = std::to_string(zero_norm_rows_);
  std::ostringstream rng;
  rng << rng_;
  c.header["state.rng"] = rng.str();
  put_tensors(c, "params/", model_.params());
  put_tensors(c, "ema/", names_, ema_);
  put_tensors(c, "adam_m/", names_, adam_.m);
  put_tensors(c, "adam_v/", names_, adam_.v);
  return c;
}

void Trainer::resume(const Checkpoint& ckpt) {
  if (!(get_model_config(ckpt) == model_.config())) throw ConfigError("checkpoint model config differs from the model");
  get_tensors(ckpt, "params/", model_.params());
  ema_ = get_tensors(ckpt, "ema/", names_);
  adam_.m = get_tensors(ckpt, "adam_m/", names_);
  adam_.v = get_tensors(ckpt, "adam_v/", names_);
  auto num = [&](const char* key) { return static_cast<std::size_t>(parse_uint(key, ckpt.meta(key))); };
  step_ = num("state.step");
  adam_.t = num("state.adam_t");
  epoch_ = num("state.epoch");
  cursor_ = num("state.cursor");
  skipped_ = num("state.skipped");
  nonfinite_streak_ = num("state.nonfinite_streak");
  zero_norm_rows_ = num("state.zero_norm_rows");
  std::istringstream rng(ckpt.meta("state.rng"));
  rng >> rng_;
  if (!rng) throw ConfigError("checkpoint rng state is malformed");
  order_.clear();
  if (parse_bool("state.order_ready", ckpt.meta("state.order_ready"))) {
    // rebuild the current epoch's permutation without advancing
    const std::size_t cursor = cursor_;
    cursor_ = 0;
    next_indices();
    cursor_ = cursor;
  }
  history_.clear();
}

void Trainer::copy_ema_to(PixelDiTModel& target) const {
  auto dst = target.params().all();
  if (dst.size() != ema_.size()) throw ConfigError("copy_ema_to: architecture mismatch");
  for (std::size_t k = 0; k < dst.size(); ++k) {
    require_same_shape(dst[k]->value, ema_[k], "copy_ema_to");
    dst[k]->value = ema_[k];
  }
}

}  // namespace pixeldit
