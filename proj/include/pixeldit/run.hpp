#pragma once

#include <filesystem>
#include <string>

#include "pixeldit/config.hpp"
#include "pixeldit/dataio.hpp"
#include "pixeldit/model.hpp"
#include "pixeldit/sampler.hpp"
#include "pixeldit/trainer.hpp"

namespace pixeldit {

// Everything a CLI run needs. Config files use sections model., train.,
// sampler., data. and paths.; absent keys keep their defaults.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SamplerConfig sampler;
  ToyDatasetSpec data;
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::filesystem::path metrics_file = "metrics.csv";

  // Resolution, channels and class count must agree between model and data.
  void validate() const;
  KeyValues to_map() const;
  static RunConfig from_map(const KeyValues& kv);
};

// Model config with `kv` entries overlaid on the defaults.
ModelConfig model_config_from(const KeyValues& kv, const ModelConfig& base = ModelConfig{});

}  // namespace pixeldit
