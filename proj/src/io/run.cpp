#include "pixeldit/run.hpp"

#include "pixeldit/errors.hpp"

namespace pixeldit {

ModelConfig model_config_from(const KeyValues& kv, const ModelConfig& base) {
  auto merged = base.to_map();
  for (const auto& [k, v] : kv) {
    if (!merged.count(k)) throw ConfigError("unknown config key 'model." + k + "'");
    merged[k] = v;
  }
  return ModelConfig::from_map(merged);
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  sampler.validate();
  data.validate();
  if (data.height != model.height || data.width != model.width) {
    throw ConfigError("data resolution " + std::to_string(data.height) + "x" + std::to_string(data.width) +
                      " differs from model resolution " + std::to_string(model.height) + "x" +
                      std::to_string(model.width));
  }
  if (data.channels != model.channels) throw ConfigError("data.channels differs from model.channels");
  if (data.num_classes != model.num_classes) throw ConfigError("data.num_classes differs from model.num_classes");
}

KeyValues RunConfig::to_map() const {
  KeyValues kv;
  for (const auto& [k, v] : model.to_map()) kv["model." + k] = v;
  for (const auto& [k, v] : train.to_map()) kv["train." + k] = v;
  for (const auto& [k, v] : sampler.to_map()) kv["sampler." + k] = v;
  for (const auto& [k, v] : data.to_map()) kv["data." + k] = v;
  kv["paths.checkpoint_dir"] = checkpoint_dir.string();
  kv["paths.metrics_file"] = metrics_file.string();
  return kv;
}

RunConfig RunConfig::from_map(const KeyValues& kv) {
  for (const auto& [k, v] : kv) {
    const auto dot = k.find('.');
    const std::string sec = dot == std::string::npos ? k : k.substr(0, dot);
    if (sec != "model" && sec != "train" && sec != "sampler" && sec != "data" && sec != "paths") {
      throw ConfigError("unknown config key '" + k + "'");
    }
  }
  RunConfig rc;
  rc.model = model_config_from(section(kv, "model"));
  rc.train = TrainConfig::from_map(section(kv, "train"));
  rc.sampler = SamplerConfig::from_map(section(kv, "sampler"));
  // the dataset follows the model's geometry unless set explicitly
  ToyDatasetSpec data;
  data.height = rc.model.height;
  data.width = rc.model.width;
  data.channels = rc.model.channels;
  data.num_classes = rc.model.num_classes;
  rc.data = ToyDatasetSpec::from_map(section(kv, "data"), data);
  std::string ckpt = rc.checkpoint_dir.string(), metrics = rc.metrics_file.string();
  FieldBinder("paths").bind("checkpoint_dir", ckpt).bind("metrics_file", metrics).load(section(kv, "paths"));
  rc.checkpoint_dir = ckpt;
  rc.metrics_file = metrics;
  rc.validate();
  return rc;
}

}  // namespace pixeldit
