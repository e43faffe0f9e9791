#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "pixeldit/model.hpp"

namespace pixeldit {

// Versioned container of named float32 tensors plus a text header.
//
//   "PXDT"                     4 bytes magic
//   u32 version                currently 1
//   u32 header_len             bytes of header text that follow
//   header text                "key=value\n" lines, keys sorted
//   u32 record_count
//   per record:
//     u32 name_len, name bytes
//     u32 ndim, ndim x u64 extents
//     numel x f32 values
//
// Integers and floats are little-endian.
struct CheckpointRecord {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> header;
  std::vector<CheckpointRecord> records;

  const Tensor* find(std::string_view name) const;
  const std::string& meta(const std::string& key) const;  // ConfigError if absent
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Model config under "model.*" header keys.
void put_model_config(Checkpoint& ckpt, const ModelConfig& cfg);
ModelConfig get_model_config(const Checkpoint& ckpt);

// Appends every parameter as "<prefix><name>".
void put_tensors(Checkpoint& ckpt, const std::string& prefix, const ParameterSet& params);
void put_tensors(Checkpoint& ckpt, const std::string& prefix, const std::vector<std::string>& names,
                 const std::vector<Tensor>& values);
// Copies "<prefix><name>" into each parameter; missing records or shape
// mismatches raise ConfigError.
void get_tensors(const Checkpoint& ckpt, const std::string& prefix, ParameterSet& params);
std::vector<Tensor> get_tensors(const Checkpoint& ckpt, const std::string& prefix,
                                const std::vector<std::string>& names);

// Builds the model described by the header and loads "<prefix>*" weights
// ("params/" for raw, "ema/" for the moving average).
std::unique_ptr<PixelDiTModel> model_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix = "params/");

std::string sha256_hex(std::string_view bytes);

}  // namespace pixeldit
