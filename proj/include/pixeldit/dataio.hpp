#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pixeldit/config.hpp"
#include "pixeldit/parameters.hpp"

namespace pixeldit {

enum class ToyKind { solid_color, gaussian_blob, checkerboard_freq };

std::string toy_kind_name(ToyKind k);
ToyKind parse_toy_kind(std::string_view name);

struct ToyDatasetSpec {
  ToyKind kind = ToyKind::solid_color;
  std::size_t num_classes = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;
  std::size_t samples_per_class = 256;
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
  KeyValues to_map() const;
  static ToyDatasetSpec from_map(const KeyValues& kv, ToyDatasetSpec base);
  static ToyDatasetSpec from_map(const KeyValues& kv) { return from_map(kv, ToyDatasetSpec{}); }
};

// Noise-free class template [C, H, W] in [-1, 1].
Tensor toy_template(const ToyDatasetSpec& spec, int class_id);
// Per-channel color of a solid_color class.
std::vector<double> class_color(const ToyDatasetSpec& spec, int class_id);

// Templates plus N(0, noise_std) noise from `rng`, clamped to [-1, 1].
Tensor generate_toy_batch(const ToyDatasetSpec& spec, std::span<const int> class_ids, Rng& rng);

struct ImageDataset {
  Tensor images;            // [N, C, H, W] in [-1, 1]
  std::vector<int> labels;  // N class ids
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  // Gathers rows `indices` into a batch.
  Tensor batch(std::span<const std::size_t> indices) const;
};

// Item i has class i / samples_per_class and noise seeded from (seed, i), so
// any item can be regenerated on its own.
ImageDataset make_toy_dataset(const ToyDatasetSpec& spec);

// Binary netpbm, maxval 255: P6 for 3 channels, P5 for 1. Pixel values map
// linearly between [0, 255] and [-1, 1].
Tensor decode_netpbm(std::string_view bytes);  // [C, H, W]
std::string encode_netpbm(const Tensor& image);
Tensor read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Tensor& image);

// Writes class_<k>/<i>.ppm (or .pgm) plus labels.csv; returns the file count.
std::size_t write_dataset(const ImageDataset& data, const std::filesystem::path& dir);
// Reads a directory produced by write_dataset.
ImageDataset read_dataset(const std::filesystem::path& dir);

}  // namespace pixeldit
