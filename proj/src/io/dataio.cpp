#include "pixeldit/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "pixeldit/errors.hpp"

namespace pixeldit {

std::string toy_kind_name(ToyKind k) {
  switch (k) {
    case ToyKind::solid_color: return "solid_color";
    case ToyKind::gaussian_blob: return "gaussian_blob";
    case ToyKind::checkerboard_freq: return "checkerboard_freq";
  }
  return "?";
}

ToyKind parse_toy_kind(std::string_view name) {
  if (name == "solid_color") return ToyKind::solid_color;
  if (name == "gaussian_blob") return ToyKind::gaussian_blob;
  if (name == "checkerboard_freq") return ToyKind::checkerboard_freq;
  throw ConfigError("unknown dataset kind '" + std::string(name) +
                    "' (solid_color, gaussian_blob, checkerboard_freq)");
}

void ToyDatasetSpec::validate() const {
  if (num_classes == 0 || height == 0 || width == 0 || samples_per_class == 0) {
    throw ConfigError("dataset sizes must be positive");
  }
  if (channels != 1 && channels != 3) throw ConfigError("dataset channels must be 1 or 3");
  if (!(noise_std >= 0.0)) throw ConfigError("dataset noise_std must be >= 0");
}

namespace {

FieldBinder dataset_fields(ToyDatasetSpec& s) {
  FieldBinder b("data");
  b.bind("kind", [&s] { return toy_kind_name(s.kind); }, [&s](const std::string& v) { s.kind = parse_toy_kind(v); })
      .bind("num_classes", s.num_classes)
      .bind("height", s.height)
      .bind("width", s.width)
      .bind("channels", s.channels)
      .bind("samples_per_class", s.samples_per_class)
      .bind("noise_std", s.noise_std)
      .bind("seed", s.seed);
  return b;
}

void check_class(const ToyDatasetSpec& spec, int class_id) {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= spec.num_classes) {
    throw InputError("class id " + std::to_string(class_id) + " outside [0, " + std::to_string(spec.num_classes) + ")");
  }
}

}  // namespace

KeyValues ToyDatasetSpec::to_map() const {
  ToyDatasetSpec copy = *this;
  return dataset_fields(copy).dump();
}

ToyDatasetSpec ToyDatasetSpec::from_map(const KeyValues& kv, ToyDatasetSpec base) {
  dataset_fields(base).load(kv);
  base.validate();
  return base;
}

std::vector<double> class_color(const ToyDatasetSpec& spec, int class_id) {
  check_class(spec, class_id);
  const double k = static_cast<double>(class_id);
  const double n = static_cast<double>(spec.num_classes);
  if (spec.channels == 1) return {spec.num_classes == 1 ? 0.0 : -0.8 + 1.6 * k / (n - 1.0)};
  // fully saturated hue k / n, mapped from [0, 1] to [-0.8, 0.8]
  const double h = 6.0 * k / n;
  auto channel = [h](double offset) {
    const double d = std::fmod(h + offset, 6.0);
    return std::clamp(std::abs(d - 3.0) - 1.0, 0.0, 1.0);
  };
  return {-0.8 + 1.6 * channel(0.0), -0.8 + 1.6 * channel(4.0), -0.8 + 1.6 * channel(2.0)};
}

Tensor toy_template(const ToyDatasetSpec& spec, int class_id) {
  check_class(spec, class_id);
  const std::size_t c = spec.channels, hh = spec.height, ww = spec.width;
  Tensor img(Shape{c, hh, ww});
  const double k = static_cast<double>(class_id);
  switch (spec.kind) {
    case ToyKind::solid_color: {
      const auto color = class_color(spec, class_id);
      for (std::size_t ch = 0; ch < c; ++ch) std::fill_n(img.data() + ch * hh * ww, hh * ww, color[ch]);
      break;
    }
    case ToyKind::gaussian_blob: {
      // centers on a circle of radius H/4, width H/8
      const double angle = 2.0 * std::numbers::pi * k / static_cast<double>(spec.num_classes);
      const double cy = 0.5 * static_cast<double>(hh) - 0.5 + 0.25 * static_cast<double>(hh) * std::sin(angle);
      const double cx = 0.5 * static_cast<double>(ww) - 0.5 + 0.25 * static_cast<double>(ww) * std::cos(angle);
      const double sigma = static_cast<double>(std::min(hh, ww)) / 8.0;
      for (std::size_t y = 0; y < hh; ++y) {
        for (std::size_t x = 0; x < ww; ++x) {
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          const double v = -0.8 + 1.6 * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
          for (std::size_t ch = 0; ch < c; ++ch) img[(ch * hh + y) * ww + x] = v;
        }
      }
      break;
    }
    case ToyKind::checkerboard_freq: {
      // class k has k + 1 light/dark cell pairs along each axis
      const double f = 2.0 * (k + 1.0);
      for (std::size_t y = 0; y < hh; ++y) {
        for (std::size_t x = 0; x < ww; ++x) {
          const auto cy = static_cast<long>(std::floor(static_cast<double>(y) * f / static_cast<double>(hh)));
          const auto cx = static_cast<long>(std::floor(static_cast<double>(x) * f / static_cast<double>(ww)));
          const double v = (cy + cx) % 2 == 0 ? 0.8 : -0.8;
          for (std::size_t ch = 0; ch < c; ++ch) img[(ch * hh + y) * ww + x] = v;
        }
      }
      break;
    }
  }
  return img;
}

namespace {

void add_noise(double* px, std::size_t n, double stddev, Rng& rng) {
  if (stddev > 0.0) {
    std::normal_distribution<double> noise(0.0, stddev);
    for (std::size_t i = 0; i < n; ++i) px[i] += noise(rng);
  }
  for (std::size_t i = 0; i < n; ++i) px[i] = std::clamp(px[i], -1.0, 1.0);
}

}  // namespace

Tensor generate_toy_batch(const ToyDatasetSpec& spec, std::span<const int> class_ids, Rng& rng) {
  spec.validate();
  const std::size_t per = spec.channels * spec.height * spec.width;
  Tensor out(Shape{class_ids.size(), spec.channels, spec.height, spec.width});
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    const Tensor t = toy_template(spec, class_ids[i]);
    std::copy_n(t.data(), per, out.data() + i * per);
    add_noise(out.data() + i * per, per, spec.noise_std, rng);
  }
  return out;
}

Tensor ImageDataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t per = images.numel() / size();
  Shape shape = images.shape();
  shape[0] = indices.size();
  Tensor out = Tensor::uninitialized(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw InputError("dataset index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(images.data() + indices[i] * per, per, out.data() + i * per);
  }
  return out;
}

ImageDataset make_toy_dataset(const ToyDatasetSpec& spec) {
  spec.validate();
  const std::size_t n = spec.num_classes * spec.samples_per_class;
  const std::size_t per = spec.channels * spec.height * spec.width;
  ImageDataset d;
  d.num_classes = spec.num_classes;
  d.images = Tensor(Shape{n, spec.channels, spec.height, spec.width});
  d.labels.resize(n);
  std::vector<Tensor> templates;
  for (std::size_t k = 0; k < spec.num_classes; ++k) templates.push_back(toy_template(spec, static_cast<int>(k)));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i / spec.samples_per_class;
    d.labels[i] = static_cast<int>(k);
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i >> 32)};
    Rng rng(seq);
    std::copy_n(templates[k].data(), per, d.images.data() + i * per);
    add_noise(d.images.data() + i * per, per, spec.noise_std, rng);
  }
  return d;
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::string_view b) : b_(b) {}

  // Skips whitespace and '#' comments, then reads a decimal field.
  std::size_t number(const char* what) {
    for (;;) {
      if (pos_ >= b_.size()) throw ParseError(std::string("netpbm header ends before ") + what, pos_);
      const char c = b_[pos_];
      if (c == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(static_cast<unsigned char>(b_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(b_[pos_] - '0');
      if (v > (1u << 24)) throw ParseError(std::string("netpbm ") + what + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("expected netpbm ") + what, start);
    return v;
  }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }

 private:
  std::string_view b_;
  std::size_t pos_ = 2;
};

}  // namespace

Tensor decode_netpbm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ParseError("not a binary netpbm image (expected P5 or P6)", 0);
  }
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  HeaderReader h(bytes);
  const std::size_t w = h.number("width");
  const std::size_t ht = h.number("height");
  const std::size_t maxval_at = h.pos();
  const std::size_t maxval = h.number("maxval");
  if (w == 0 || ht == 0) throw ParseError("netpbm image has a zero extent", maxval_at);
  if (maxval != 255) throw ParseError("only maxval 255 is supported, got " + std::to_string(maxval), maxval_at);
  if (h.pos() >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[h.pos()]))) {
    throw ParseError("expected a single whitespace byte before the netpbm payload", h.pos());
  }
  h.advance();
  const std::size_t payload = h.pos();
  const std::size_t need = w * ht * channels;
  if (bytes.size() - payload < need) {
    throw ParseError("truncated netpbm payload: need " + std::to_string(need) + " bytes, have " +
                         std::to_string(bytes.size() - payload),
                     bytes.size());
  }
  Tensor img(Shape{channels, ht, w});
  for (std::size_t y = 0; y < ht; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        const auto b = static_cast<unsigned char>(bytes[payload + (y * w + x) * channels + c]);
        img[(c * ht + y) * w + x] = static_cast<double>(b) / 127.5 - 1.0;
      }
    }
  }
  return img;
}

std::string encode_netpbm(const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw DimensionError("netpbm images must be [1|3, H, W], got " + shape_string(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::string out = (c == 3 ? "P6\n" : "P5\n") + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + c * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = std::clamp(image[(ch * h + y) * w + x], -1.0, 1.0);
        out[header + (y * w + x) * c + ch] = static_cast<char>(static_cast<unsigned char>(std::lround((v + 1.0) * 127.5)));
      }
    }
  }
  return out;
}

Tensor read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open image " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  try {
    return decode_netpbm(os.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
  const std::string bytes = encode_netpbm(image);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

std::size_t write_dataset(const ImageDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t per = data.images.numel() / data.size();
  const Shape one(data.images.shape().begin() + 1, data.images.shape().end());
  const char* ext = one[0] == 3 ? ".ppm" : ".pgm";
  std::ofstream labels(dir / "labels.csv", std::ios::trunc);
  labels << "file,label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string rel = "class_" + std::to_string(data.labels[i]) + "/" + std::to_string(i) + ext;
    Tensor img(one, std::vector<double>(data.images.data() + i * per, data.images.data() + (i + 1) * per));
    write_image(dir / rel, img);
    labels << rel << "," << data.labels[i] << "\n";
  }
  if (!labels) throw Error("failed writing " + (dir / "labels.csv").string());
  return data.size();
}

ImageDataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream labels(dir / "labels.csv");
  if (!labels) throw InputError("no labels.csv in " + dir.string());
  std::string line;
  std::getline(labels, line);
  if (line != "file,label") throw InputError("labels.csv: unexpected header '" + line + "'");
  std::vector<Tensor> images;
  ImageDataset d;
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw InputError("labels.csv: malformed line '" + line + "'");
    images.push_back(read_image(dir / line.substr(0, comma)));
    const int label = static_cast<int>(parse_uint("label", line.substr(comma + 1)));
    d.labels.push_back(label);
    d.num_classes = std::max<std::size_t>(d.num_classes, static_cast<std::size_t>(label) + 1);
    if (images.back().shape() != images.front().shape()) throw InputError("dataset images differ in shape");
  }
  if (images.empty()) throw InputError("dataset " + dir.string() + " is empty");
  Shape shape = images.front().shape();
  shape.insert(shape.begin(), images.size());
  d.images = Tensor(shape);
  const std::size_t per = images.front().numel();
  for (std::size_t i = 0; i < images.size(); ++i) std::copy_n(images[i].data(), per, d.images.data() + i * per);
  return d;
}

}  // namespace pixeldit
