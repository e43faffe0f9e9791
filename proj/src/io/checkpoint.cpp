#include "pixeldit/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pixeldit/errors.hpp"

namespace pixeldit {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'P', 'X', 'D', 'T'};

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw ParseError(std::string("truncated checkpoint while reading ") + what, pos_);
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(std::string_view name) const {
  for (const auto& r : records) {
    if (r.name == name) return &r.value;
  }
  return nullptr;
}

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = header.find(key);
  if (it == header.end()) throw ConfigError("checkpoint header has no '" + key + "'");
  return it->second;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string text;
  for (const auto& [k, v] : ckpt.header) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ConfigError("checkpoint header entry '" + k + "' contains '=' or a newline");
    }
    text += k + "=" + v + "\n";
  }
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, Checkpoint::kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& r : ckpt.records) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.value.rank()));
    for (auto e : r.value.shape()) put<std::uint64_t>(out, e);
    for (double v : r.value.values()) put<float>(out, static_cast<float>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(4, "magic") != std::string_view(kMagic, 4)) throw ParseError("not a checkpoint (bad magic)", 0);
  const auto version = in.get<std::uint32_t>("version");
  if (version != Checkpoint::kVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  Checkpoint ckpt;
  const auto header_len = in.get<std::uint32_t>("header length");
  const std::size_t header_start = in.pos();
  std::istringstream text{std::string(in.take(header_len, "header"))};
  std::string line;
  std::size_t line_start = header_start;
  while (std::getline(text, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("header line without '='", line_start);
    ckpt.header[line.substr(0, eq)] = line.substr(eq + 1);
    line_start += line.size() + 1;
  }
  const auto count = in.get<std::uint32_t>("record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    const auto name_len = in.get<std::uint32_t>("record name length");
    r.name = std::string(in.take(name_len, "record name"));
    const std::size_t shape_at = in.pos();
    const auto ndim = in.get<std::uint32_t>("record rank");
    if (ndim > 8) throw ParseError("record '" + r.name + "' has implausible rank " + std::to_string(ndim), shape_at);
    Shape shape(ndim);
    std::size_t numel = 1;
    for (auto& e : shape) {
      e = in.get<std::uint64_t>("record extent");
      if (e == 0 || numel > (std::size_t{1} << 40) / e) {
        throw ParseError("record '" + r.name + "' has a bad extent", shape_at);
      }
      numel *= e;
    }
    const std::string_view raw = in.take(numel * sizeof(float), "record values");
    std::vector<double> values(numel);
    for (std::size_t j = 0; j < numel; ++j) {
      float f;
      std::memcpy(&f, raw.data() + j * sizeof(float), sizeof(float));
      values[j] = f;
    }
    r.value = Tensor(std::move(shape), std::move(values));
    ckpt.records.push_back(std::move(r));
  }
  if (!in.done()) throw ParseError("trailing bytes after the last record", in.pos());
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // write to a sibling file, then rename over the target
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return decode_checkpoint(os.str());
}

void put_model_config(Checkpoint& ckpt, const ModelConfig& cfg) {
  for (const auto& [k, v] : cfg.to_map()) ckpt.header["model." + k] = v;
}

ModelConfig get_model_config(const Checkpoint& ckpt) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : ckpt.header) {
    if (k.starts_with("model.")) kv[k.substr(6)] = v;
  }
  return ModelConfig::from_map(kv);
}

void put_tensors(Checkpoint& ckpt, const std::string& prefix, const ParameterSet& params) {
  for (const Parameter* p : params.all()) ckpt.records.push_back({prefix + p->name, p->value});
}

void put_tensors(Checkpoint& ckpt, const std::string& prefix, const std::vector<std::string>& names,
                 const std::vector<Tensor>& values) {
  if (names.size() != values.size()) throw DimensionError("put_tensors: name and value counts differ");
  for (std::size_t i = 0; i < names.size(); ++i) ckpt.records.push_back({prefix + names[i], values[i]});
}

std::vector<Tensor> get_tensors(const Checkpoint& ckpt, const std::string& prefix,
                                const std::vector<std::string>& names) {
  std::vector<Tensor> out;
  out.reserve(names.size());
  for (const auto& n : names) {
    const Tensor* t = ckpt.find(prefix + n);
    if (!t) throw ConfigError("checkpoint has no record '" + prefix + n + "'");
    out.push_back(*t);
  }
  return out;
}

void get_tensors(const Checkpoint& ckpt, const std::string& prefix, ParameterSet& params) {
  for (Parameter* p : params.all()) {
    const Tensor* t = ckpt.find(prefix + p->name);
    if (!t) throw ConfigError("checkpoint has no record '" + prefix + p->name + "'");
    if (t->shape() != p->value.shape()) {
      throw ConfigError("checkpoint record '" + prefix + p->name + "' has shape " + shape_string(t->shape()) +
                        ", model expects " + shape_string(p->value.shape()));
    }
    p->value = *t;
  }
}

std::unique_ptr<PixelDiTModel> model_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  auto model = std::make_unique<PixelDiTModel>(get_model_config(ckpt));
  get_tensors(ckpt, prefix, model->params());
  return model;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

}  // namespace pixeldit
