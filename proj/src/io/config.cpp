#include "pixeldit/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pixeldit/errors.hpp"

namespace pixeldit {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool valid_key(std::string_view key) {
  if (key.empty() || key.front() == '.' || key.back() == '.') return false;
  char prev = 0;
  for (char c : key) {
    if (c == '.' && prev == '.') return false;
    if (c != '.' && c != '_' && !std::isalnum(static_cast<unsigned char>(c))) return false;
    prev = c;
  }
  return true;
}

}  // namespace

KeyValues parse_config_text(std::string_view text, const std::string& source) {
  KeyValues kv;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto where = source + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    if (!valid_key(key)) throw ConfigError(where + ": invalid key '" + key + "'");
    if (kv.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    kv[key] = std::string(trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config_text(os.str(), path);
}

KeyValues section(const KeyValues& kv, const std::string& name) {
  KeyValues out;
  const std::string prefix = name + ".";
  for (const auto& [k, v] : kv) {
    if (k.starts_with(prefix)) out[k.substr(prefix.size())] = v;
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  double v = 0.0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end || value.empty()) throw ConfigError("bad number for " + key + ": '" + value + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end || value.empty()) {
    throw ConfigError("bad non-negative integer for " + key + ": '" + value + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("bad boolean for " + key + ": '" + value + "'");
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

FieldBinder& FieldBinder::bind(const std::string& key, double& v) {
  const std::string full = section_ + "." + key;
  return bind(key, [&v] { return format_double(v); }, [&v, full](const std::string& s) { v = parse_double(full, s); });
}

FieldBinder& FieldBinder::bind(const std::string& key, std::size_t& v) {
  const std::string full = section_ + "." + key;
  return bind(
      key, [&v] { return std::to_string(v); }, [&v, full](const std::string& s) { v = parse_uint(full, s); });
}

FieldBinder& FieldBinder::bind(const std::string& key, bool& v) {
  const std::string full = section_ + "." + key;
  return bind(
      key, [&v] { return std::string(v ? "true" : "false"); },
      [&v, full](const std::string& s) { v = parse_bool(full, s); });
}

FieldBinder& FieldBinder::bind(const std::string& key, std::string& v) {
  return bind(key, [&v] { return v; }, [&v](const std::string& s) { v = s; });
}

FieldBinder& FieldBinder::bind(const std::string& key, std::function<std::string()> get,
                               std::function<void(const std::string&)> set) {
  fields_.push_back({key, std::move(get), std::move(set)});
  return *this;
}

KeyValues FieldBinder::dump() const {
  KeyValues kv;
  for (const auto& f : fields_) kv[f.key] = f.get();
  return kv;
}

void FieldBinder::load(const KeyValues& kv) const {
  for (const auto& [k, v] : kv) {
    const Field* match = nullptr;
    for (const auto& f : fields_) {
      if (f.key == k) match = &f;
    }
    if (!match) throw ConfigError("unknown config key '" + section_ + "." + k + "'");
    match->set(v);
  }
}

}  // namespace pixeldit
