#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace pixeldit {

// Config text grammar, one entry per line:
//
//   entry   := key ws* "=" ws* value
//   key     := segment ("." segment)*      segment := [A-Za-z0-9_]+
//   value   := rest of the line, surrounding blanks trimmed
//
// Blank lines and lines starting with "#" are ignored; a repeated key is an
// error. Sections are key prefixes: "train.lr" is key "lr" of section "train".
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_config_text(std::string_view text, const std::string& source = "config");
KeyValues read_config_file(const std::string& path);

// Entries under "<section>." with the prefix stripped.
KeyValues section(const KeyValues& kv, const std::string& name);

double parse_double(const std::string& key, const std::string& value);
std::uint64_t parse_uint(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
std::string format_double(double v);  // shortest form that round-trips

// Binds string keys to struct members for dump/load with typo rejection.
class FieldBinder {
 public:
  explicit FieldBinder(std::string section) : section_(std::move(section)) {}

  FieldBinder& bind(const std::string& key, double& v);
  FieldBinder& bind(const std::string& key, std::size_t& v);
  FieldBinder& bind(const std::string& key, bool& v);
  FieldBinder& bind(const std::string& key, std::string& v);
  FieldBinder& bind(const std::string& key, std::function<std::string()> get,
                    std::function<void(const std::string&)> set);

  KeyValues dump() const;
  // Unknown keys raise ConfigError naming "<section>.<key>".
  void load(const KeyValues& kv) const;

 private:
  struct Field {
    std::string key;
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
  };
  std::string section_;
  std::vector<Field> fields_;
};

}  // namespace pixeldit
