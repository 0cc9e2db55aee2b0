#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "blora/errors.hpp"

namespace blora::detail {

// Strict view over one JSON object. Every key read is recorded; finish()
// rejects whatever was not read.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& object, std::string path)
      : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) throw ConfigError(where_self() + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return object_.contains(key);
  }

  const nlohmann::json& raw(const std::string& key) {
    seen_.insert(key);
    if (!object_.contains(key)) throw ConfigError("missing key '" + where(key) + "'");
    return object_.at(key);
  }

  double number(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_number()) throw ConfigError("key '" + where(key) + "' must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError("key '" + where(key) + "' must be finite");
    return x;
  }
  void number(const std::string& key, double& out) {
    if (has(key)) out = number(key);
  }

  std::int64_t integer(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_number_integer()) throw ConfigError("key '" + where(key) + "' must be an integer");
    return v.get<std::int64_t>();
  }
  void count(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const std::int64_t v = integer(key);
    if (v < 0) throw ConfigError("key '" + where(key) + "' must be non-negative");
    out = static_cast<std::size_t>(v);
  }
  void seed(const std::string& key, std::uint64_t& out) {
    if (!has(key)) return;
    const auto& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw ConfigError("key '" + where(key) + "' must be a non-negative integer");
    }
    out = v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_boolean()) throw ConfigError("key '" + where(key) + "' must be a boolean");
    return v.get<bool>();
  }
  void boolean(const std::string& key, bool& out) {
    if (has(key)) out = boolean(key);
  }

  std::string string(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_string()) throw ConfigError("key '" + where(key) + "' must be a string");
    return v.get<std::string>();
  }
  void string(const std::string& key, std::string& out) {
    if (has(key)) out = string(key);
  }

  ObjectReader object(const std::string& key) { return ObjectReader(raw(key), where(key)); }

  const nlohmann::json& array(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_array()) throw ConfigError("key '" + where(key) + "' must be an array");
    return v;
  }

  void finish() const {
    for (auto it = object_.begin(); it != object_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + where(it.key()) + "'");
    }
  }

  std::string where(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }
  const std::string& path() const { return path_; }

 private:
  std::string where_self() const { return path_.empty() ? "document" : "'" + path_ + "'"; }

  const nlohmann::json& object_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void check_schema(ObjectReader& reader, bool required) {
  if (!reader.has("schema")) {
    if (required) throw ConfigError("missing key 'schema'");
    return;
  }
  if (reader.integer("schema") != 1) {
    throw ConfigError("unsupported schema version (expected 1)");
  }
}

inline double element_number(const nlohmann::json& v, const std::string& where) {
  if (!v.is_number()) throw ConfigError("key '" + where + "' must hold numbers");
  return v.get<double>();
}

}  // namespace blora::detail
