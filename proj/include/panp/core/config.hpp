#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "panp/core/error.hpp"

namespace panp {

/// Version stamped into every JSON output; replays of other versions are rejected.
inline constexpr int kSchemaVersion = 1;

/// Reads optional keys from a JSON object into existing defaults, collecting
/// every type error and unknown key instead of stopping at the first one.
class ConfigReader {
 public:
  explicit ConfigReader(const nlohmann::json& j, std::string path = "");

  template <typename T>
  ConfigReader& get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!ok_ || !j_->contains(key)) return *this;
    try {
      out = j_->at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      errors_->push_back(fmt_key(key) + ": expected " + type_name<T>() + ", got " + j_->at(key).dump());
    }
    return *this;
  }

  /// Reader for a nested object (absent key reads as an empty object).
  ConfigReader child(const std::string& key);
  [[nodiscard]] bool has(const std::string& key) const { return ok_ && j_->contains(key); }
  void error(const std::string& key, const std::string& message);

  /// Flags keys that were never requested, for this object only.
  void reject_unknown();
  /// Throws ConfigError listing every collected problem.
  void finish() const;
  [[nodiscard]] const std::vector<std::string>& errors() const { return *errors_; }

 private:
  ConfigReader(const nlohmann::json* j, std::string path, std::shared_ptr<std::vector<std::string>> errors);
  [[nodiscard]] std::string fmt_key(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  static std::string type_name() {
    if constexpr (std::is_same_v<T, bool>) return "boolean";
    else if constexpr (std::is_integral_v<T>) return "integer";
    else if constexpr (std::is_floating_point_v<T>) return "number";
    else if constexpr (std::is_same_v<T, std::string>) return "string";
    else return "array";
  }

  static const nlohmann::json& empty_object();

  const nlohmann::json* j_;
  std::string path_;
  bool ok_ = true;
  std::set<std::string> seen_;
  std::shared_ptr<std::vector<std::string>> errors_;
};

/// 64-bit FNV-1a over a byte string, as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& bytes);

/// Hash of the canonical (sorted-key, compact) dump of a JSON value.
std::string json_hash(const nlohmann::json& j);

nlohmann::json read_json(const std::string& path);
/// Writes pretty-printed JSON with a trailing newline.
void write_json(const std::string& path, const nlohmann::json& j);

}  // namespace panp
