#include "panp/core/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace panp {

ConfigReader::ConfigReader(const nlohmann::json& j, std::string path)
    : ConfigReader(&j, std::move(path), std::make_shared<std::vector<std::string>>()) {}

ConfigReader::ConfigReader(const nlohmann::json* j, std::string path,
                           std::shared_ptr<std::vector<std::string>> errors)
    : j_(j), path_(std::move(path)), errors_(std::move(errors)) {
  if (!j_->is_object()) {
    errors_->push_back(fmt::format("{}: expected an object, got {}", path_.empty() ? "<root>" : path_, j_->dump()));
    ok_ = false;
    j_ = &empty_object();
  }
}

const nlohmann::json& ConfigReader::empty_object() {
  static const nlohmann::json e = nlohmann::json::object();
  return e;
}

ConfigReader ConfigReader::child(const std::string& key) {
  seen_.insert(key);
  const nlohmann::json* sub = ok_ && j_->contains(key) ? &j_->at(key) : &empty_object();
  return ConfigReader(sub, fmt_key(key), errors_);
}

void ConfigReader::error(const std::string& key, const std::string& message) {
  errors_->push_back(fmt_key(key) + ": " + message);
}

void ConfigReader::reject_unknown() {
  if (!ok_) return;
  for (const auto& [key, value] : j_->items())
    if (!seen_.count(key)) errors_->push_back(fmt_key(key) + ": unknown key");
}

void ConfigReader::finish() const {
  if (errors_->empty()) return;
  std::string msg = fmt::format("invalid configuration ({} problem{}):", errors_->size(), errors_->size() == 1 ? "" : "s");
  for (const auto& e : *errors_) msg += "\n  " + e;
  throw ConfigError(msg);
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

std::string json_hash(const nlohmann::json& j) { return fnv1a_hex(j.dump()); }

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open '{}'", path));
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("'{}' is not valid JSON: {}", path, e.what()));
  }
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", path));
  out << j.dump(2) << '\n';
  if (!out) throw Error(fmt::format("failed writing '{}'", path));
}

}  // namespace panp
