#pragma once

#include <cstdint>
#include <set>
#include <string>

#include <json.hpp>

#include "milgrad/types.hpp"

namespace milgrad {

// Strict reader over one JSON object: every key must be consumed by a typed
// getter before done(), otherwise the unknown key is named in the error.
// Silent typos in a config would invalidate benchmarks.
//
// Holds a reference; the JSON value must outlive the section (bind object()
// results to a named local before wrapping them in another JsonSection).
class JsonSection {
 public:
  JsonSection(const nlohmann::json& j, std::string name);

  bool has(const char* key) const;

  double number(const char* key, double fallback);
  std::int64_t integer(const char* key, std::int64_t fallback);
  std::uint64_t uinteger(const char* key, std::uint64_t fallback);
  std::uint64_t required_uinteger(const char* key);
  bool boolean(const char* key, bool fallback);
  std::string text(const char* key, std::string fallback);
  std::string required_text(const char* key);
  // Child object (empty object when absent); marks the key consumed.
  nlohmann::json object(const char* key);
  nlohmann::json array(const char* key);

  void done() const;

 private:
  const nlohmann::json& entry(const char* key);

  const nlohmann::json& json_;
  std::string name_;
  std::set<std::string> consumed_;
};

}  // namespace milgrad
