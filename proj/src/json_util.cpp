#include "milgrad/json_util.hpp"

namespace milgrad {

namespace {
const nlohmann::json kEmptyObject = nlohmann::json::object();
const nlohmann::json kEmptyArray = nlohmann::json::array();
}  // namespace

JsonSection::JsonSection(const nlohmann::json& j, std::string name)
    : json_(j), name_(std::move(name)) {
  if (!json_.is_object()) {
    throw ConfigError("section '" + name_ + "' must be a JSON object");
  }
}

bool JsonSection::has(const char* key) const { return json_.contains(key); }

const nlohmann::json& JsonSection::entry(const char* key) {
  consumed_.insert(key);
  return json_.at(key);
}

double JsonSection::number(const char* key, double fallback) {
  if (!has(key)) {
    return fallback;
  }
  const auto& v = entry(key);
  if (!v.is_number()) {
    throw ConfigError("key '" + name_ + "." + key + "' must be a number");
  }
  return v.get<double>();
}

std::int64_t JsonSection::integer(const char* key, std::int64_t fallback) {
  if (!has(key)) {
    return fallback;
  }
  const auto& v = entry(key);
  if (!v.is_number_integer()) {
    throw ConfigError("key '" + name_ + "." + key + "' must be an integer");
  }
  return v.get<std::int64_t>();
}

std::uint64_t JsonSection::uinteger(const char* key, std::uint64_t fallback) {
  if (!has(key)) {
    return fallback;
  }
  const auto& v = entry(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ConfigError("key '" + name_ + "." + key + "' must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

std::uint64_t JsonSection::required_uinteger(const char* key) {
  if (!has(key)) {
    throw ConfigError("missing required key '" + name_ + "." + key + "'");
  }
  return uinteger(key, 0);
}

bool JsonSection::boolean(const char* key, bool fallback) {
  if (!has(key)) {
    return fallback;
  }
  const auto& v = entry(key);
  if (!v.is_boolean()) {
    throw ConfigError("key '" + name_ + "." + key + "' must be a boolean");
  }
  return v.get<bool>();
}

std::string JsonSection::text(const char* key, std::string fallback) {
  if (!has(key)) {
    return fallback;
  }
  const auto& v = entry(key);
  if (!v.is_string()) {
    throw ConfigError("key '" + name_ + "." + key + "' must be a string");
  }
  return v.get<std::string>();
}

std::string JsonSection::required_text(const char* key) {
  if (!has(key)) {
    throw ConfigError("missing required key '" + name_ + "." + key + "'");
  }
  return text(key, "");
}

nlohmann::json JsonSection::object(const char* key) {
  if (!has(key)) {
    return kEmptyObject;
  }
  const auto& v = entry(key);
  if (!v.is_object()) {
    throw ConfigError("key '" + name_ + "." + key + "' must be an object");
  }
  return v;
}

nlohmann::json JsonSection::array(const char* key) {
  if (!has(key)) {
    return kEmptyArray;
  }
  const auto& v = entry(key);
  if (!v.is_array()) {
    throw ConfigError("key '" + name_ + "." + key + "' must be an array");
  }
  return v;
}

void JsonSection::done() const {
  for (const auto& [key, value] : json_.items()) {
    if (!consumed_.count(key)) {
      throw ConfigError("unknown key '" + name_ + "." + key + "'");
    }
  }
}

}  // namespace milgrad
