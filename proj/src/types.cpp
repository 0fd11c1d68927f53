#include "milgrad/types.hpp"

#include <charconv>

namespace milgrad {

const char* class_name(int label) {
  switch (label) {
    case kMild:
      return "mild";
    case kModerate:
      return "moderate";
    case kSevere:
      return "severe";
    default:
      return "?";
  }
}

std::string to_string(const InstanceId& id) {
  return std::to_string(id.bag) + ":" + std::to_string(id.index);
}

InstanceId parse_instance_id(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw std::runtime_error("malformed instance id '" + text + "' (expected bag:index)");
  }
  InstanceId id;
  const char* begin = text.data();
  auto r1 = std::from_chars(begin, begin + colon, id.bag);
  auto r2 = std::from_chars(begin + colon + 1, begin + text.size(), id.index);
  if (r1.ec != std::errc{} || r2.ec != std::errc{} || r1.ptr != begin + colon ||
      r2.ptr != begin + text.size()) {
    throw std::runtime_error("malformed instance id '" + text + "' (expected bag:index)");
  }
  return id;
}

}  // namespace milgrad
