#pragma once

#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace milgrad {

using Scalar = double;
using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Severity classes are ordinal: 0 = mild, 1 = moderate, 2 = severe.
inline constexpr int kNumClasses = 3;
inline constexpr int kMild = 0;
inline constexpr int kModerate = 1;
inline constexpr int kSevere = 2;

const char* class_name(int label);

// Usage or configuration errors map to CLI exit code 2; everything else
// surfaces as std::runtime_error (exit code 1).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// One instance inside a bag, addressed as (bag id, position within bag).
struct InstanceId {
  std::uint32_t bag = 0;
  std::uint32_t index = 0;

  auto operator<=>(const InstanceId&) const = default;
};

// Canonical text form "bag:index", used in tabular output files.
std::string to_string(const InstanceId& id);
InstanceId parse_instance_id(const std::string& text);

}  // namespace milgrad
