#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "milgrad/types.hpp"

namespace milgrad::io {

// Versioned binary container of named, typed fields. Checkpoints and dataset
// splits are stored in this format. Writers emit fields in a fixed order from
// the owning struct, so write(read(file)) is byte-identical.
//
// Layout: magic "MGC1", u32 version, u32 field count, then per field:
//   u16 name length, name bytes, u8 type tag, type-specific payload.
// All integers little-endian; matrices are f64 row-major.
inline constexpr std::uint32_t kContainerVersion = 1;

enum class FieldType : std::uint8_t {
  kF64Matrix = 0,
  kF64 = 1,
  kU64 = 2,
  kString = 3,
  kU32Array = 4,
  kU8Array = 5,
};

class RecordWriter {
 public:
  void matrix(std::string_view name, const Matrix& value);
  void f64(std::string_view name, double value);
  void u64(std::string_view name, std::uint64_t value);
  void string(std::string_view name, std::string_view value);
  void u32_array(std::string_view name, std::span<const std::uint32_t> values);
  void u8_array(std::string_view name, std::span<const std::uint8_t> values);

  // Complete container bytes (header + fields).
  std::string finish() const;
  void write_file(const std::filesystem::path& path) const;

 private:
  void field_header(std::string_view name, FieldType type);

  std::string body_;
  std::uint32_t field_count_ = 0;
};

class RecordReader {
 public:
  static RecordReader from_bytes(std::string bytes, const std::string& origin);
  static RecordReader from_file(const std::filesystem::path& path);

  bool has(std::string_view name) const;
  Matrix matrix(std::string_view name) const;
  double f64(std::string_view name) const;
  std::uint64_t u64(std::string_view name) const;
  std::string string(std::string_view name) const;
  std::vector<std::uint32_t> u32_array(std::string_view name) const;
  std::vector<std::uint8_t> u8_array(std::string_view name) const;

 private:
  struct Field {
    FieldType type;
    std::size_t offset;  // payload start within bytes_
    std::size_t size;
  };

  const Field& find(std::string_view name, FieldType expected) const;

  std::string bytes_;
  std::string origin_;
  std::map<std::string, Field, std::less<>> fields_;
};

}  // namespace milgrad::io
