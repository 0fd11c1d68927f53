#include "milgrad/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "container serialization assumes a little-endian host");

namespace milgrad::io {

namespace {

constexpr char kMagic[4] = {'M', 'G', 'C', '1'};

template <typename T>
void append_raw(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T read_raw(const std::string& bytes, std::size_t& pos, const std::string& origin) {
  if (pos + sizeof(T) > bytes.size()) {
    throw std::runtime_error("truncated container: " + origin);
  }
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

void RecordWriter::field_header(std::string_view name, FieldType type) {
  if (name.size() > 0xffff) {
    throw std::runtime_error("field name too long");
  }
  append_raw<std::uint16_t>(body_, static_cast<std::uint16_t>(name.size()));
  body_.append(name);
  append_raw<std::uint8_t>(body_, static_cast<std::uint8_t>(type));
  ++field_count_;
}

void RecordWriter::matrix(std::string_view name, const Matrix& value) {
  field_header(name, FieldType::kF64Matrix);
  append_raw<std::uint64_t>(body_, static_cast<std::uint64_t>(value.rows()));
  append_raw<std::uint64_t>(body_, static_cast<std::uint64_t>(value.cols()));
  for (Index r = 0; r < value.rows(); ++r) {
    for (Index c = 0; c < value.cols(); ++c) {
      append_raw<double>(body_, value(r, c));
    }
  }
}

void RecordWriter::f64(std::string_view name, double value) {
  field_header(name, FieldType::kF64);
  append_raw<double>(body_, value);
}

void RecordWriter::u64(std::string_view name, std::uint64_t value) {
  field_header(name, FieldType::kU64);
  append_raw<std::uint64_t>(body_, value);
}

void RecordWriter::string(std::string_view name, std::string_view value) {
  field_header(name, FieldType::kString);
  append_raw<std::uint64_t>(body_, static_cast<std::uint64_t>(value.size()));
  body_.append(value);
}

void RecordWriter::u32_array(std::string_view name, std::span<const std::uint32_t> values) {
  field_header(name, FieldType::kU32Array);
  append_raw<std::uint64_t>(body_, static_cast<std::uint64_t>(values.size()));
  for (std::uint32_t v : values) {
    append_raw<std::uint32_t>(body_, v);
  }
}

void RecordWriter::u8_array(std::string_view name, std::span<const std::uint8_t> values) {
  field_header(name, FieldType::kU8Array);
  append_raw<std::uint64_t>(body_, static_cast<std::uint64_t>(values.size()));
  body_.append(reinterpret_cast<const char*>(values.data()), values.size());
}

std::string RecordWriter::finish() const {
  std::string out;
  out.reserve(body_.size() + 12);
  out.append(kMagic, sizeof(kMagic));
  append_raw<std::uint32_t>(out, kContainerVersion);
  append_raw<std::uint32_t>(out, field_count_);
  out.append(body_);
  return out;
}

void RecordWriter::write_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write container: " + path.string());
  }
  const std::string bytes = finish();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw std::runtime_error("write failed: " + path.string());
  }
}

RecordReader RecordReader::from_bytes(std::string bytes, const std::string& origin) {
  RecordReader reader;
  reader.bytes_ = std::move(bytes);
  reader.origin_ = origin;
  const std::string& data = reader.bytes_;
  if (data.size() < 12 || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a milgrad container: " + origin);
  }
  std::size_t pos = 4;
  const auto version = read_raw<std::uint32_t>(data, pos, origin);
  if (version != kContainerVersion) {
    throw std::runtime_error("unsupported container version " + std::to_string(version) + ": " +
                             origin);
  }
  const auto count = read_raw<std::uint32_t>(data, pos, origin);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_raw<std::uint16_t>(data, pos, origin);
    if (pos + name_len > data.size()) {
      throw std::runtime_error("truncated container: " + origin);
    }
    std::string name(data.data() + pos, name_len);
    pos += name_len;
    const auto type = static_cast<FieldType>(read_raw<std::uint8_t>(data, pos, origin));
    std::size_t payload = 0;
    switch (type) {
      case FieldType::kF64Matrix: {
        const auto rows = read_raw<std::uint64_t>(data, pos, origin);
        const auto cols = read_raw<std::uint64_t>(data, pos, origin);
        payload = rows * cols * sizeof(double);
        pos -= 16;  // keep dims inside the payload span
        payload += 16;
        break;
      }
      case FieldType::kF64:
        payload = sizeof(double);
        break;
      case FieldType::kU64:
        payload = sizeof(std::uint64_t);
        break;
      case FieldType::kString: {
        const auto len = read_raw<std::uint64_t>(data, pos, origin);
        pos -= 8;
        payload = 8 + len;
        break;
      }
      case FieldType::kU32Array: {
        const auto len = read_raw<std::uint64_t>(data, pos, origin);
        pos -= 8;
        payload = 8 + len * sizeof(std::uint32_t);
        break;
      }
      case FieldType::kU8Array: {
        const auto len = read_raw<std::uint64_t>(data, pos, origin);
        pos -= 8;
        payload = 8 + len;
        break;
      }
      default:
        throw std::runtime_error("unknown field type in container: " + origin);
    }
    if (pos + payload > data.size()) {
      throw std::runtime_error("truncated container field '" + name + "': " + origin);
    }
    reader.fields_.emplace(std::move(name), Field{type, pos, payload});
    pos += payload;
  }
  return reader;
}

RecordReader RecordReader::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open container: " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_bytes(buf.str(), path.string());
}

bool RecordReader::has(std::string_view name) const { return fields_.count(std::string(name)) > 0; }

const RecordReader::Field& RecordReader::find(std::string_view name, FieldType expected) const {
  const auto it = fields_.find(std::string(name));
  if (it == fields_.end()) {
    throw std::runtime_error("container field missing: '" + std::string(name) + "' in " + origin_);
  }
  if (it->second.type != expected) {
    throw std::runtime_error("container field type mismatch: '" + std::string(name) + "' in " +
                             origin_);
  }
  return it->second;
}

Matrix RecordReader::matrix(std::string_view name) const {
  const Field& f = find(name, FieldType::kF64Matrix);
  std::size_t pos = f.offset;
  const auto rows = read_raw<std::uint64_t>(bytes_, pos, origin_);
  const auto cols = read_raw<std::uint64_t>(bytes_, pos, origin_);
  Matrix out(static_cast<Index>(rows), static_cast<Index>(cols));
  for (std::uint64_t r = 0; r < rows; ++r) {
    for (std::uint64_t c = 0; c < cols; ++c) {
      out(static_cast<Index>(r), static_cast<Index>(c)) = read_raw<double>(bytes_, pos, origin_);
    }
  }
  return out;
}

double RecordReader::f64(std::string_view name) const {
  const Field& f = find(name, FieldType::kF64);
  std::size_t pos = f.offset;
  return read_raw<double>(bytes_, pos, origin_);
}

std::uint64_t RecordReader::u64(std::string_view name) const {
  const Field& f = find(name, FieldType::kU64);
  std::size_t pos = f.offset;
  return read_raw<std::uint64_t>(bytes_, pos, origin_);
}

std::string RecordReader::string(std::string_view name) const {
  const Field& f = find(name, FieldType::kString);
  std::size_t pos = f.offset;
  const auto len = read_raw<std::uint64_t>(bytes_, pos, origin_);
  return bytes_.substr(pos, len);
}

std::vector<std::uint32_t> RecordReader::u32_array(std::string_view name) const {
  const Field& f = find(name, FieldType::kU32Array);
  std::size_t pos = f.offset;
  const auto len = read_raw<std::uint64_t>(bytes_, pos, origin_);
  std::vector<std::uint32_t> out(len);
  for (auto& v : out) {
    v = read_raw<std::uint32_t>(bytes_, pos, origin_);
  }
  return out;
}

std::vector<std::uint8_t> RecordReader::u8_array(std::string_view name) const {
  const Field& f = find(name, FieldType::kU8Array);
  std::size_t pos = f.offset;
  const auto len = read_raw<std::uint64_t>(bytes_, pos, origin_);
  std::vector<std::uint8_t> out(len);
  std::memcpy(out.data(), bytes_.data() + pos, len);
  return out;
}

}  // namespace milgrad::io
