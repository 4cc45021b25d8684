// SPDX-License-Identifier: Apache-2.0
//
// Internal little-endian byte-buffer helpers shared by the binary file
// formats. Explicit byte shifts keep the on-disk layout identical across
// host endianness.

#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "kd/errors.hpp"

namespace kd::binio {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& buf, float v) {
  put_u32(buf, std::bit_cast<std::uint32_t>(v));
}

/// Cursor over an in-memory file image; every read names the field it was
/// after when the file ends early.
class Reader {
 public:
  Reader(const std::string& bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  void need(std::size_t n, const char* field) {
    if (off_ + n > bytes_.size()) {
      throw DataError(what_ + ": truncated at byte offset " + std::to_string(off_) +
                      " while reading " + field);
    }
  }

  const char* raw(std::size_t n, const char* field) {
    need(n, field);
    const char* p = bytes_.data() + off_;
    off_ += n;
    return p;
  }

  std::uint32_t u32(const char* field) {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(raw(4, field));
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }

  std::uint64_t u64(const char* field) {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(raw(8, field));
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }

  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }

  std::size_t offset() const { return off_; }
  std::size_t remaining() const { return bytes_.size() - off_; }

 private:
  const std::string& bytes_;
  std::string what_;
  std::size_t off_ = 0;
};

inline std::string read_file(const std::string& path, const char* what) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(std::string(what) + ": cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  if (!f.good() && !f.eof()) throw IoError(std::string(what) + ": read failed on " + path);
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes, const char* what) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(std::string(what) + ": cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  f.flush();
  if (!f.good()) throw IoError(std::string(what) + ": write failed on " + path);
}

}  // namespace kd::binio
