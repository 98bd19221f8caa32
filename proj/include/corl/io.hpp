#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "corl/errors.hpp"

namespace corl::io {

/// CRC-64/XZ (ECMA-182 polynomial, reflected, all-ones init and xor-out).
std::uint64_t crc64(std::span<const std::uint8_t> bytes);

/// Little-endian encoder into a growing byte buffer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void raw(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
  void text(std::string_view s) { raw({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}); }

  /// Appends the CRC-64 of everything written so far.
  void seal() { u64(crc64(bytes_)); }

  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  std::vector<std::uint8_t> bytes_;
};

/// Little-endian decoder; every failure is a FormatError carrying the offset.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1, "u8")); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2, "u16")); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4, "u32")); }
  std::uint64_t u64() { return get(8, "u64"); }
  float f32() {
    const auto bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::span<const std::uint8_t> raw(std::size_t n, const char* what = "bytes") {
    need(n, what);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::string text(std::size_t n) {
    auto b = raw(n, "string");
    return {reinterpret_cast<const char*>(b.data()), b.size()};
  }

  /// Checks the 8-byte magic at the current position.
  void expect_magic(std::string_view magic) {
    const std::size_t at = pos_;
    if (text(magic.size()) != magic) throw FormatError("bad magic, expected " + std::string(magic), at);
  }

  /// Verifies the trailing CRC-64 over all bytes before it; must be the last read.
  void verify_crc() {
    const std::size_t at = pos_;
    const std::uint64_t stored = u64();
    if (stored != crc64(bytes_.first(at))) throw FormatError("CRC-64 mismatch", at);
    if (pos_ != bytes_.size()) throw FormatError("trailing bytes after CRC", pos_);
  }

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated while reading ") + what, pos_);
  }

  std::uint64_t get(std::size_t n, const char* what) {
    need(n, what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace corl::io
