#pragma once

// Little-endian readers and writers shared by the LIRE/LIRD/LIRN formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lir/error.hpp"

namespace lir::io {

class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put_le(v); }
  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void i32(std::int32_t v) { put_le(static_cast<std::uint32_t>(v)); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> v) {
    for (double x : v) f64(x);
  }

  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

  void save(const std::filesystem::path& path) const;

 private:
  template <typename T>
  void put_le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
      bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}
  static ByteReader from_file(const std::filesystem::path& path);

  /// Throws IoError(kBadMagic) when the next bytes are not `m`.
  void expect_magic(std::string_view m);
  std::uint8_t u8() { return get_le<std::uint8_t>(); }
  std::uint16_t u16() { return get_le<std::uint16_t>(); }
  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::uint64_t u64() { return get_le<std::uint64_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(get_le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }
  std::vector<double> f64s(std::uint64_t count);

  /// Throws kTruncated if fewer than n bytes remain.
  void require(std::uint64_t n) const;
  std::uint64_t offset() const noexcept { return pos_; }
  std::uint64_t remaining() const noexcept { return bytes_.size() - pos_; }
  std::uint64_t size() const noexcept { return bytes_.size(); }
  /// Throws kTrailingBytes unless the whole buffer was consumed.
  void expect_end() const;

 private:
  template <typename T>
  T get_le() {
    require(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v = static_cast<T>(v | static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i)));
    pos_ += sizeof(T);
    return v;
  }

  std::vector<std::uint8_t> bytes_;
  std::uint64_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it into place.
void save_bytes(std::span<const std::uint8_t> bytes, const std::filesystem::path& path);

/// a * b, or throws IoError(kSizeOverflow) at `offset`.
std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b, std::uint64_t offset);

}  // namespace lir::io
