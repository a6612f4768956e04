#include "lir/binary_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace lir::io {

void ByteWriter::save(const std::filesystem::path& path) const { save_bytes(bytes_, path); }

void save_bytes(std::span<const std::uint8_t> bytes, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(IoErrorCode::kOpenFailed, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(IoErrorCode::kOpenFailed, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(IoErrorCode::kOpenFailed, "cannot move " + tmp.string() + ": " + ec.message());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorCode::kOpenFailed, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ByteReader ByteReader::from_file(const std::filesystem::path& path) { return ByteReader(read_file(path)); }

void ByteReader::expect_magic(std::string_view m) {
  const auto at = pos_;
  const std::size_t have = std::min<std::size_t>(remaining(), m.size());
  if (std::memcmp(bytes_.data() + pos_, m.data(), have) == 0 && have < m.size()) require(m.size());
  if (have < m.size() || std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0)
    throw IoError(IoErrorCode::kBadMagic, "bad magic, expected \"" + std::string(m) + "\"", at);
  pos_ += m.size();
}

void ByteReader::require(std::uint64_t n) const {
  if (remaining() < n)
    throw IoError(IoErrorCode::kTruncated,
                  "truncated file: expected " + std::to_string(n) + " more bytes, found " +
                      std::to_string(remaining()),
                  pos_);
}

std::vector<double> ByteReader::f64s(std::uint64_t count) {
  require(checked_mul(count, sizeof(double), pos_));
  std::vector<double> out(count);
  for (auto& x : out) x = f64();
  return out;
}

void ByteReader::expect_end() const {
  if (remaining() != 0)
    throw IoError(IoErrorCode::kTrailingBytes,
                  std::to_string(remaining()) + " unexpected trailing bytes", pos_);
}

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b, std::uint64_t offset) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a)
    throw IoError(IoErrorCode::kSizeOverflow, "size overflow: " + std::to_string(a) + " x " + std::to_string(b),
                  offset);
  return a * b;
}

}  // namespace lir::io
