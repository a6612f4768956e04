#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lir {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid numeric input: empty or non-finite vectors, dimension mismatches,
/// out-of-range parameters.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed collections: missing or duplicate layers, inconsistent layer
/// counts between matrices, repeated entries in a layer set.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// A detector could not be fitted on the supplied data.
class FitError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or was misconfigured.
class TrainError : public Error {
 public:
  TrainError(const std::string& what, int epoch)
      : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

enum class IoErrorCode {
  kOpenFailed,
  kBadMagic,
  kUnsupportedVersion,
  kTruncated,
  kSizeOverflow,
  kLabelLengthMismatch,
  kTrailingBytes,
  kCorrupt,
};

/// Reading or writing one of the binary file formats failed. `offset` is the
/// byte position at which the problem was detected.
class IoError : public Error {
 public:
  IoError(IoErrorCode code, const std::string& what, std::uint64_t offset = 0)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        code_(code),
        offset_(offset) {}
  IoErrorCode code() const noexcept { return code_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  IoErrorCode code_;
  std::uint64_t offset_;
};

}  // namespace lir
