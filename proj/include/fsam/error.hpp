#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fsam {

enum class ErrorKind {
  DimensionMismatch,
  DimensionTooLarge,
  NonFinite,
  InvalidRank,
  InvalidConfig,
  IndexOutOfRange,
  ZeroNorm,
  EmptyInput,
  LabelOutOfRange,
  UnregisteredParameter,
  MissingMask,
  EmptyDomain,
  UnreadableFile,
  TooFewSamples,
  MissingCheckpoint,
  Integrity,
  Io,
  MissingInput,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` is what callers branch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace fsam
