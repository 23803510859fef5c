#pragma once

#include <stdexcept>
#include <string>

namespace mbu {

/// Error classes map one-to-one onto CLI exit codes (see docs/cli.md).
enum class ErrorKind {
  InvalidInput = 2,   // values outside the accepted alphabet or range
  Layout = 3,         // lane/word layout mismatch between operands
  Shape = 4,          // tensor or layer shape mismatch
  Unsupported = 5,    // valid but unsupported configuration
  Invariant = 6,      // broken data invariant (e.g. overlapping bit-planes)
  Parse = 7,          // malformed file or text input
  Io = 8,             // filesystem failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidInput: return "invalid input";
    case ErrorKind::Layout: return "layout error";
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Unsupported: return "unsupported configuration";
    case ErrorKind::Invariant: return "invariant violation";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Io: return "i/o error";
  }
  return "error";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace mbu
