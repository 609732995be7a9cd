#pragma once

#include <stdexcept>
#include <string>

namespace topoprune {

enum class ErrorCode {
  kValidation,
  kIo,
  // tensor container failures
  kHeaderLength,
  kHeaderFormat,
  kBadEntry,
  kOverlap,
  kTruncated,
  kDuplicateName,
  kNotFound,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kHeaderLength: return "header-length";
    case ErrorCode::kHeaderFormat: return "header-format";
    case ErrorCode::kBadEntry: return "bad-entry";
    case ErrorCode::kOverlap: return "overlapping-ranges";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kDuplicateName: return "duplicate-name";
    case ErrorCode::kNotFound: return "not-found";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  // I/O failures map to exit code 2, everything else (bad input) to 1.
  bool is_io() const noexcept { return code_ == ErrorCode::kIo; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(const std::string& what) {
  throw Error(ErrorCode::kValidation, what);
}

inline void require(bool condition, const std::string& what) {
  if (!condition) fail(what);
}

}  // namespace topoprune
