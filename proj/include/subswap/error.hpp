#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace subswap {

enum class ErrorCode {
  kShape,
  kInvalidClipLength,
  kEmptySubject,
  kNoSubject,
  kOutOfRange,
  kTruncated,
  kBadMagic,
  kDimOverflow,
  kBadVersion,
  kBadDtype,
  kIo,
  kConfig,
  kValue,
  kMissingWeights,
  kUsage,
};

std::string_view error_code_name(ErrorCode code);

// Every failure surfaced by the library is an Error; `context` names the
// offending stream, file, or field when one exists.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string context = {})
      : std::runtime_error(message), code_(code), context_(std::move(context)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& context() const noexcept { return context_; }

 private:
  ErrorCode code_;
  std::string context_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message,
                              std::string context = {}) {
  throw Error(code, message, std::move(context));
}

inline void require(bool cond, ErrorCode code, const std::string& message,
                    std::string context = {}) {
  if (!cond) fail(code, message, std::move(context));
}

}  // namespace subswap
