#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace mmvd {

enum class ErrorCode {
  InvalidArgument,
  ShapeMismatch,
  Config,
  Io,
  State,
  Numeric,
};

const char* error_code_name(ErrorCode code);

/// Library-wide exception type. The C API layer maps ErrorCode onto the
/// numeric status codes of the public header.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

template <typename... Args>
[[noreturn]] void fail(ErrorCode code, Args&&... args) {
  throw Error(code, cat(std::forward<Args>(args)...));
}

#define MMVD_CHECK(cond, code, ...)                  \
  do {                                               \
    if (!(cond)) ::mmvd::fail((code), __VA_ARGS__);  \
  } while (0)

}  // namespace mmvd
