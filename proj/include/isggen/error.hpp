#pragma once

#include <stdexcept>
#include <string>

namespace isg {

enum class ErrorKind {
  kValidation,
  kParse,
  kNotFound,
  kConflict,
  kConfig,
  kData,
  kNumeric,
  kIo,
  kInternal,
};

const char* to_string(ErrorKind kind);

// All library failures surface as this exception; the C API maps `kind` onto
// status codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string detail = {})
      : std::runtime_error(message), kind_(kind), detail_(std::move(detail)) {}

  ErrorKind kind() const { return kind_; }
  const std::string& detail() const { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message, std::string detail = {}) {
  throw Error(kind, message, std::move(detail));
}

inline void require(bool cond, ErrorKind kind, const std::string& message) {
  if (!cond) fail(kind, message);
}

}  // namespace isg
