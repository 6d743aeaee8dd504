#pragma once

#include <stdexcept>
#include <string>

namespace dcrm {

enum class ErrorKind {
  invalid_argument,
  io,
  parse,
  validation,
  domain,
  transport,
  protocol,
};

const char* to_string(ErrorKind kind) noexcept;

// Single exception type for the library. The C API maps `kind` onto its
// status codes, the CLI maps those onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace dcrm
