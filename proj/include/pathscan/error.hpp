#pragma once

#include <stdexcept>
#include <string>

namespace pathscan {

enum class ErrorKind {
  kInvalidInput,
  kInvalidConfig,
  kFormat,
  kRange,
  kShape,
  kDegenerate,
  kContract,
  kNumeric,
};

const char* to_string(ErrorKind kind);

// All library failures are reported through this exception; the kind drives
// the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

// Prints "warning: <msg>" to stderr unless warnings are silenced.
void warn(const std::string& msg);
void set_warnings_enabled(bool enabled);

}  // namespace pathscan
