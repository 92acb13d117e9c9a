#include "pathscan/error.hpp"

#include <atomic>
#include <iostream>

namespace pathscan {

namespace {
std::atomic<bool> g_warnings{true};
}

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidInput: return "invalid input";
    case ErrorKind::kInvalidConfig: return "invalid config";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kRange: return "range error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kDegenerate: return "degenerate input";
    case ErrorKind::kContract: return "contract violation";
    case ErrorKind::kNumeric: return "numeric failure";
  }
  return "error";
}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

void warn(const std::string& msg) {
  if (g_warnings.load()) std::cerr << "warning: " << msg << '\n';
}

void set_warnings_enabled(bool enabled) { g_warnings.store(enabled); }

}  // namespace pathscan
