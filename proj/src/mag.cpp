#include "pathscan/mag.hpp"

#include <string>

#include "pathscan/error.hpp"

namespace pathscan {

MagLevel::MagLevel(int index) : index_(index) {
  if (index < 0 || index >= static_cast<int>(kNumMags)) {
    fail(ErrorKind::kRange, "magnification index out of range: " + std::to_string(index));
  }
}

bool MagLevel::valid_factor(int factor) {
  for (int f : kMagFactors) {
    if (f == factor) return true;
  }
  return false;
}

MagLevel MagLevel::from_factor(int factor) {
  for (std::size_t i = 0; i < kNumMags; ++i) {
    if (kMagFactors[i] == factor) return MagLevel(static_cast<int>(i));
  }
  fail(ErrorKind::kRange, "unsupported magnification factor: " + std::to_string(factor));
}

}  // namespace pathscan
