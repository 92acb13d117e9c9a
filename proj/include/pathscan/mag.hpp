#pragma once

#include <array>
#include <compare>
#include <cstddef>

namespace pathscan {

inline constexpr std::size_t kNumMags = 6;
inline constexpr std::array<int, kNumMags> kMagFactors{1, 2, 4, 10, 20, 40};

// One of the six pyramid levels 1X, 2X, 4X, 10X, 20X, 40X. Ordering by index
// is ordering by zoom factor.
class MagLevel {
 public:
  constexpr MagLevel() = default;
  explicit MagLevel(int index);

  static MagLevel from_factor(int factor);
  static bool valid_factor(int factor);

  int index() const { return index_; }
  int factor() const { return kMagFactors[static_cast<std::size_t>(index_)]; }

  bool can_decrease() const { return index_ > 0; }
  bool can_increase() const { return index_ + 1 < static_cast<int>(kNumMags); }

  friend auto operator<=>(const MagLevel&, const MagLevel&) = default;

 private:
  int index_ = 0;
};

// Level-0 extent of a slide; 1X shows the whole slide in one viewport.
struct WsiBounds {
  double width = 0.0;
  double height = 0.0;

  bool contains(double x, double y) const {
    return x >= 0.0 && y >= 0.0 && x < width && y < height;
  }
  double viewport_width(MagLevel m) const { return width / m.factor(); }
};

}  // namespace pathscan
