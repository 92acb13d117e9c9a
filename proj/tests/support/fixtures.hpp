#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <random>
#include <string>
#include <vector>

#include "pathscan/features.hpp"
#include "pathscan/synth.hpp"
#include "pathscan/trajectory.hpp"

namespace fx {

struct S {
  double x, y;
  int factor;
  double t;
};

inline pathscan::RawTrajectory traj(std::initializer_list<S> pts, std::string wsi = "w",
                                    std::string reader = "r") {
  pathscan::RawTrajectory t;
  t.wsi_id = std::move(wsi);
  t.reader_id = std::move(reader);
  for (const S& s : pts) t.samples.push_back({s.x, s.y, pathscan::MagLevel::from_factor(s.factor), s.t});
  return t;
}

inline pathscan::Fixation fix(double x, double y, int factor, double dur = 0.0) {
  return {x, y, pathscan::MagLevel::from_factor(factor), dur};
}

inline pathscan::Scanpath path(std::initializer_list<pathscan::Fixation> f, std::string wsi = "w",
                               std::string reader = "r") {
  return {std::move(wsi), std::move(reader), std::vector<pathscan::Fixation>(f)};
}

// Random walk with occasional one-step magnification changes and random
// dwell times; covers sharp turns, near-duplicates and long fragments.
inline pathscan::RawTrajectory random_traj(std::mt19937_64& rng, std::size_t n,
                                           double width = 2560.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  pathscan::RawTrajectory t;
  t.wsi_id = "w";
  t.reader_id = "r";
  double x = width / 2, y = width / 2;
  int m = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = u(rng);
    if (r < 0.08 && m < 5) {
      ++m;
    } else if (r < 0.12 && m > 0) {
      --m;
    }
    const double step = u(rng) < 0.3 ? 2.0 : 120.0 / pathscan::kMagFactors[m];
    x = std::clamp(x + step * (2 * u(rng) - 1), 0.0, width - 1);
    y = std::clamp(y + step * (2 * u(rng) - 1), 0.0, width - 1);
    const double dur = u(rng) < 0.5 ? 50.0 * u(rng) : 50.0 + 400.0 * u(rng);
    t.samples.push_back({x, y, pathscan::MagLevel(m), dur});
  }
  return t;
}

// Random unit-norm tokens.
inline pathscan::FeatureGrid random_grid(int factor, std::size_t rows, std::size_t cols,
                                         std::size_t dim, double patch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  pathscan::FeatureGrid g{pathscan::MagLevel::from_factor(factor), rows, cols, dim, patch, {}};
  std::vector<double> v(dim);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    double s = 0;
    for (double& x : v) {
      x = n(rng);
      s += x * x;
    }
    for (double x : v) g.data.push_back(static_cast<float>(x / std::sqrt(s)));
  }
  return g;
}

}  // namespace fx
