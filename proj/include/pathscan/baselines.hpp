#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <string>

#include "pathscan/inference.hpp"
#include "pathscan/trajectory.hpp"

namespace pathscan {

// Uniform location in bounds and uniform level.
Fixation random1_next(const WsiBounds& bounds, std::mt19937_64& rng);

// A scanpath drawn uniformly from those on other slides, with coordinates
// clamped into `bounds`.
Scanpath random2_scanpath(std::span<const Scanpath> corpus, const std::string& test_wsi,
                          const WsiBounds& bounds, std::mt19937_64& rng);

struct Random2Fixation {
  Fixation fixation;
  std::string donor_wsi;
  // True when the donor was shorter than the index and its last fixation
  // was used instead.
  bool index_clamped = false;
};

// Fixation `index` of a scanpath by the same reader on another slide.
Random2Fixation random2_next(std::span<const Scanpath> corpus, const std::string& reader_id,
                             std::size_t index, const std::string& test_wsi,
                             const WsiBounds& bounds, std::mt19937_64& rng);

struct TransitionStats {
  TransitionMatrix matrix{};
  std::array<std::array<std::size_t, kNumMags>, kNumMags> raw{};
  // Per source level: decrease, stay, increase.
  std::array<std::array<std::size_t, 3>, kNumMags> counts{};
  std::size_t total = 0;
};

// Counts consecutive fixation pairs. Rows of never-left levels are uniform.
TransitionStats estimate_transition_matrix(std::span<const Scanpath> corpus);

// level,decrease,stay,increase,decrease_frac,stay_frac,increase_frac
std::string transition_stats_csv(const TransitionStats& stats);

}  // namespace pathscan
