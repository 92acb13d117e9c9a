#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pathscan/heatmap.hpp"
#include "pathscan/pat_s.hpp"
#include "pathscan/trajectory.hpp"

namespace pathscan {

// Row r holds the probabilities of moving from level r to each level.
using TransitionMatrix = std::array<std::array<double, kNumMags>, kNumMags>;

struct Visit {
  double x = 0.0;
  double y = 0.0;
  MagLevel mag;
};

struct IorState {
  std::vector<Visit> visited;
  double radius_px = 1.0;
  double decay = 0.0;  // in [0, 1)

  void validate() const;
};

// Cells whose centre lies within radius_px of a visited point are scaled by
// `decay`.
Heatmap apply_ior(const Heatmap& h, const IorState& state);

// Centre of the first maximal cell in row-major order. Throws kDegenerate
// when no cell is positive.
Point2 next_location(const Heatmap& h);

enum class MagSampling { kDeterministic, kSample };

// Restricts the six activations to {m_t - 1, m_t, m_t + 1} and either takes
// the first maximum in that order or samples in proportion to them. `rng` is
// only used when sampling.
MagLevel next_mag_probmag(std::span<const double> activations, MagLevel current,
                          MagSampling mode, std::mt19937_64* rng = nullptr);
MagLevel next_mag_priormag(const TransitionMatrix& tm, MagLevel current, std::mt19937_64& rng);

// Rounded mean number of fixations.
std::size_t infer_length(std::span<const Scanpath> corpus);

enum class RolloutMode { kProbMag, kPriorMag };

const char* to_string(RolloutMode mode);
RolloutMode rollout_mode_from_string(const std::string& s);

struct RolloutConfig {
  std::size_t n = 1;
  RolloutMode mode = RolloutMode::kProbMag;
  MagSampling probmag_sampling = MagSampling::kSample;
  std::uint64_t seed = 1;
  // Suppression radius as a fraction of the viewport width at the current
  // magnification.
  double ior_radius_fraction = 0.5;
  double ior_decay = 0.0;
  // Number of most recent fixations kept suppressed; 0 keeps all of them.
  std::size_t ior_window = 0;
  double fixation_dur_ms = 0.0;
  TransitionMatrix prior{};
};

struct RolloutResult {
  Scanpath scanpath;
  bool aborted = false;
  std::string error;
  // Steps where suppression covered the whole map and the raw heatmap was used.
  std::size_t ior_fallbacks = 0;
};

// Starts at the slide centre at 1X and appends one fixation per step until
// n fixations exist.
RolloutResult rollout(const ScanpathModel& model, const SlideTensors& slide,
                      const RolloutConfig& cfg, const std::string& wsi_id = "");

}  // namespace pathscan
