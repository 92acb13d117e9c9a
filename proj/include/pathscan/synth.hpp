#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pathscan/mag.hpp"
#include "pathscan/trajectory.hpp"

namespace pathscan {

enum class Grade : std::uint8_t { kBackground = 0, kBenign, kG3, kG4, kG5 };
inline constexpr std::size_t kNumGrades = 5;

char grade_char(Grade g);
Grade grade_from_char(char c);
const char* grade_name(Grade g);

struct GradeMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double cell_size = 1.0;  // level-0 pixels per cell side
  std::vector<Grade> cells;

  Grade at(std::size_t r, std::size_t c) const { return cells[r * cols + c]; }
  // Label under a level-0 point; Background outside the map.
  Grade at_point(double x, double y) const;
  WsiBounds bounds() const {
    return {static_cast<double>(cols) * cell_size, static_cast<double>(rows) * cell_size};
  }
  std::size_t count(Grade g) const;
};

// Relative tissue composition. Normalized internally.
struct GradeMix {
  double benign = 0.5;
  double g3 = 0.2;
  double g4 = 0.2;
  double g5 = 0.1;
};

// Blob-based map: a seeded random walk grows one connected tissue region
// inside a Background border, then further walks paint tumor regions.
GradeMap gen_wsi(std::uint64_t seed, std::size_t h_g, std::size_t w_g, const GradeMix& mix,
                 double cell_size = 80.0);

// Plain-text grid ('.', 'B', '3', '4', '5'), one row per line, plus a JSON
// sidecar next to it carrying {cell_size}.
std::string grade_map_to_text(const GradeMap& gm);
GradeMap grade_map_from_text(const std::string& text, double cell_size);
void save_grade_map(const std::filesystem::path& txt_path, const GradeMap& gm);
GradeMap load_grade_map(const std::filesystem::path& txt_path);

// Per-sample magnification transition probabilities {decrease, stay, increase}.
using TransitionPrior = std::array<std::array<double, 3>, kNumMags>;

struct ReaderProfile {
  // Probability that a target chosen while at <= 2X is a uniform survey
  // target rather than a drill target.
  double explore_fraction = 0.3;
  double drill_bias = 0.8;
  TransitionPrior mag_transition_prior{};
  double noise_sigma = 20.0;

  static ReaderProfile default_profile();
  void validate() const;
};

// Draws the next dwell target: with probability drill_bias a tumor cell
// weighted by grade, otherwise a uniform tissue cell.
Point2 sample_target(const GradeMap& gm, const ReaderProfile& profile, MagLevel mag,
                     std::mt19937_64& rng);

RawTrajectory simulate_reader(const GradeMap& wsi, const ReaderProfile& profile,
                              std::uint64_t seed, std::size_t n_samples,
                              const std::string& wsi_id = "wsi",
                              const std::string& reader_id = "reader",
                              Expertise expertise = Expertise::kResident);

// SplitMix64 finalizer used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

struct CorpusConfig {
  std::uint64_t seed = 1;
  std::size_t n_wsis = 10;
  std::size_t n_readers = 3;
  std::size_t grid_rows = 32;
  std::size_t grid_cols = 32;
  double cell_size = 80.0;
  GradeMix mix;
  ReaderProfile profile = ReaderProfile::default_profile();
  std::size_t n_samples = 600;
  // The last ceil(test_fraction * n_wsis) slides form the test split.
  double test_fraction = 0.2;
};

struct SyntheticCorpus {
  std::vector<std::string> wsi_ids;
  std::vector<GradeMap> maps;
  std::vector<bool> is_test;
  std::vector<RawTrajectory> trajectories;

  const GradeMap& map(const std::string& wsi_id) const;
};

SyntheticCorpus generate_corpus(const CorpusConfig& cfg);

}  // namespace pathscan
