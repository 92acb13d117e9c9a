#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathscan/features.hpp"
#include "pathscan/mag.hpp"
#include "pathscan/trajectory.hpp"

namespace pathscan {

// Dense map over a grid of square cells; cell (r, c) covers level-0
// [c*cell_px, (c+1)*cell_px) x [r*cell_px, (r+1)*cell_px).
struct Heatmap {
  MagLevel mag;
  std::size_t rows = 0;
  std::size_t cols = 0;
  double cell_px = 1.0;
  std::vector<double> values;

  static Heatmap zeros(MagLevel mag, std::size_t rows, std::size_t cols, double cell_px);

  std::size_t size() const { return rows * cols; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  WsiBounds extent() const {
    return {static_cast<double>(cols) * cell_px, static_cast<double>(rows) * cell_px};
  }
  CellIndex cell_of(double x, double y) const { return cell_at(rows, cols, cell_px, x, y); }
  Point2 cell_center(std::size_t r, std::size_t c) const {
    return {(static_cast<double>(c) + 0.5) * cell_px, (static_cast<double>(r) + 0.5) * cell_px};
  }
  bool is_constant() const;
};

// Scales so the maximum is 1; all-zero maps stay zero.
void normalize_max(Heatmap& h);
// Affine map onto [0, 1]; a constant map becomes all zeros.
void normalize_min_max(Heatmap& h);

// Smoothing width for fixations observed at `m`: k_sigma * map_width / factor(m),
// so sigma(1X) = map_width / 8 by default and halves per doubling of zoom.
inline constexpr double kDefaultSigmaFraction = 1.0 / 8.0;
double fixation_sigma_px(MagLevel m, double map_width, double k_sigma = kDefaultSigmaFraction);

// Deltas at the cells containing each fixation, each convolved with a
// Gaussian of its own magnification's sigma, then max-normalized. Fixations
// outside the map are ignored.
Heatmap render_fixations(std::span<const Fixation> fixations, MagLevel mag, std::size_t rows,
                         std::size_t cols, double cell_px, double k_sigma = kDefaultSigmaFraction);

// Pearson correlation over cells. Throws kDegenerate when either map has zero
// variance and kShape on size mismatch.
double cc(const Heatmap& a, const Heatmap& b);

// Nearest-neighbour resampling to rows x cols.
Heatmap upsample(const Heatmap& h, std::size_t rows, std::size_t cols);

// 16-bit binary PGM (values clamped to [0, 1]) and a JSON grid.
std::string heatmap_to_pgm(const Heatmap& h);
nlohmann::json heatmap_to_json(const Heatmap& h);

}  // namespace pathscan
