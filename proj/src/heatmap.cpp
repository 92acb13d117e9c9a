#include "pathscan/heatmap.hpp"

#include <algorithm>
#include <cmath>

#include "pathscan/error.hpp"

namespace pathscan {

Heatmap Heatmap::zeros(MagLevel mag, std::size_t rows, std::size_t cols, double cell_px) {
  return {mag, rows, cols, cell_px, std::vector<double>(rows * cols, 0.0)};
}

bool Heatmap::is_constant() const {
  return values.empty() ||
         std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); });
}

void normalize_max(Heatmap& h) {
  if (h.values.empty()) return;
  const double mx = *std::max_element(h.values.begin(), h.values.end());
  if (mx <= 0.0) return;
  for (double& v : h.values) v /= mx;
}

void normalize_min_max(Heatmap& h) {
  if (h.values.empty()) return;
  const auto [lo, hi] = std::minmax_element(h.values.begin(), h.values.end());
  const double a = *lo, range = *hi - *lo;
  if (!(range > 0.0)) {
    std::fill(h.values.begin(), h.values.end(), 0.0);
    return;
  }
  for (double& v : h.values) v = (v - a) / range;
}

double fixation_sigma_px(MagLevel m, double map_width, double k_sigma) {
  return k_sigma * map_width / m.factor();
}

Heatmap render_fixations(std::span<const Fixation> fixations, MagLevel mag, std::size_t rows,
                         std::size_t cols, double cell_px, double k_sigma) {
  if (rows == 0 || cols == 0 || !(cell_px > 0.0)) {
    fail(ErrorKind::kInvalidConfig, "heatmap shape must be positive");
  }
  Heatmap h = Heatmap::zeros(mag, rows, cols, cell_px);
  const double width = static_cast<double>(cols) * cell_px;
  const WsiBounds ext = h.extent();
  for (const Fixation& f : fixations) {
    if (!ext.contains(f.x, f.y)) continue;
    const CellIndex ci = h.cell_of(f.x, f.y);
    const double sigma_cells = fixation_sigma_px(f.mag, width, k_sigma) / cell_px;
    const double inv = 1.0 / (2.0 * sigma_cells * sigma_cells);
    // exp(-18) at 6 sigma; contributions beyond are below 2e-8.
    const auto reach = static_cast<long>(std::ceil(6.0 * sigma_cells));
    const long r0 = std::max(0L, static_cast<long>(ci.row) - reach);
    const long r1 = std::min(static_cast<long>(rows) - 1, static_cast<long>(ci.row) + reach);
    const long c0 = std::max(0L, static_cast<long>(ci.col) - reach);
    const long c1 = std::min(static_cast<long>(cols) - 1, static_cast<long>(ci.col) + reach);
    for (long r = r0; r <= r1; ++r) {
      const double dr = static_cast<double>(r - static_cast<long>(ci.row));
      for (long c = c0; c <= c1; ++c) {
        const double dc = static_cast<double>(c - static_cast<long>(ci.col));
        h.values[static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(c)] +=
            std::exp(-(dr * dr + dc * dc) * inv);
      }
    }
  }
  normalize_max(h);
  return h;
}

double cc(const Heatmap& a, const Heatmap& b) {
  if (a.rows != b.rows || a.cols != b.cols || a.values.size() != b.values.size() ||
      a.values.empty()) {
    fail(ErrorKind::kShape, "cc: heatmap shapes differ");
  }
  const std::size_t n = a.values.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a.values[i];
    mb += b.values[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a.values[i] - ma, db = b.values[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) fail(ErrorKind::kDegenerate, "cc: zero-variance heatmap");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

Heatmap upsample(const Heatmap& h, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) fail(ErrorKind::kInvalidConfig, "upsample: empty target");
  Heatmap out = Heatmap::zeros(h.mag, rows, cols, h.cell_px * static_cast<double>(h.cols) / static_cast<double>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t sr = r * h.rows / rows;
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = h.at(sr, c * h.cols / cols);
  }
  return out;
}

std::string heatmap_to_pgm(const Heatmap& h) {
  std::string out = "P5\n" + std::to_string(h.cols) + " " + std::to_string(h.rows) + "\n65535\n";
  for (double v : h.values) {
    const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
    out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xff));
  }
  return out;
}

nlohmann::json heatmap_to_json(const Heatmap& h) {
  nlohmann::json grid = nlohmann::json::array();
  for (std::size_t r = 0; r < h.rows; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < h.cols; ++c) row.push_back(h.at(r, c));
    grid.push_back(std::move(row));
  }
  return {{"mag", h.mag.factor()}, {"rows", h.rows}, {"cols", h.cols},
          {"cell_px", h.cell_px},  {"values", std::move(grid)}};
}

}  // namespace pathscan
