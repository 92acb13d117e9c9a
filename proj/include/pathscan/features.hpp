#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "pathscan/mag.hpp"
#include "pathscan/synth.hpp"

namespace pathscan {

// rows x cols x dim patch tokens at one magnification. Patch (r, c) covers
// level-0 [c*patch_px, (c+1)*patch_px) x [r*patch_px, (r+1)*patch_px).
struct FeatureGrid {
  MagLevel mag;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t dim = 0;
  double patch_px = 1.0;
  std::vector<float> data;

  std::size_t size() const { return rows * cols; }
  std::span<const float> token(std::size_t r, std::size_t c) const {
    return {data.data() + (r * cols + c) * dim, dim};
  }
  std::span<float> token(std::size_t r, std::size_t c) {
    return {data.data() + (r * cols + c) * dim, dim};
  }
  WsiBounds extent() const {
    return {static_cast<double>(cols) * patch_px, static_cast<double>(rows) * patch_px};
  }
  void validate() const;
};

struct CellIndex {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

// Patch containing a level-0 point, by floor division: x = k*patch_px, the
// edge shared by patches k-1 and k, maps to patch k. Throws kRange outside
// the grid.
CellIndex cell_at(std::size_t rows, std::size_t cols, double patch_px, double x, double y);

std::span<const float> token_at(const FeatureGrid& grid, double x, double y);

struct LabelHistogramGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double patch_px = 1.0;
  std::vector<std::array<double, kNumGrades>> cells;
};

// Area-weighted label histogram per patch; area past the map edge counts as
// Background. Each histogram sums to 1.
LabelHistogramGrid patchify(const GradeMap& map, MagLevel mag, double patch_px);

// Seeded 5 -> dim random projection of each histogram, normalized to unit
// length. The projection does not depend on the magnification.
FeatureGrid embed(const LabelHistogramGrid& hist, MagLevel mag, std::size_t dim,
                  std::uint64_t seed);

// PSFT binary tensor file: "PSFT", u16 version, u8 mag factor, u32 rows,
// cols, dim, then rows*cols*dim float32, all little-endian.
void save_features(const std::filesystem::path& path, const FeatureGrid& grid);
FeatureGrid load_features(const std::filesystem::path& path, double patch_px = 1.0);
std::vector<std::uint8_t> encode_features(const FeatureGrid& grid);
FeatureGrid decode_features(std::span<const std::uint8_t> bytes, double patch_px = 1.0);

// Grid columns at `mag` are base_cols_1x * factor(mag).
struct GridLayout {
  std::size_t base_cols_1x = 8;

  std::size_t cols(const WsiBounds& b, MagLevel m) const;
  std::size_t rows(const WsiBounds& b, MagLevel m) const;
  double patch_px(const WsiBounds& b, MagLevel m) const;
};

class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  // Deterministic per (wsi_id, mag).
  virtual const FeatureGrid& grid(const std::string& wsi_id, MagLevel mag) const = 0;
};

// Grade-histogram featurizer over synthetic grade maps. Grids are built
// lazily and cached; safe to share across threads.
class SyntheticFeatureProvider : public FeatureProvider {
 public:
  SyntheticFeatureProvider(std::map<std::string, GradeMap> maps, std::size_t dim,
                           std::uint64_t seed, GridLayout layout = {});
  const FeatureGrid& grid(const std::string& wsi_id, MagLevel mag) const override;

 private:
  std::map<std::string, GradeMap> maps_;
  std::size_t dim_;
  std::uint64_t seed_;
  GridLayout layout_;
  mutable std::mutex mu_;
  mutable std::map<std::pair<std::string, int>, std::unique_ptr<FeatureGrid>> cache_;
};

// Reads "<dir>/<wsi_id>_<factor>x.psft"; patch size derives from the slide
// width and the stored column count.
class FileFeatureProvider : public FeatureProvider {
 public:
  FileFeatureProvider(std::filesystem::path dir, std::map<std::string, WsiBounds> bounds);
  const FeatureGrid& grid(const std::string& wsi_id, MagLevel mag) const override;

  static std::filesystem::path file_name(const std::string& wsi_id, MagLevel mag);

 private:
  std::filesystem::path dir_;
  std::map<std::string, WsiBounds> bounds_;
  mutable std::mutex mu_;
  mutable std::map<std::pair<std::string, int>, std::unique_ptr<FeatureGrid>> cache_;
};

double cosine_similarity(std::span<const float> a, std::span<const float> b);

}  // namespace pathscan
