#include "pathscan/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include "pathscan/error.hpp"

namespace pathscan {

void FeatureGrid::validate() const {
  if (data.size() != rows * cols * dim) fail(ErrorKind::kShape, "feature grid size mismatch");
  for (float v : data) {
    if (!std::isfinite(v)) fail(ErrorKind::kNumeric, "non-finite feature value");
  }
}

CellIndex cell_at(std::size_t rows, std::size_t cols, double patch_px, double x, double y) {
  const double w = static_cast<double>(cols) * patch_px, h = static_cast<double>(rows) * patch_px;
  if (!(x >= 0.0 && y >= 0.0 && x < w && y < h)) {
    fail(ErrorKind::kRange, "point (" + std::to_string(x) + ", " + std::to_string(y) +
                                ") outside grid extent");
  }
  auto r = static_cast<std::size_t>(std::floor(y / patch_px));
  auto c = static_cast<std::size_t>(std::floor(x / patch_px));
  return {std::min(r, rows - 1), std::min(c, cols - 1)};
}

std::span<const float> token_at(const FeatureGrid& grid, double x, double y) {
  const CellIndex ci = cell_at(grid.rows, grid.cols, grid.patch_px, x, y);
  return grid.token(ci.row, ci.col);
}

LabelHistogramGrid patchify(const GradeMap& map, MagLevel /*mag*/, double patch_px) {
  if (!(patch_px > 0.0)) fail(ErrorKind::kInvalidConfig, "patch_px must be positive");
  const WsiBounds b = map.bounds();
  LabelHistogramGrid out;
  out.patch_px = patch_px;
  out.cols = static_cast<std::size_t>(std::ceil(b.width / patch_px - 1e-9));
  out.rows = static_cast<std::size_t>(std::ceil(b.height / patch_px - 1e-9));
  out.cells.assign(out.rows * out.cols, {});
  const double cs = map.cell_size;
  const double area = patch_px * patch_px;
  for (std::size_t pr = 0; pr < out.rows; ++pr) {
    const double y0 = static_cast<double>(pr) * patch_px, y1 = y0 + patch_px;
    for (std::size_t pc = 0; pc < out.cols; ++pc) {
      const double x0 = static_cast<double>(pc) * patch_px, x1 = x0 + patch_px;
      auto& h = out.cells[pr * out.cols + pc];
      double covered = 0.0;
      const auto r_lo = static_cast<std::size_t>(std::floor(y0 / cs));
      const auto c_lo = static_cast<std::size_t>(std::floor(x0 / cs));
      for (std::size_t r = r_lo; r < map.rows && static_cast<double>(r) * cs < y1; ++r) {
        const double oy = std::min(y1, static_cast<double>(r + 1) * cs) -
                          std::max(y0, static_cast<double>(r) * cs);
        if (oy <= 0.0) continue;
        for (std::size_t c = c_lo; c < map.cols && static_cast<double>(c) * cs < x1; ++c) {
          const double ox = std::min(x1, static_cast<double>(c + 1) * cs) -
                            std::max(x0, static_cast<double>(c) * cs);
          if (ox <= 0.0) continue;
          h[static_cast<std::size_t>(map.at(r, c))] += ox * oy;
          covered += ox * oy;
        }
      }
      h[static_cast<std::size_t>(Grade::kBackground)] += std::max(0.0, area - covered);
      for (double& v : h) v /= area;
    }
  }
  return out;
}

FeatureGrid embed(const LabelHistogramGrid& hist, MagLevel mag, std::size_t dim,
                  std::uint64_t seed) {
  if (dim < 8) fail(ErrorKind::kInvalidConfig, "embedding dim must be >= 8");
  std::mt19937_64 rng(mix_seed(seed, 0xfea7));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> proj(kNumGrades * dim);
  for (double& v : proj) v = normal(rng);

  FeatureGrid g{mag, hist.rows, hist.cols, dim, hist.patch_px, {}};
  g.data.resize(g.size() * dim);
  std::vector<double> tok(dim);
  for (std::size_t i = 0; i < g.size(); ++i) {
    std::fill(tok.begin(), tok.end(), 0.0);
    for (std::size_t k = 0; k < kNumGrades; ++k) {
      const double w = hist.cells[i][k];
      if (w == 0.0) continue;
      for (std::size_t d = 0; d < dim; ++d) tok[d] += w * proj[k * dim + d];
    }
    double norm = 0.0;
    for (double v : tok) norm += v * v;
    norm = std::sqrt(norm);
    for (std::size_t d = 0; d < dim; ++d) {
      g.data[i * dim + d] = static_cast<float>(norm > 0.0 ? tok[d] / norm : 0.0);
    }
  }
  return g;
}

namespace {

constexpr char kMagic[4] = {'P', 'S', 'F', 'T'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 2 + 1 + 12;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<std::uint8_t> encode_features(const FeatureGrid& grid) {
  grid.validate();
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + grid.data.size() * 4);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u16(out, kVersion);
  out.push_back(static_cast<std::uint8_t>(grid.mag.factor()));
  put_u32(out, static_cast<std::uint32_t>(grid.rows));
  put_u32(out, static_cast<std::uint32_t>(grid.cols));
  put_u32(out, static_cast<std::uint32_t>(grid.dim));
  for (float f : grid.data) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
  }
  return out;
}

FeatureGrid decode_features(std::span<const std::uint8_t> bytes, double patch_px) {
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    fail(ErrorKind::kFormat, "not a PSFT feature file");
  }
  const std::uint16_t version = static_cast<std::uint16_t>(bytes[4] | (bytes[5] << 8));
  if (version != kVersion) fail(ErrorKind::kFormat, "unsupported PSFT version");
  const int factor = bytes[6];
  if (!MagLevel::valid_factor(factor)) fail(ErrorKind::kFormat, "bad magnification in PSFT header");
  FeatureGrid g;
  g.mag = MagLevel::from_factor(factor);
  g.rows = get_u32(bytes.data() + 7);
  g.cols = get_u32(bytes.data() + 11);
  g.dim = get_u32(bytes.data() + 15);
  g.patch_px = patch_px;
  const std::size_t n = g.rows * g.cols * g.dim;
  if (g.rows == 0 || g.cols == 0 || g.dim == 0 || bytes.size() != kHeaderBytes + 4 * n) {
    fail(ErrorKind::kFormat, "PSFT payload does not match header dimensions");
  }
  g.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = get_u32(bytes.data() + kHeaderBytes + 4 * i);
    std::memcpy(&g.data[i], &bits, 4);
  }
  g.validate();
  return g;
}

void save_features(const std::filesystem::path& path, const FeatureGrid& grid) {
  const auto bytes = encode_features(grid);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kInvalidInput, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

FeatureGrid load_features(const std::filesystem::path& path, double patch_px) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kInvalidInput, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_features(bytes, patch_px);
}

std::size_t GridLayout::cols(const WsiBounds& b, MagLevel m) const {
  return static_cast<std::size_t>(std::ceil(b.width / patch_px(b, m) - 1e-9));
}

std::size_t GridLayout::rows(const WsiBounds& b, MagLevel m) const {
  return static_cast<std::size_t>(std::ceil(b.height / patch_px(b, m) - 1e-9));
}

double GridLayout::patch_px(const WsiBounds& b, MagLevel m) const {
  return b.width / static_cast<double>(base_cols_1x * static_cast<std::size_t>(m.factor()));
}

SyntheticFeatureProvider::SyntheticFeatureProvider(std::map<std::string, GradeMap> maps,
                                                   std::size_t dim, std::uint64_t seed,
                                                   GridLayout layout)
    : maps_(std::move(maps)), dim_(dim), seed_(seed), layout_(layout) {}

const FeatureGrid& SyntheticFeatureProvider::grid(const std::string& wsi_id, MagLevel mag) const {
  std::lock_guard lock(mu_);
  auto key = std::make_pair(wsi_id, mag.index());
  auto it = cache_.find(key);
  if (it != cache_.end()) return *it->second;
  auto mit = maps_.find(wsi_id);
  if (mit == maps_.end()) fail(ErrorKind::kInvalidInput, "no grade map for slide '" + wsi_id + "'");
  const GradeMap& gm = mit->second;
  auto g = std::make_unique<FeatureGrid>(
      embed(patchify(gm, mag, layout_.patch_px(gm.bounds(), mag)), mag, dim_, seed_));
  return *cache_.emplace(key, std::move(g)).first->second;
}

FileFeatureProvider::FileFeatureProvider(std::filesystem::path dir,
                                         std::map<std::string, WsiBounds> bounds)
    : dir_(std::move(dir)), bounds_(std::move(bounds)) {}

std::filesystem::path FileFeatureProvider::file_name(const std::string& wsi_id, MagLevel mag) {
  return wsi_id + "_" + std::to_string(mag.factor()) + "x.psft";
}

const FeatureGrid& FileFeatureProvider::grid(const std::string& wsi_id, MagLevel mag) const {
  std::lock_guard lock(mu_);
  auto key = std::make_pair(wsi_id, mag.index());
  auto it = cache_.find(key);
  if (it != cache_.end()) return *it->second;
  auto bit = bounds_.find(wsi_id);
  if (bit == bounds_.end()) fail(ErrorKind::kInvalidInput, "unknown slide '" + wsi_id + "'");
  auto g = std::make_unique<FeatureGrid>(load_features(dir_ / file_name(wsi_id, mag)));
  if (g->mag != mag) fail(ErrorKind::kFormat, "feature file magnification does not match its name");
  g->patch_px = bit->second.width / static_cast<double>(g->cols);
  return *cache_.emplace(key, std::move(g)).first->second;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) fail(ErrorKind::kShape, "token dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

}  // namespace pathscan
