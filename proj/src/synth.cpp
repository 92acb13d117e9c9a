#include "pathscan/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "pathscan/error.hpp"
#include "pathscan/io.hpp"

namespace pathscan {

char grade_char(Grade g) {
  static constexpr char kChars[] = {'.', 'B', '3', '4', '5'};
  return kChars[static_cast<std::size_t>(g)];
}

Grade grade_from_char(char c) {
  switch (c) {
    case '.': return Grade::kBackground;
    case 'B': return Grade::kBenign;
    case '3': return Grade::kG3;
    case '4': return Grade::kG4;
    case '5': return Grade::kG5;
    default: fail(ErrorKind::kFormat, std::string("unknown grade character '") + c + "'");
  }
}

const char* grade_name(Grade g) {
  static constexpr const char* kNames[] = {"Background", "B", "G3", "G4", "G5"};
  return kNames[static_cast<std::size_t>(g)];
}

Grade GradeMap::at_point(double x, double y) const {
  if (x < 0.0 || y < 0.0) return Grade::kBackground;
  const auto c = static_cast<std::size_t>(std::floor(x / cell_size));
  const auto r = static_cast<std::size_t>(std::floor(y / cell_size));
  if (r >= rows || c >= cols) return Grade::kBackground;
  return at(r, c);
}

std::size_t GradeMap::count(Grade g) const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), g));
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

constexpr int kDr[4] = {-1, 1, 0, 0};
constexpr int kDc[4] = {0, 0, -1, 1};

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace

GradeMap gen_wsi(std::uint64_t seed, std::size_t h_g, std::size_t w_g, const GradeMix& mix,
                 double cell_size) {
  if (h_g < 8 || w_g < 8) fail(ErrorKind::kInvalidConfig, "grade map must be at least 8x8");
  if (!(cell_size > 0.0)) fail(ErrorKind::kInvalidConfig, "cell_size must be positive");
  const std::array<double, 4> weights{mix.benign, mix.g3, mix.g4, mix.g5};
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) fail(ErrorKind::kInvalidConfig, "grade mix weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) fail(ErrorKind::kInvalidConfig, "grade mix is all zero");

  std::mt19937_64 rng(mix_seed(seed, 0x5eed));
  GradeMap gm{h_g, w_g, cell_size, std::vector<Grade>(h_g * w_g, Grade::kBackground)};
  auto idx = [&](std::size_t r, std::size_t c) { return r * w_g + c; };

  // Tissue: random walk over the interior (one-cell Background border),
  // painting a plus-shaped brush so the region stays 4-connected.
  const std::size_t interior = (h_g - 2) * (w_g - 2);
  const auto tissue_target = static_cast<std::size_t>(0.45 * static_cast<double>(interior));
  long r = static_cast<long>(h_g / 2), c = static_cast<long>(w_g / 2);
  std::size_t tissue = 0;
  auto paint = [&](long rr, long cc) {
    if (rr < 1 || cc < 1 || rr > static_cast<long>(h_g) - 2 || cc > static_cast<long>(w_g) - 2) return;
    Grade& g = gm.cells[idx(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc))];
    if (g == Grade::kBackground) {
      g = Grade::kBenign;
      ++tissue;
    }
  };
  while (tissue < tissue_target) {
    paint(r, c);
    for (int k = 0; k < 4; ++k) paint(r + kDr[k], c + kDc[k]);
    const int k = static_cast<int>(uniform_index(rng, 4));
    r = std::clamp(r + kDr[k], 1L, static_cast<long>(h_g) - 2);
    c = std::clamp(c + kDc[k], 1L, static_cast<long>(w_g) - 2);
  }

  std::vector<std::size_t> tissue_cells;
  for (std::size_t i = 0; i < gm.cells.size(); ++i) {
    if (gm.cells[i] != Grade::kBackground) tissue_cells.push_back(i);
  }

  // Tumor regions: each requested grade gets its share of tissue cells,
  // grown as walks restricted to tissue that only overwrite Benign cells.
  const Grade tumor[3] = {Grade::kG3, Grade::kG4, Grade::kG5};
  for (int g = 0; g < 3; ++g) {
    const double share = weights[static_cast<std::size_t>(g + 1)] / total;
    if (share <= 0.0) continue;
    std::size_t target = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(share * static_cast<double>(tissue_cells.size()))));
    std::size_t painted = 0;
    std::size_t pos = 0;
    std::size_t steps_left = 0;
    while (painted < target) {
      if (steps_left == 0) {
        std::vector<std::size_t> benign;
        for (std::size_t i : tissue_cells) {
          if (gm.cells[i] == Grade::kBenign) benign.push_back(i);
        }
        if (benign.empty()) break;
        pos = benign[uniform_index(rng, benign.size())];
        steps_left = 20 * target + 50;
      }
      if (gm.cells[pos] == Grade::kBenign) {
        gm.cells[pos] = tumor[g];
        ++painted;
      }
      const std::size_t pr = pos / w_g, pc = pos % w_g;
      const int k = static_cast<int>(uniform_index(rng, 4));
      const long nr = static_cast<long>(pr) + kDr[k], nc = static_cast<long>(pc) + kDc[k];
      const std::size_t next = idx(static_cast<std::size_t>(nr), static_cast<std::size_t>(nc));
      if (gm.cells[next] != Grade::kBackground) pos = next;
      --steps_left;
    }
  }
  return gm;
}

std::string grade_map_to_text(const GradeMap& gm) {
  std::string out;
  out.reserve(gm.rows * (gm.cols + 1));
  for (std::size_t r = 0; r < gm.rows; ++r) {
    for (std::size_t c = 0; c < gm.cols; ++c) out.push_back(grade_char(gm.at(r, c)));
    out.push_back('\n');
  }
  return out;
}

GradeMap grade_map_from_text(const std::string& text, double cell_size) {
  GradeMap gm;
  gm.cell_size = cell_size;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (gm.cols == 0) gm.cols = line.size();
    if (line.size() != gm.cols) fail(ErrorKind::kFormat, "ragged grade map row");
    for (char ch : line) gm.cells.push_back(grade_from_char(ch));
    ++gm.rows;
  }
  if (gm.rows == 0) fail(ErrorKind::kFormat, "empty grade map");
  return gm;
}

namespace {
std::filesystem::path sidecar_path(const std::filesystem::path& txt) {
  std::filesystem::path p = txt;
  p.replace_extension(".json");
  return p;
}
}  // namespace

void save_grade_map(const std::filesystem::path& txt_path, const GradeMap& gm) {
  write_text_file(txt_path, grade_map_to_text(gm));
  nlohmann::json side = {{"cell_size", gm.cell_size}};
  write_text_file(sidecar_path(txt_path), side.dump() + "\n");
}

GradeMap load_grade_map(const std::filesystem::path& txt_path) {
  double cell_size = 1.0;
  const auto side = sidecar_path(txt_path);
  if (std::filesystem::exists(side)) {
    try {
      cell_size = nlohmann::json::parse(read_text_file(side)).at("cell_size").get<double>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kFormat, "bad grade map sidecar " + side.string() + ": " + e.what());
    }
  }
  return grade_map_from_text(read_text_file(txt_path), cell_size);
}

ReaderProfile ReaderProfile::default_profile() {
  ReaderProfile p;
  // Per-sample {decrease, stay, increase}. Detailed balance puts most time at
  // 10X, and zoom-in traffic grows up to the 4X-10X edge then falls off.
  p.mag_transition_prior = {{
      {0.0, 0.96, 0.04},
      {0.015, 0.955, 0.03},
      {0.015, 0.96, 0.025},
      {0.015, 0.98, 0.005},
      {0.02, 0.975, 0.005},
      {0.025, 0.975, 0.0},
  }};
  return p;
}

void ReaderProfile::validate() const {
  if (!(explore_fraction >= 0.0 && explore_fraction <= 1.0) ||
      !(drill_bias >= 0.0 && drill_bias <= 1.0) || !(noise_sigma >= 0.0)) {
    fail(ErrorKind::kInvalidConfig, "reader profile parameters out of range");
  }
  for (std::size_t m = 0; m < kNumMags; ++m) {
    const auto& row = mag_transition_prior[m];
    double s = 0.0;
    for (double v : row) {
      if (!(v >= 0.0)) fail(ErrorKind::kInvalidConfig, "negative transition probability");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) fail(ErrorKind::kInvalidConfig, "transition prior row does not sum to 1");
  }
  if (mag_transition_prior[0][0] != 0.0 || mag_transition_prior[kNumMags - 1][2] != 0.0) {
    fail(ErrorKind::kInvalidConfig, "transition prior allows impossible boundary moves");
  }
}

Point2 sample_target(const GradeMap& gm, const ReaderProfile& profile, MagLevel mag,
                     std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> tissue;
  std::vector<double> tumor_w;
  std::vector<std::size_t> tumor;
  for (std::size_t i = 0; i < gm.cells.size(); ++i) {
    const Grade g = gm.cells[i];
    if (g == Grade::kBackground) continue;
    tissue.push_back(i);
    if (g != Grade::kBenign) {
      tumor.push_back(i);
      tumor_w.push_back(static_cast<double>(static_cast<int>(g) - 1));  // G3:1 G4:2 G5:3
    }
  }
  if (tissue.empty()) fail(ErrorKind::kInvalidInput, "grade map has no tissue");

  const bool survey = mag.index() <= 1 && unit(rng) < profile.explore_fraction;
  std::size_t cell;
  if (!survey && !tumor.empty() && unit(rng) < profile.drill_bias) {
    std::discrete_distribution<std::size_t> pick(tumor_w.begin(), tumor_w.end());
    cell = tumor[pick(rng)];
  } else {
    cell = tissue[uniform_index(rng, tissue.size())];
  }
  const double r = static_cast<double>(cell / gm.cols), c = static_cast<double>(cell % gm.cols);
  return {(c + unit(rng)) * gm.cell_size, (r + unit(rng)) * gm.cell_size};
}

RawTrajectory simulate_reader(const GradeMap& wsi, const ReaderProfile& profile,
                              std::uint64_t seed, std::size_t n_samples,
                              const std::string& wsi_id, const std::string& reader_id,
                              Expertise expertise) {
  profile.validate();
  if (n_samples < 10) fail(ErrorKind::kInvalidInput, "simulate_reader needs n_samples >= 10");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::exponential_distribution<double> dwell_time(1.0 / 150.0);
  std::geometric_distribution<int> dwell_len(0.1);

  const WsiBounds b = wsi.bounds();
  const double max_x = std::nextafter(b.width, 0.0), max_y = std::nextafter(b.height, 0.0);
  auto duration = [&] {
    for (;;) {
      const double t = dwell_time(rng);
      if (t <= 2000.0) return t;
    }
  };

  RawTrajectory traj{wsi_id, reader_id, expertise, {}};
  traj.samples.reserve(n_samples);
  Point2 pos{b.width / 2.0, b.height / 2.0};
  MagLevel mag(0);
  traj.samples.push_back({pos.x, pos.y, mag, duration()});

  Point2 target = sample_target(wsi, profile, mag, rng);
  bool moving = true;
  int dwell = 0;
  for (std::size_t i = 1; i < n_samples; ++i) {
    const auto& row = profile.mag_transition_prior[static_cast<std::size_t>(mag.index())];
    const double u = unit(rng);
    if (u < row[0] && mag.can_decrease()) {
      mag = MagLevel(mag.index() - 1);
    } else if (u >= row[0] + row[1] && mag.can_increase()) {
      mag = MagLevel(mag.index() + 1);
    }

    Point2 emit;
    if (moving) {
      const double step = 0.25 * b.viewport_width(mag);
      const double dx = target.x - pos.x, dy = target.y - pos.y;
      const double d = std::hypot(dx, dy);
      if (d <= step) {
        pos = target;
        moving = false;
        dwell = 1 + dwell_len(rng);
      } else {
        pos.x += step * dx / d;
        pos.y += step * dy / d;
      }
      emit = pos;
    } else {
      emit = {target.x + profile.noise_sigma * noise(rng),
              target.y + profile.noise_sigma * noise(rng)};
      if (--dwell <= 0) {
        target = sample_target(wsi, profile, mag, rng);
        moving = true;
      }
    }
    emit.x = std::clamp(emit.x, 0.0, max_x);
    emit.y = std::clamp(emit.y, 0.0, max_y);
    traj.samples.push_back({emit.x, emit.y, mag, duration()});
  }
  return traj;
}

const GradeMap& SyntheticCorpus::map(const std::string& wsi_id) const {
  for (std::size_t i = 0; i < wsi_ids.size(); ++i) {
    if (wsi_ids[i] == wsi_id) return maps[i];
  }
  fail(ErrorKind::kInvalidInput, "unknown slide '" + wsi_id + "'");
}

SyntheticCorpus generate_corpus(const CorpusConfig& cfg) {
  if (cfg.n_wsis < 1 || cfg.n_readers < 1) {
    fail(ErrorKind::kInvalidConfig, "corpus needs at least one slide and one reader");
  }
  SyntheticCorpus corpus;
  const auto n_test = static_cast<std::size_t>(
      std::ceil(cfg.test_fraction * static_cast<double>(cfg.n_wsis) - 1e-9));
  for (std::size_t i = 0; i < cfg.n_wsis; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "wsi_%03zu", i);
    corpus.wsi_ids.emplace_back(id);
    corpus.maps.push_back(
        gen_wsi(mix_seed(cfg.seed, 1000 + i), cfg.grid_rows, cfg.grid_cols, cfg.mix, cfg.cell_size));
    corpus.is_test.push_back(cfg.n_wsis > 1 && i + n_test >= cfg.n_wsis);
  }
  static constexpr Expertise kCycle[3] = {Expertise::kResident, Expertise::kGeneral,
                                          Expertise::kSpecialist};
  for (std::size_t i = 0; i < cfg.n_wsis; ++i) {
    for (std::size_t r = 0; r < cfg.n_readers; ++r) {
      char rid[32];
      std::snprintf(rid, sizeof rid, "reader_%02zu", r);
      corpus.trajectories.push_back(simulate_reader(
          corpus.maps[i], cfg.profile, mix_seed(cfg.seed, 100000 + i * 1000 + r), cfg.n_samples,
          corpus.wsi_ids[i], rid, kCycle[r % 3]));
    }
  }
  return corpus;
}

}  // namespace pathscan
