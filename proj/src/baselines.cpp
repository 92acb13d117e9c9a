#include "pathscan/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "pathscan/error.hpp"

namespace pathscan {

namespace {

void check_bounds(const WsiBounds& b) {
  if (!(b.width > 0.0) || !(b.height > 0.0)) {
    fail(ErrorKind::kInvalidInput, "slide bounds must be positive");
  }
}

double clamp_axis(double v, double extent) {
  return std::clamp(v, 0.0, std::nextafter(extent, 0.0));
}

Fixation clamped(Fixation f, const WsiBounds& b) {
  f.x = clamp_axis(f.x, b.width);
  f.y = clamp_axis(f.y, b.height);
  return f;
}

}  // namespace

Fixation random1_next(const WsiBounds& bounds, std::mt19937_64& rng) {
  check_bounds(bounds);
  std::uniform_real_distribution<double> ux(0.0, bounds.width), uy(0.0, bounds.height);
  std::uniform_int_distribution<int> um(0, static_cast<int>(kNumMags) - 1);
  const double x = ux(rng);
  const double y = uy(rng);
  return {x, y, MagLevel(um(rng)), 0.0};
}

Scanpath random2_scanpath(std::span<const Scanpath> corpus, const std::string& test_wsi,
                          const WsiBounds& bounds, std::mt19937_64& rng) {
  check_bounds(bounds);
  std::vector<const Scanpath*> donors;
  for (const Scanpath& sp : corpus) {
    if (sp.wsi_id != test_wsi && !sp.fixations.empty()) donors.push_back(&sp);
  }
  if (donors.empty()) fail(ErrorKind::kInvalidInput, "no donor scanpath outside " + test_wsi);
  std::uniform_int_distribution<std::size_t> pick(0, donors.size() - 1);
  Scanpath out = *donors[pick(rng)];
  for (Fixation& f : out.fixations) f = clamped(f, bounds);
  return out;
}

Random2Fixation random2_next(std::span<const Scanpath> corpus, const std::string& reader_id,
                             std::size_t index, const std::string& test_wsi,
                             const WsiBounds& bounds, std::mt19937_64& rng) {
  check_bounds(bounds);
  std::vector<const Scanpath*> donors;
  for (const Scanpath& sp : corpus) {
    if (sp.reader_id == reader_id && sp.wsi_id != test_wsi && !sp.fixations.empty()) {
      donors.push_back(&sp);
    }
  }
  if (donors.empty()) {
    fail(ErrorKind::kInvalidInput, "reader " + reader_id + " has no scanpath outside " + test_wsi);
  }
  std::uniform_int_distribution<std::size_t> pick(0, donors.size() - 1);
  const Scanpath& d = *donors[pick(rng)];
  const bool over = index >= d.fixations.size();
  const Fixation& f = d.fixations[over ? d.fixations.size() - 1 : index];
  return {clamped(f, bounds), d.wsi_id, over};
}

TransitionStats estimate_transition_matrix(std::span<const Scanpath> corpus) {
  if (corpus.empty()) fail(ErrorKind::kInvalidInput, "empty scanpath corpus");
  TransitionStats st;
  for (const Scanpath& sp : corpus) {
    for (std::size_t i = 1; i < sp.fixations.size(); ++i) {
      const int a = sp.fixations[i - 1].mag.index();
      const int b = sp.fixations[i].mag.index();
      const auto ua = static_cast<std::size_t>(a);
      ++st.raw[ua][static_cast<std::size_t>(b)];
      ++st.counts[ua][b < a ? 0 : (b == a ? 1 : 2)];
      ++st.total;
    }
  }
  for (std::size_t r = 0; r < kNumMags; ++r) {
    std::size_t n = 0;
    for (std::size_t c : st.raw[r]) n += c;
    if (n == 0) {
      warn("no transitions from " + std::to_string(kMagFactors[r]) + "X; using a uniform row");
      st.matrix[r].fill(1.0 / static_cast<double>(kNumMags));
      continue;
    }
    for (std::size_t c = 0; c < kNumMags; ++c) {
      st.matrix[r][c] = static_cast<double>(st.raw[r][c]) / static_cast<double>(n);
    }
  }
  return st;
}

std::string transition_stats_csv(const TransitionStats& stats) {
  std::ostringstream os;
  os.precision(6);
  os << "level,decrease,stay,increase,decrease_frac,stay_frac,increase_frac\n";
  for (std::size_t r = 0; r < kNumMags; ++r) {
    const auto& c = stats.counts[r];
    const double n = static_cast<double>(c[0] + c[1] + c[2]);
    os << kMagFactors[r] << "X," << c[0] << ',' << c[1] << ',' << c[2];
    for (std::size_t i = 0; i < 3; ++i) os << ',' << (n > 0 ? static_cast<double>(c[i]) / n : 0.0);
    os << '\n';
  }
  return os.str();
}

}  // namespace pathscan
