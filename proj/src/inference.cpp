#include "pathscan/inference.hpp"

#include <algorithm>
#include <cmath>

#include "pathscan/error.hpp"

namespace pathscan {

void IorState::validate() const {
  if (!(radius_px > 0.0)) fail(ErrorKind::kInvalidConfig, "IOR radius must be positive");
  if (!(decay >= 0.0 && decay < 1.0)) fail(ErrorKind::kInvalidConfig, "IOR decay must be in [0, 1)");
}

Heatmap apply_ior(const Heatmap& h, const IorState& state) {
  state.validate();
  Heatmap out = h;
  const double r2 = state.radius_px * state.radius_px;
  for (const Visit& v : state.visited) {
    for (std::size_t r = 0; r < out.rows; ++r) {
      for (std::size_t c = 0; c < out.cols; ++c) {
        const Point2 p = out.cell_center(r, c);
        const double dx = p.x - v.x, dy = p.y - v.y;
        if (dx * dx + dy * dy <= r2) out.at(r, c) *= state.decay;
      }
    }
  }
  return out;
}

Point2 next_location(const Heatmap& h) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < h.values.size(); ++i) {
    if (h.values[i] > h.values[best]) best = i;
  }
  if (h.values.empty() || !(h.values[best] > 0.0)) {
    fail(ErrorKind::kDegenerate, "heatmap has no positive cell");
  }
  return h.cell_center(best / h.cols, best % h.cols);
}

namespace {

struct Band {
  std::array<int, 3> level{};
  std::array<double, 3> weight{};
  std::size_t n = 0;
};

// Candidates in the order decrease, stay, increase.
Band band_of(MagLevel current, auto weight_of) {
  Band b;
  for (int d = -1; d <= 1; ++d) {
    const int idx = current.index() + d;
    if (idx < 0 || idx >= static_cast<int>(kNumMags)) continue;
    b.level[b.n] = idx;
    b.weight[b.n] = weight_of(idx);
    ++b.n;
  }
  return b;
}

MagLevel sample_band(const Band& b, MagLevel current, std::mt19937_64& rng) {
  double total = 0.0;
  for (std::size_t i = 0; i < b.n; ++i) total += b.weight[i];
  if (!(total > 0.0)) return current;
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < b.n; ++i) {
    if (b.weight[i] <= 0.0) continue;
    acc += b.weight[i];
    if (u < acc) return MagLevel(b.level[i]);
  }
  for (std::size_t i = b.n; i-- > 0;) {
    if (b.weight[i] > 0.0) return MagLevel(b.level[i]);
  }
  return current;
}

}  // namespace

MagLevel next_mag_probmag(std::span<const double> activations, MagLevel current,
                          MagSampling mode, std::mt19937_64* rng) {
  if (activations.size() != kNumMags) fail(ErrorKind::kShape, "expected 6 activations");
  for (double a : activations) {
    if (!std::isfinite(a)) fail(ErrorKind::kNumeric, "non-finite magnification activation");
    if (a < 0.0) fail(ErrorKind::kRange, "negative magnification activation");
  }
  const Band b = band_of(current, [&](int i) { return activations[static_cast<std::size_t>(i)]; });
  if (mode == MagSampling::kDeterministic) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < b.n; ++i) {
      if (b.weight[i] > b.weight[best]) best = i;
    }
    return b.weight[best] > 0.0 ? MagLevel(b.level[best]) : current;
  }
  if (rng == nullptr) fail(ErrorKind::kContract, "sampling mode needs a random generator");
  return sample_band(b, current, *rng);
}

MagLevel next_mag_priormag(const TransitionMatrix& tm, MagLevel current, std::mt19937_64& rng) {
  const auto& row = tm[static_cast<std::size_t>(current.index())];
  const Band b = band_of(current, [&](int i) { return row[static_cast<std::size_t>(i)]; });
  return sample_band(b, current, rng);
}

std::size_t infer_length(std::span<const Scanpath> corpus) {
  if (corpus.empty()) fail(ErrorKind::kInvalidInput, "cannot infer length from an empty corpus");
  double mean = 0.0;
  for (const Scanpath& sp : corpus) mean += static_cast<double>(sp.fixations.size());
  mean /= static_cast<double>(corpus.size());
  return static_cast<std::size_t>(std::llround(mean));
}

const char* to_string(RolloutMode mode) {
  return mode == RolloutMode::kProbMag ? "probmag" : "priormag";
}

RolloutMode rollout_mode_from_string(const std::string& s) {
  if (s == "probmag") return RolloutMode::kProbMag;
  if (s == "priormag") return RolloutMode::kPriorMag;
  fail(ErrorKind::kInvalidConfig, "unknown rollout mode '" + s + "'");
}

RolloutResult rollout(const ScanpathModel& model, const SlideTensors& slide,
                      const RolloutConfig& cfg, const std::string& wsi_id) {
  if (cfg.n == 0) fail(ErrorKind::kInvalidConfig, "rollout length must be >= 1");
  RolloutResult res;
  res.scanpath.wsi_id = wsi_id;
  std::mt19937_64 rng(cfg.seed);
  const WsiBounds& b = slide.bounds;
  std::vector<Fixation>& fx = res.scanpath.fixations;
  fx.push_back({b.width / 2.0, b.height / 2.0, MagLevel(0), cfg.fixation_dur_ms});

  while (fx.size() < cfg.n) {
    try {
      const ScanpathModel::Step step = model.predict(slide, fx);
      const MagLevel current = fx.back().mag;
      IorState ior;
      ior.radius_px = cfg.ior_radius_fraction * b.viewport_width(current);
      ior.decay = cfg.ior_decay;
      const std::size_t first =
          cfg.ior_window == 0 || fx.size() <= cfg.ior_window ? 0 : fx.size() - cfg.ior_window;
      for (std::size_t i = first; i < fx.size(); ++i) ior.visited.push_back({fx[i].x, fx[i].y, fx[i].mag});
      Heatmap suppressed = apply_ior(step.heat, ior);
      const bool exhausted = std::none_of(suppressed.values.begin(), suppressed.values.end(),
                                          [](double v) { return v > 0.0; });
      if (exhausted) ++res.ior_fallbacks;
      const Point2 loc = next_location(exhausted ? step.heat : suppressed);
      const MagLevel mag = cfg.mode == RolloutMode::kProbMag
                               ? next_mag_probmag(step.mag, current, cfg.probmag_sampling, &rng)
                               : next_mag_priormag(cfg.prior, current, rng);
      fx.push_back({loc.x, loc.y, mag, cfg.fixation_dur_ms});
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDegenerate) throw;
      res.aborted = true;
      res.error = e.what();
      break;
    }
  }
  return res;
}

}  // namespace pathscan
