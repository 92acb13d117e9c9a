#include "pathscan/trajectory.hpp"

#include <algorithm>
#include <cmath>

#include "pathscan/error.hpp"

namespace pathscan {

const char* to_string(Expertise e) {
  switch (e) {
    case Expertise::kResident: return "resident";
    case Expertise::kGeneral: return "general";
    case Expertise::kSpecialist: return "specialist";
  }
  return "resident";
}

Expertise expertise_from_string(const std::string& s) {
  if (s == "resident") return Expertise::kResident;
  if (s == "general") return Expertise::kGeneral;
  if (s == "specialist") return Expertise::kSpecialist;
  fail(ErrorKind::kInvalidInput, "unknown expertise '" + s + "'");
}

void SimplifyParams::validate() const {
  if (!(th_angle > 0.0) || !(th_time_ms > 0.0) || !(th_dist > 0.0)) {
    fail(ErrorKind::kInvalidConfig, "simplification thresholds must be positive");
  }
  if (max_fixations < 2) fail(ErrorKind::kInvalidConfig, "max_fixations must be >= 2");
  if (dist_unit == DistanceUnit::kViewportFraction && !(viewport_width_1x > 0.0)) {
    fail(ErrorKind::kInvalidConfig,
         "viewport-relative th_dist needs a positive viewport_width_1x");
  }
}

double SimplifyParams::dist_threshold_px(MagLevel m) const {
  if (dist_unit == DistanceUnit::kLevel0Pixels) return th_dist;
  return th_dist * viewport_width_1x / m.factor();
}

std::vector<Fragment> split_by_magnification(const RawTrajectory& traj) {
  if (traj.samples.empty()) fail(ErrorKind::kInvalidInput, "empty trajectory");
  std::vector<Fragment> out;
  const std::span<const ViewportSample> all(traj.samples);
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= all.size(); ++i) {
    if (i == all.size() || all[i].mag != all[begin].mag) {
      out.push_back(all.subspan(begin, i - begin));
      begin = i;
    }
  }
  return out;
}

double turning_angle(Point2 prev, Point2 cur, Point2 next) {
  const double ax = cur.x - prev.x, ay = cur.y - prev.y;
  const double bx = next.x - cur.x, by = next.y - cur.y;
  const double na = std::hypot(ax, ay), nb = std::hypot(bx, by);
  if (na == 0.0 || nb == 0.0) return 0.0;
  // atan2 of cross/dot is better conditioned than acos near 0 and pi.
  return std::abs(std::atan2(ax * by - ay * bx, ax * bx + ay * by));
}

namespace {

Fixation to_fixation(const ViewportSample& s) { return {s.x, s.y, s.mag, s.t_ms}; }

Point2 at(const ViewportSample& s) { return {s.x, s.y}; }

double distance(const Fixation& a, const Fixation& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

std::vector<Fixation> simplify_fragment(Fragment sub, const SimplifyParams& params) {
  std::vector<Fixation> out;
  if (sub.empty()) return out;
  out.push_back(to_fixation(sub.front()));
  for (std::size_t p = 1; p + 1 < sub.size(); ++p) {
    const double angle = turning_angle(at(sub[p - 1]), at(sub[p]), at(sub[p + 1]));
    if (angle > params.th_angle && sub[p].t_ms > params.th_time_ms) {
      out.push_back(to_fixation(sub[p]));
    }
  }
  if (sub.size() > 1) out.push_back(to_fixation(sub.back()));
  return out;
}

std::vector<Fixation> dispersion_merge(std::span<const Fixation> pts,
                                       const SimplifyParams& params) {
  std::vector<Fixation> out;
  if (pts.empty()) return out;
  const double th = params.dist_threshold_px(pts.front().mag);
  out.push_back(pts.front());
  for (std::size_t q = 1; q + 1 < pts.size(); ++q) {
    // Literal mode compares consecutive refined points and drops the far ones;
    // the default compares against the last emitted point and drops near ones.
    const bool absorb = params.literal_dispersion_branch
                            ? distance(pts[q], pts[q - 1]) >= th
                            : distance(pts[q], out.back()) < th;
    if (absorb) {
      out.back().dur_ms += pts[q].dur_ms;
    } else {
      out.push_back(pts[q]);
    }
  }
  if (pts.size() > 1) out.push_back(pts.back());
  return out;
}

namespace {

std::vector<Fixation> run_pipeline(const std::vector<Fragment>& frags,
                                   const SimplifyParams& params, bool* all_minimal) {
  std::vector<Fixation> out;
  *all_minimal = true;
  for (const Fragment& f : frags) {
    const std::vector<Fixation> refined = simplify_fragment(f, params);
    const std::vector<Fixation> merged = dispersion_merge(refined, params);
    if (merged.size() > 2) *all_minimal = false;
    out.insert(out.end(), merged.begin(), merged.end());
  }
  return out;
}

// Keeps the endpoints and an even spread of the remaining points.
std::vector<Fixation> thin_evenly(const std::vector<Fixation>& pts, std::size_t cap) {
  std::vector<Fixation> out;
  out.reserve(cap);
  const std::size_t n = pts.size();
  for (std::size_t k = 0; k < cap; ++k) {
    const std::size_t idx = (k * (n - 1) + (cap - 1) / 2) / (cap - 1);
    out.push_back(pts[idx]);
  }
  out.back() = pts.back();
  return out;
}

}  // namespace

Scanpath simplify(const RawTrajectory& traj, const SimplifyParams& params) {
  params.validate();
  const std::vector<Fragment> frags = split_by_magnification(traj);
  Scanpath sp{traj.wsi_id, traj.reader_id, {}};

  SimplifyParams p = params;
  for (;;) {
    bool all_minimal = false;
    sp.fixations = run_pipeline(frags, p, &all_minimal);
    if (sp.fixations.size() <= p.max_fixations) return sp;
    if (all_minimal) break;
    p.th_time_ms *= 1.5;
    p.th_dist *= 1.5;
  }
  warn("scanpath " + traj.wsi_id + "/" + traj.reader_id + " has " +
       std::to_string(sp.fixations.size()) +
       " magnification-boundary points, above the cap; thinning evenly");
  sp.fixations = thin_evenly(sp.fixations, p.max_fixations);
  return sp;
}

}  // namespace pathscan
