#pragma once

#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "pathscan/mag.hpp"

namespace pathscan {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct ViewportSample {
  double x = 0.0;
  double y = 0.0;
  MagLevel mag;
  double t_ms = 0.0;
};

enum class Expertise { kResident, kGeneral, kSpecialist };

const char* to_string(Expertise e);
Expertise expertise_from_string(const std::string& s);

struct RawTrajectory {
  std::string wsi_id;
  std::string reader_id;
  Expertise expertise = Expertise::kResident;
  std::vector<ViewportSample> samples;
};

struct Fixation {
  double x = 0.0;
  double y = 0.0;
  MagLevel mag;
  double dur_ms = 0.0;

  friend bool operator==(const Fixation&, const Fixation&) = default;
};

struct Scanpath {
  std::string wsi_id;
  std::string reader_id;
  std::vector<Fixation> fixations;
};

enum class DistanceUnit {
  kLevel0Pixels,
  // th_dist is a fraction of the viewport width at the fragment's level.
  kViewportFraction,
};

struct SimplifyParams {
  double th_angle = std::numbers::pi / 6.0;
  double th_time_ms = 100.0;
  double th_dist = 0.25;
  DistanceUnit dist_unit = DistanceUnit::kViewportFraction;
  // Level-0 width of the 1X viewport, i.e. the slide width. Only used with
  // kViewportFraction.
  double viewport_width_1x = 0.0;
  std::size_t max_fixations = 150;
  bool literal_dispersion_branch = false;

  void validate() const;
  double dist_threshold_px(MagLevel m) const;
};

using Fragment = std::span<const ViewportSample>;

// Splits into maximal runs of constant magnification.
std::vector<Fragment> split_by_magnification(const RawTrajectory& traj);

// Absolute turning angle in [0, pi] at `cur`; 0 when any two points coincide.
double turning_angle(Point2 prev, Point2 cur, Point2 next);

// Angle/time filter over one constant-magnification fragment. Endpoints are
// always kept.
std::vector<Fixation> simplify_fragment(Fragment sub, const SimplifyParams& params);

// Merges points closer than th_dist into the previously emitted point, which
// accumulates their durations. Endpoints are always kept.
std::vector<Fixation> dispersion_merge(std::span<const Fixation> pts,
                                       const SimplifyParams& params);

Scanpath simplify(const RawTrajectory& traj, const SimplifyParams& params);

}  // namespace pathscan
