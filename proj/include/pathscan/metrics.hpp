#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathscan/features.hpp"
#include "pathscan/heatmap.hpp"
#include "pathscan/synth.hpp"
#include "pathscan/trajectory.hpp"

namespace pathscan {

// Mean z-score (population std) of the cells under each fixation.
double nss(const Heatmap& h, std::span<const Fixation> fixations);

// Area under the ROC curve with fixated cells positive and all others
// negative; ties count half.
double auc_judd(const Heatmap& h, std::span<const Fixation> fixations);

// Grades under fixation centres, Background dropped.
using GradeString = std::vector<Grade>;
GradeString grade_string(const Scanpath& sp, const GradeMap& gm);
std::string grade_string_text(const GradeString& s);

struct AlignScoring {
  double match = 1.0;
  double mismatch = -1.0;
  double gap = -1.0;

  void validate() const;
};

double needleman_wunsch_raw(const GradeString& a, const GradeString& b,
                            const AlignScoring& s = {});
// Raw score / (match * max length), clamped to [0, 1].
double needleman_wunsch(const GradeString& a, const GradeString& b, const AlignScoring& s = {});

// Mean alignment score against every ground truth with a non-empty string.
double sss(const Scanpath& pred, std::span<const Scanpath> gts, const GradeMap& gm,
           const AlignScoring& s = {});

struct TokSimResult {
  std::array<std::optional<double>, kNumMags> per_level{};
  double overall = 0.0;
};

// Per level: mean over predicted fixations of the best cosine against the
// ground-truth tokens at that level (or, index-aligned, against the k-th
// ground-truth fixation at that level). Overall weights levels by the
// number of scored predicted fixations.
TokSimResult tok_sim_scan(const Scanpath& pred, const Scanpath& gt,
                          const FeatureProvider& features, bool index_aligned = false);

double tok_sim_fix(const Fixation& pred, const Fixation& gt, const std::string& wsi_id,
                   const FeatureProvider& features);

double spatial_error(const Fixation& pred, const Fixation& gt, const WsiBounds& bounds);

struct NextEvent {
  MagLevel current;
  MagLevel gt_next;
  MagLevel pred_next;
};

struct MagAccuracy {
  bool defined = true;
  double overall = 0.0;  // percent
  std::array<std::optional<double>, kNumMags> per_level{};
  std::size_t events = 0;
};

MagAccuracy mag_accuracy(std::span<const NextEvent> events);
// Restricted to events whose ground-truth level changes; undefined when
// there are none.
MagAccuracy mag_change_accuracy(std::span<const NextEvent> events);

Heatmap scanpath_to_heatmap(const Scanpath& sp, MagLevel mag, std::size_t rows, std::size_t cols,
                            double cell_px, double k_sigma = kDefaultSigmaFraction);

// Per-slide rows plus mean and sample-std aggregate rows; missing values are
// left blank in CSV and null in JSON.
struct Report {
  std::vector<std::string> columns;
  std::vector<std::pair<std::string, std::vector<std::optional<double>>>> rows;

  void add(const std::string& id, std::vector<std::optional<double>> values);
  std::vector<std::optional<double>> mean() const;
  std::vector<std::optional<double>> stddev() const;
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

}  // namespace pathscan
