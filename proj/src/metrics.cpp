#include "pathscan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "pathscan/error.hpp"

namespace pathscan {

double nss(const Heatmap& h, std::span<const Fixation> fixations) {
  if (fixations.empty()) fail(ErrorKind::kInvalidInput, "NSS needs at least one fixation");
  const double n = static_cast<double>(h.values.size());
  const double mean = std::accumulate(h.values.begin(), h.values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : h.values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  if (!(sd > 0.0)) fail(ErrorKind::kDegenerate, "NSS undefined for a constant map");
  double acc = 0.0;
  for (const Fixation& f : fixations) {
    const CellIndex c = h.cell_of(f.x, f.y);
    acc += (h.at(c.row, c.col) - mean) / sd;
  }
  return acc / static_cast<double>(fixations.size());
}

double auc_judd(const Heatmap& h, std::span<const Fixation> fixations) {
  if (fixations.empty()) fail(ErrorKind::kInvalidInput, "AUC needs at least one fixation");
  std::vector<char> positive(h.values.size(), 0);
  for (const Fixation& f : fixations) {
    const CellIndex c = h.cell_of(f.x, f.y);
    positive[c.row * h.cols + c.col] = 1;
  }
  const auto n_pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), 1));
  const std::size_t n_neg = positive.size() - n_pos;
  if (n_neg == 0) fail(ErrorKind::kContract, "AUC undefined when every cell is fixated");

  std::vector<std::size_t> order(h.values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return h.values[a] < h.values[b]; });
  // Mann-Whitney U from mid-ranks.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && h.values[order[j]] == h.values[order[i]]) ++j;
    const double mid = (static_cast<double>(i) + static_cast<double>(j) + 1.0) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) rank_sum += mid;
    }
    i = j;
  }
  const double p = static_cast<double>(n_pos), q = static_cast<double>(n_neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

GradeString grade_string(const Scanpath& sp, const GradeMap& gm) {
  GradeString s;
  for (const Fixation& f : sp.fixations) {
    const Grade g = gm.at_point(f.x, f.y);
    if (g != Grade::kBackground) s.push_back(g);
  }
  return s;
}

std::string grade_string_text(const GradeString& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += '-';
    out += grade_name(s[i]);
  }
  return out;
}

void AlignScoring::validate() const {
  if (!(match > mismatch)) fail(ErrorKind::kInvalidConfig, "alignment match must exceed mismatch");
  if (!(match > 0.0)) fail(ErrorKind::kInvalidConfig, "alignment match must be positive");
}

double needleman_wunsch_raw(const GradeString& a, const GradeString& b, const AlignScoring& s) {
  s.validate();
  if (a.empty() || b.empty()) fail(ErrorKind::kInvalidInput, "cannot align an empty grade string");
  const std::size_t n = a.size(), m = b.size();
  std::vector<double> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<double>(j) * s.gap;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<double>(i) * s.gap;
    for (std::size_t j = 1; j <= m; ++j) {
      const double diag = prev[j - 1] + (a[i - 1] == b[j - 1] ? s.match : s.mismatch);
      cur[j] = std::max({diag, prev[j] + s.gap, cur[j - 1] + s.gap});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double needleman_wunsch(const GradeString& a, const GradeString& b, const AlignScoring& s) {
  const double raw = needleman_wunsch_raw(a, b, s);
  return std::clamp(raw / (s.match * static_cast<double>(std::max(a.size(), b.size()))), 0.0, 1.0);
}

double sss(const Scanpath& pred, std::span<const Scanpath> gts, const GradeMap& gm,
           const AlignScoring& s) {
  if (gts.empty()) fail(ErrorKind::kInvalidInput, "SSS needs at least one ground truth");
  const GradeString p = grade_string(pred, gm);
  double acc = 0.0;
  std::size_t used = 0;
  for (const Scanpath& gt : gts) {
    const GradeString g = grade_string(gt, gm);
    if (g.empty()) continue;
    acc += p.empty() ? 0.0 : needleman_wunsch(p, g, s);
    ++used;
  }
  if (used == 0) fail(ErrorKind::kDegenerate, "every ground-truth grade string is empty");
  return acc / static_cast<double>(used);
}

TokSimResult tok_sim_scan(const Scanpath& pred, const Scanpath& gt,
                          const FeatureProvider& features, bool index_aligned) {
  TokSimResult res;
  double weighted = 0.0;
  std::size_t weight = 0;
  for (std::size_t m = 0; m < kNumMags; ++m) {
    const MagLevel level(static_cast<int>(m));
    std::vector<std::span<const float>> p, g;
    const FeatureGrid* grid = nullptr;
    for (const Fixation& f : pred.fixations) {
      if (f.mag != level) continue;
      if (!grid) grid = &features.grid(pred.wsi_id, level);
      p.push_back(token_at(*grid, f.x, f.y));
    }
    if (p.empty()) continue;
    const FeatureGrid& ggrid = features.grid(gt.wsi_id, level);
    for (const Fixation& f : gt.fixations) {
      if (f.mag == level) g.push_back(token_at(ggrid, f.x, f.y));
    }
    if (g.empty()) continue;
    double acc = 0.0;
    std::size_t n = 0;
    if (index_aligned) {
      n = std::min(p.size(), g.size());
      for (std::size_t i = 0; i < n; ++i) acc += cosine_similarity(p[i], g[i]);
    } else {
      n = p.size();
      for (const auto& pt : p) {
        double best = -1.0;
        for (const auto& gt_tok : g) best = std::max(best, cosine_similarity(pt, gt_tok));
        acc += best;
      }
    }
    res.per_level[m] = acc / static_cast<double>(n);
    weighted += acc;
    weight += n;
  }
  if (weight == 0) fail(ErrorKind::kDegenerate, "scanpaths share no magnification level");
  res.overall = weighted / static_cast<double>(weight);
  return res;
}

double tok_sim_fix(const Fixation& pred, const Fixation& gt, const std::string& wsi_id,
                   const FeatureProvider& features) {
  return cosine_similarity(token_at(features.grid(wsi_id, pred.mag), pred.x, pred.y),
                           token_at(features.grid(wsi_id, gt.mag), gt.x, gt.y));
}

double spatial_error(const Fixation& pred, const Fixation& gt, const WsiBounds& bounds) {
  if (!(bounds.width > 0.0) || !(bounds.height > 0.0)) {
    fail(ErrorKind::kInvalidInput, "slide bounds must be positive");
  }
  return std::hypot((pred.x - gt.x) / bounds.width, (pred.y - gt.y) / bounds.height);
}

namespace {

MagAccuracy accuracy_over(std::span<const NextEvent> events, bool changes_only) {
  MagAccuracy acc;
  std::array<std::size_t, kNumMags> hit{}, total{};
  std::size_t all_hit = 0;
  for (const NextEvent& e : events) {
    if (changes_only && e.gt_next == e.current) continue;
    const auto m = static_cast<std::size_t>(e.current.index());
    ++total[m];
    ++acc.events;
    if (e.pred_next == e.gt_next) {
      ++hit[m];
      ++all_hit;
    }
  }
  if (acc.events == 0) {
    acc.defined = false;
    return acc;
  }
  acc.overall = 100.0 * static_cast<double>(all_hit) / static_cast<double>(acc.events);
  for (std::size_t m = 0; m < kNumMags; ++m) {
    if (total[m] > 0) {
      acc.per_level[m] = 100.0 * static_cast<double>(hit[m]) / static_cast<double>(total[m]);
    }
  }
  return acc;
}

}  // namespace

MagAccuracy mag_accuracy(std::span<const NextEvent> events) {
  if (events.empty()) fail(ErrorKind::kInvalidInput, "magnification accuracy needs events");
  return accuracy_over(events, false);
}

MagAccuracy mag_change_accuracy(std::span<const NextEvent> events) {
  return accuracy_over(events, true);
}

Heatmap scanpath_to_heatmap(const Scanpath& sp, MagLevel mag, std::size_t rows, std::size_t cols,
                            double cell_px, double k_sigma) {
  return render_fixations(sp.fixations, mag, rows, cols, cell_px, k_sigma);
}

void Report::add(const std::string& id, std::vector<std::optional<double>> values) {
  if (values.size() != columns.size()) fail(ErrorKind::kShape, "report row width mismatch");
  rows.emplace_back(id, std::move(values));
}

std::vector<std::optional<double>> Report::mean() const {
  std::vector<std::optional<double>> out(columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& [id, v] : rows) {
      if (v[c]) {
        s += *v[c];
        ++n;
      }
    }
    if (n > 0) out[c] = s / static_cast<double>(n);
  }
  return out;
}

std::vector<std::optional<double>> Report::stddev() const {
  const auto mu = mean();
  std::vector<std::optional<double>> out(columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& [id, v] : rows) {
      if (v[c]) {
        s += (*v[c] - *mu[c]) * (*v[c] - *mu[c]);
        ++n;
      }
    }
    if (n == 1) out[c] = 0.0;
    if (n > 1) out[c] = std::sqrt(s / static_cast<double>(n - 1));
  }
  return out;
}

std::string Report::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "wsi";
  for (const auto& c : columns) os << ',' << c;
  os << '\n';
  auto line = [&](const std::string& id, const std::vector<std::optional<double>>& v) {
    os << id;
    for (const auto& x : v) {
      os << ',';
      if (x) os << *x;
    }
    os << '\n';
  };
  for (const auto& [id, v] : rows) line(id, v);
  line("mean", mean());
  line("std", stddev());
  return os.str();
}

nlohmann::json Report::to_json() const {
  auto obj = [&](const std::vector<std::optional<double>>& v) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t c = 0; c < columns.size(); ++c) {
      j[columns[c]] = v[c] ? nlohmann::json(*v[c]) : nlohmann::json(nullptr);
    }
    return j;
  };
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& [id, v] : rows) {
    nlohmann::json r = obj(v);
    r["wsi"] = id;
    rows_json.push_back(r);
  }
  return {{"rows", rows_json}, {"mean", obj(mean())}, {"std", obj(stddev())}};
}

}  // namespace pathscan
