#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "pathscan/error.hpp"
#include "pathscan/metrics.hpp"
#include "support/fixtures.hpp"
#include "support/metric_oracles.hpp"

using namespace pathscan;
using G = Grade;

namespace {

Heatmap map_of(std::size_t rows, std::size_t cols, std::vector<double> v) {
  Heatmap h = Heatmap::zeros(MagLevel::from_factor(10), rows, cols, 1.0);
  h.values = std::move(v);
  return h;
}

Fixation at_cell(std::size_t r, std::size_t c, int factor = 10) {
  return fx::fix(static_cast<double>(c) + 0.5, static_cast<double>(r) + 0.5, factor);
}

class MapProvider : public FeatureProvider {
 public:
  std::map<std::pair<std::string, int>, FeatureGrid> grids;
  const FeatureGrid& grid(const std::string& id, MagLevel m) const override {
    return grids.at({id, m.index()});
  }
};

// 2x2 grid of 10 px patches with axis-aligned tokens.
FeatureGrid axis_grid(int factor, std::vector<std::vector<float>> tokens) {
  FeatureGrid g{MagLevel::from_factor(factor), 2, 2, tokens[0].size(), 10.0, {}};
  for (const auto& t : tokens) g.data.insert(g.data.end(), t.begin(), t.end());
  return g;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::kContract;
}

}  // namespace

TEST_CASE("NSS") {
  const Heatmap h = map_of(2, 2, {0, 0, 0, 1});
  const std::vector<Fixation> hot{at_cell(1, 1)};
  CHECK(nss(h, hot) == doctest::Approx(0.75 / std::sqrt(0.1875)));

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(64);
  for (double& x : v) x = u(rng);
  const Heatmap m = map_of(8, 8, v);
  const std::size_t peak = std::max_element(v.begin(), v.end()) - v.begin();
  const std::vector<Fixation> at_peak{at_cell(peak / 8, peak % 8)};
  CHECK(nss(m, at_peak) > 0.0);

  Heatmap affine = m;
  for (double& x : affine.values) x = 4.0 * x + 7.0;
  const std::vector<Fixation> some{at_cell(1, 2), at_cell(5, 5), at_cell(7, 0)};
  CHECK(nss(affine, some) == doctest::Approx(nss(m, some)).epsilon(1e-12));

  double mean = 0.0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const Fixation f = fx::fix(u(rng) * 8.0, u(rng) * 8.0, 10);
    mean += nss(m, std::span(&f, 1)) / draws;
  }
  CHECK(std::abs(mean) < 0.05);

  CHECK(kind_of([] { nss(map_of(1, 2, {1, 1}), std::vector<Fixation>{at_cell(0, 0)}); }) ==
        ErrorKind::kDegenerate);
  CHECK(kind_of([&] { nss(m, std::vector<Fixation>{}); }) == ErrorKind::kInvalidInput);
}

TEST_CASE("AUC") {
  const std::vector<Fixation> two{at_cell(0, 0), at_cell(1, 1)};
  CHECK(auc_judd(map_of(2, 2, {0.9, 0.1, 0.2, 0.8}), two) == 1.0);
  CHECK(auc_judd(map_of(2, 2, {0.5, 0.5, 0.5, 0.5}), two) == 0.5);
  CHECK(auc_judd(map_of(2, 2, {0.0, 0.1, 0.2, 0.0}), two) == 0.0);
  const std::vector<Fixation> all{at_cell(0, 0), at_cell(0, 1), at_cell(1, 0), at_cell(1, 1)};
  CHECK(kind_of([&] { auc_judd(map_of(2, 2, {0, 1, 2, 3}), all); }) == ErrorKind::kContract);

  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> level(0, 7);
  std::uniform_int_distribution<int> cell(0, 5);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> v(36);
    for (double& x : v) x = level(rng) / 7.0;
    const Heatmap h = map_of(6, 6, v);
    std::vector<Fixation> f;
    const int n = 1 + static_cast<int>(rng() % 10);
    for (int k = 0; k < n; ++k) f.push_back(at_cell(cell(rng), cell(rng)));
    const double got = auc_judd(h, f);
    CHECK(std::abs(got - oracle::auc_pairs(h, f)) < 1e-12);
    Heatmap mono = h;
    for (double& x : mono.values) x = std::exp(3.0 * x) - 2.0;
    CHECK(auc_judd(mono, f) == doctest::Approx(got).epsilon(1e-12));
  }
}

TEST_CASE("grade strings") {
  GradeMap gm{2, 3, 10.0, {G::kBenign, G::kG3, G::kBackground, G::kG4, G::kG5, G::kBenign}};
  const Scanpath sp = fx::path({fx::fix(5, 5, 1), fx::fix(25, 5, 2), fx::fix(15, 15, 4),
                                fx::fix(12, 3, 10), fx::fix(5, 15, 10), fx::fix(100, 100, 1)});
  const GradeString s = grade_string(sp, gm);
  CHECK(s == GradeString{G::kBenign, G::kG5, G::kG3, G::kG4});
  CHECK(grade_string_text(s) == "B-G5-G3-G4");
  const Scanpath benign = fx::path({fx::fix(5, 5, 1), fx::fix(28, 18, 1)});
  CHECK(grade_string(benign, gm) == GradeString{G::kBenign, G::kBenign});
}

TEST_CASE("Needleman-Wunsch") {
  const AlignScoring s;
  const GradeString abc{G::kBenign, G::kG3, G::kG4}, ab{G::kBenign, G::kG3};
  CHECK(needleman_wunsch(abc, abc) == 1.0);
  CHECK(needleman_wunsch_raw(abc, ab) == oracle::best_alignment(abc, ab, s));
  CHECK(needleman_wunsch(abc, ab) == doctest::Approx(1.0 / 3.0));

  const GradeString b2{G::kBenign, G::kBenign}, g3{G::kG3, G::kG3, G::kG3};
  CHECK(needleman_wunsch_raw(b2, g3) == oracle::best_alignment(b2, g3, s));
  CHECK(needleman_wunsch(b2, g3) == 0.0);

  CHECK(kind_of([&] { needleman_wunsch(GradeString{}, ab); }) == ErrorKind::kInvalidInput);
  CHECK(kind_of([&] { needleman_wunsch(ab, ab, AlignScoring{1.0, 1.0, -1.0}); }) ==
        ErrorKind::kInvalidConfig);

  // Exhaustive over lengths up to 3 here; the acceptance run covers length 4.
  const auto strings = oracle::all_grade_strings(3);
  const AlignScoring other{2.0, -0.5, -1.5};
  for (const auto& a : strings) {
    for (const auto& b : strings) {
      CHECK(needleman_wunsch_raw(a, b, s) == oracle::best_alignment(a, b, s));
      CHECK(needleman_wunsch_raw(a, b, other) == oracle::best_alignment(a, b, other));
      CHECK(needleman_wunsch(a, b) == needleman_wunsch(b, a));
      CHECK((needleman_wunsch(a, b) == 1.0) == (a == b));
    }
  }
}

TEST_CASE("semantic sequence score") {
  GradeMap gm{1, 4, 10.0, {G::kBenign, G::kG3, G::kG4, G::kBackground}};
  const Scanpath gt = fx::path({fx::fix(5, 5, 1), fx::fix(15, 5, 2), fx::fix(25, 5, 4)});
  CHECK(sss(gt, std::span(&gt, 1), gm) == 1.0);
  const Scanpath gt2 = fx::path({fx::fix(5, 5, 1), fx::fix(15, 5, 2)});
  const std::vector<Scanpath> both{gt, gt2};
  CHECK(sss(gt, both, gm) == doctest::Approx((1.0 + 1.0 / 3.0) / 2.0));
  const Scanpath bg = fx::path({fx::fix(35, 5, 1)});
  CHECK(kind_of([&] { sss(gt, std::span(&bg, 1), gm); }) == ErrorKind::kDegenerate);
  CHECK(sss(bg, std::span(&gt, 1), gm) == 0.0);
}

TEST_CASE("token similarity") {
  MapProvider p;
  p.grids[{"w", 1}] = axis_grid(2, {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.6f, 0.8f, 0}});
  p.grids[{"w", 3}] = axis_grid(10, {{0, 1, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  p.grids[{"v", 1}] = axis_grid(2, {{0, 0, 1}, {0, 0, 1}, {0, 0, 1}, {0, 0, 1}});

  SUBCASE("scanpath level") {
    const Scanpath a = fx::path({fx::fix(5, 5, 2), fx::fix(15, 5, 2), fx::fix(5, 15, 10)}, "w");
    const TokSimResult self = tok_sim_scan(a, a, p);
    CHECK(*self.per_level[1] == doctest::Approx(1.0));
    CHECK(*self.per_level[3] == doctest::Approx(1.0));
    CHECK_FALSE(self.per_level[0].has_value());
    CHECK(self.overall == doctest::Approx(1.0));

    // Toy case against a brute-force max-cosine.
    const Scanpath pred = fx::path({fx::fix(5, 5, 2), fx::fix(15, 15, 2), fx::fix(15, 5, 10)}, "w");
    const Scanpath gt = fx::path({fx::fix(15, 5, 2), fx::fix(5, 15, 2), fx::fix(5, 5, 10), fx::fix(15, 15, 4)}, "w");
    // 2X: pred tokens e1, (0.6, 0.8, 0); gt tokens e2, e3.
    const double l2 = (std::max(0.0, 0.0) + std::max(0.8, 0.0)) / 2.0;
    // 10X: pred e1 against gt e2.
    const double l10 = 0.0;
    const TokSimResult r = tok_sim_scan(pred, gt, p);
    CHECK(*r.per_level[1] == doctest::Approx(l2));
    CHECK(*r.per_level[3] == doctest::Approx(l10));
    CHECK(r.overall == doctest::Approx((2 * l2 + 1 * l10) / 3.0));
    const TokSimResult aligned = tok_sim_scan(pred, gt, p, true);
    CHECK(*aligned.per_level[1] == doctest::Approx((0.0 + 0.0) / 2.0));

    const Scanpath orth = fx::path({fx::fix(5, 5, 2)}, "v");
    const Scanpath e1 = fx::path({fx::fix(5, 5, 2)}, "w");
    CHECK(tok_sim_scan(e1, orth, p).overall == 0.0);

    const Scanpath only10 = fx::path({fx::fix(5, 5, 10)}, "w");
    const Scanpath only2 = fx::path({fx::fix(5, 5, 2)}, "w");
    CHECK(kind_of([&] { tok_sim_scan(only10, only2, p); }) == ErrorKind::kDegenerate);
  }
  SUBCASE("fixation level") {
    CHECK(tok_sim_fix(fx::fix(5, 5, 2), fx::fix(5, 5, 2), "w", p) == doctest::Approx(1.0));
    CHECK(tok_sim_fix(fx::fix(1, 2, 2), fx::fix(9, 8, 2), "w", p) == doctest::Approx(1.0));
    CHECK(tok_sim_fix(fx::fix(5, 5, 2), fx::fix(15, 5, 2), "w", p) == 0.0);
    CHECK(tok_sim_fix(fx::fix(5, 5, 2), fx::fix(15, 15, 2), "w", p) == doctest::Approx(0.6));
    CHECK(kind_of([&] { tok_sim_fix(fx::fix(25, 5, 2), fx::fix(5, 5, 2), "w", p); }) == ErrorKind::kRange);
  }
}

TEST_CASE("spatial error") {
  const WsiBounds b{200, 100};
  CHECK(spatial_error(fx::fix(50, 50, 1), fx::fix(50, 50, 2), b) == 0.0);
  CHECK(spatial_error(fx::fix(0, 0, 1), fx::fix(200, 100, 1), b) == doctest::Approx(std::sqrt(2.0)));
  CHECK(spatial_error(fx::fix(50, 25, 1), fx::fix(50, 75, 1), b) == doctest::Approx(0.5));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ux(0, 200), uy(0, 100);
  for (int i = 0; i < 200; ++i) {
    const Fixation p = fx::fix(ux(rng), uy(rng), 1), q = fx::fix(ux(rng), uy(rng), 1),
                   r = fx::fix(ux(rng), uy(rng), 1);
    CHECK(spatial_error(p, r, b) <= spatial_error(p, q, b) + spatial_error(q, r, b) + 1e-12);
    CHECK(spatial_error(p, q, b) == spatial_error(q, p, b));
  }
}

TEST_CASE("magnification accuracy") {
  const MagLevel m1(0), m2(1), m4(2);
  const std::vector<NextEvent> ev{{m1, m1, m1}, {m1, m2, m2}, {m2, m2, m1}, {m2, m4, m4}};
  const MagAccuracy a = mag_accuracy(ev);
  CHECK(a.overall == 75.0);
  CHECK(*a.per_level[0] == 100.0);
  CHECK(*a.per_level[1] == 50.0);
  CHECK_FALSE(a.per_level[2].has_value());

  const std::vector<NextEvent> ch{{m1, m2, m2}, {m2, m4, m2}, {m2, m2, m2}};
  const MagAccuracy c = mag_change_accuracy(ch);
  CHECK(c.events == 2);
  CHECK(c.overall == 50.0);

  const std::vector<NextEvent> stay{{m1, m1, m1}, {m2, m2, m2}};
  CHECK(mag_accuracy(stay).overall == 100.0);
  CHECK_FALSE(mag_change_accuracy(stay).defined);

  // A predictor that never changes level scores 0 on change events.
  std::mt19937_64 rng(4);
  std::vector<NextEvent> random_ev;
  for (int i = 0; i < 300; ++i) {
    const MagLevel cur(static_cast<int>(rng() % 6));
    const int step = static_cast<int>(rng() % 3) - 1;
    const MagLevel nxt(std::clamp(cur.index() + step, 0, 5));
    random_ev.push_back({cur, nxt, cur});
  }
  const MagAccuracy never = mag_change_accuracy(random_ev);
  CHECK(never.overall == 0.0);
  const MagAccuracy overall = mag_accuracy(random_ev);
  CHECK(never.events <= overall.events);
  CHECK((overall.overall >= 0.0 && overall.overall <= 100.0));

  for (auto& e : random_ev) e.pred_next = e.gt_next;
  CHECK(mag_change_accuracy(random_ev).overall == 100.0);
  CHECK(kind_of([] { mag_accuracy({}); }) == ErrorKind::kInvalidInput);
}

TEST_CASE("scanpath heatmaps") {
  const Scanpath one = fx::path({fx::fix(4.5, 4.5, 2)});
  const Heatmap h = scanpath_to_heatmap(one, MagLevel::from_factor(10), 9, 9, 1.0);
  CHECK(h.at(4, 4) == 1.0);
  CHECK(std::count(h.values.begin(), h.values.end(), 1.0) == 1);
  CHECK(scanpath_to_heatmap(one, MagLevel::from_factor(10), 9, 9, 1.0).values == h.values);

  const Scanpath two = fx::path({fx::fix(1.5, 1.5, 10), fx::fix(6.5, 1.5, 20)});
  const Heatmap t = scanpath_to_heatmap(two, MagLevel::from_factor(10), 3, 8, 1.0);
  std::vector<double> oracle(24);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 8; ++c) {
      double v = 0;
      for (const auto& f : two.fixations) {
        const double sigma = 8.0 / 8.0 / f.mag.factor();
        const double dx = c + 0.5 - f.x, dy = r + 0.5 - f.y;
        v += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      }
      oracle[r * 8 + c] = v;
    }
  }
  const double mx = *std::max_element(oracle.begin(), oracle.end());
  for (std::size_t i = 0; i < 24; ++i) CHECK(t.values[i] == doctest::Approx(oracle[i] / mx).epsilon(1e-9));
}

TEST_CASE("reports") {
  Report r;
  r.columns = {"a", "b"};
  r.add("s1", {1.0, std::nullopt});
  r.add("s2", {3.0, 5.0});
  CHECK(*r.mean()[0] == 2.0);
  CHECK(*r.mean()[1] == 5.0);
  CHECK(*r.stddev()[0] == doctest::Approx(std::sqrt(2.0)));
  CHECK(*r.stddev()[1] == 0.0);
  CHECK(r.to_csv() == "wsi,a,b\ns1,1,\ns2,3,5\nmean,2,5\nstd,1.414213562,0\n");
  const auto j = r.to_json();
  CHECK(j["rows"][0]["b"].is_null());
  CHECK(j["mean"]["a"] == 2.0);
  CHECK(kind_of([&] { r.add("bad", {1.0}); }) == ErrorKind::kShape);
}
