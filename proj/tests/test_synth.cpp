#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <queue>
#include <random>

#include "pathscan/error.hpp"
#include "pathscan/synth.hpp"

using namespace pathscan;

namespace {

// Upper alpha-quantile of chi-square via the Wilson-Hilferty cube.
double chi2_critical(double df, double z) {
  const double a = 2.0 / (9.0 * df);
  return df * std::pow(1.0 - a + z * std::sqrt(a), 3.0);
}

std::size_t tissue_components(const GradeMap& gm) {
  std::vector<int> seen(gm.cells.size(), 0);
  std::size_t comps = 0;
  for (std::size_t s = 0; s < gm.cells.size(); ++s) {
    if (gm.cells[s] == Grade::kBackground || seen[s]) continue;
    ++comps;
    std::queue<std::size_t> q;
    q.push(s);
    seen[s] = 1;
    while (!q.empty()) {
      const std::size_t i = q.front();
      q.pop();
      const std::size_t r = i / gm.cols, c = i % gm.cols;
      const std::size_t nb[4] = {r > 0 ? i - gm.cols : i, r + 1 < gm.rows ? i + gm.cols : i,
                                 c > 0 ? i - 1 : i, c + 1 < gm.cols ? i + 1 : i};
      for (std::size_t j : nb) {
        if (!seen[j] && gm.cells[j] != Grade::kBackground) {
          seen[j] = 1;
          q.push(j);
        }
      }
    }
  }
  return comps;
}

}  // namespace

TEST_CASE("grade maps are deterministic and well formed") {
  const GradeMap a = gen_wsi(7, 32, 32, GradeMix{});
  const GradeMap b = gen_wsi(7, 32, 32, GradeMix{});
  CHECK(a.cells == b.cells);
  CHECK(gen_wsi(8, 32, 32, GradeMix{}).cells != a.cells);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const GradeMap gm = gen_wsi(seed, 16 + seed % 5, 20, GradeMix{});
    for (std::size_t c = 0; c < gm.cols; ++c) {
      CHECK(gm.at(0, c) == Grade::kBackground);
      CHECK(gm.at(gm.rows - 1, c) == Grade::kBackground);
    }
    for (std::size_t r = 0; r < gm.rows; ++r) {
      CHECK(gm.at(r, 0) == Grade::kBackground);
      CHECK(gm.at(r, gm.cols - 1) == Grade::kBackground);
    }
    CHECK(tissue_components(gm) == 1);
    for (Grade g : {Grade::kBenign, Grade::kG3, Grade::kG4, Grade::kG5}) CHECK(gm.count(g) >= 1);
  }
}

TEST_CASE("tumor share follows the requested mix") {
  const GradeMap gm = gen_wsi(7, 32, 32, GradeMix{});
  const double tissue = static_cast<double>(gm.cells.size() - gm.count(Grade::kBackground));
  const double tumor = static_cast<double>(gm.count(Grade::kG3) + gm.count(Grade::kG4) + gm.count(Grade::kG5));
  const GradeMix mix;
  const double want = (mix.g3 + mix.g4 + mix.g5) / (mix.benign + mix.g3 + mix.g4 + mix.g5);
  CHECK(std::abs(tumor / tissue - want) <= 0.10);
}

TEST_CASE("benign-only mix has no tumor") {
  GradeMix m{1.0, 0.0, 0.0, 0.0};
  const GradeMap gm = gen_wsi(3, 16, 16, m);
  CHECK(gm.count(Grade::kG3) + gm.count(Grade::kG4) + gm.count(Grade::kG5) == 0);
  CHECK(gm.count(Grade::kBenign) > 0);
}

TEST_CASE("grade map generation rejects bad input") {
  auto kind = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::kContract;
  };
  CHECK(kind([] { gen_wsi(1, 16, 16, GradeMix{0, 0, 0, 0}); }) == ErrorKind::kInvalidConfig);
  CHECK(kind([] { gen_wsi(1, 7, 16, GradeMix{}); }) == ErrorKind::kInvalidConfig);
  CHECK(kind([] { gen_wsi(1, 16, 16, GradeMix{-1, 1, 0, 0}); }) == ErrorKind::kInvalidConfig);
}

TEST_CASE("grade map text round trip") {
  const GradeMap gm = gen_wsi(2, 12, 9, GradeMix{}, 40.0);
  const GradeMap back = grade_map_from_text(grade_map_to_text(gm), 40.0);
  CHECK(back.rows == 12);
  CHECK(back.cols == 9);
  CHECK(back.cells == gm.cells);
  CHECK_THROWS_AS(grade_map_from_text("..B\n..\n", 1.0), Error);
  CHECK_THROWS_AS(grade_map_from_text("..X\n", 1.0), Error);

  const auto dir = std::filesystem::temp_directory_path() / "pathscan_synth_test";
  std::filesystem::create_directories(dir);
  save_grade_map(dir / "m.txt", gm);
  const GradeMap loaded = load_grade_map(dir / "m.txt");
  CHECK(loaded.cell_size == 40.0);
  CHECK(loaded.cells == gm.cells);
  std::filesystem::remove_all(dir);
}

TEST_CASE("point lookup on grade maps") {
  const GradeMap gm = grade_map_from_text("..\n.3\n", 10.0);
  CHECK(gm.at_point(15, 15) == Grade::kG3);
  CHECK(gm.at_point(5, 15) == Grade::kBackground);
  CHECK(gm.at_point(-1, 15) == Grade::kBackground);
  CHECK(gm.at_point(25, 15) == Grade::kBackground);
  CHECK(gm.bounds().width == 20.0);
}

TEST_CASE("default profile is valid and boundary rows forbid impossible moves") {
  const ReaderProfile p = ReaderProfile::default_profile();
  CHECK_NOTHROW(p.validate());
  CHECK(p.mag_transition_prior[0][0] == 0.0);
  CHECK(p.mag_transition_prior[5][2] == 0.0);
  ReaderProfile bad = p;
  bad.mag_transition_prior[0] = {0.1, 0.8, 0.1};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = p;
  bad.mag_transition_prior[2] = {0.1, 0.1, 0.1};
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("simulated readers") {
  const GradeMap gm = gen_wsi(11, 32, 32, GradeMix{});
  const ReaderProfile prof = ReaderProfile::default_profile();
  const WsiBounds b = gm.bounds();

  SUBCASE("start at the centre at 1X, stay in bounds, never skip a level") {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const RawTrajectory t = simulate_reader(gm, prof, s, 2000);
      REQUIRE(t.samples.size() == 2000);
      CHECK(t.samples[0].x == b.width / 2);
      CHECK(t.samples[0].y == b.height / 2);
      CHECK(t.samples[0].mag == MagLevel(0));
      for (std::size_t i = 0; i < t.samples.size(); ++i) {
        CHECK(b.contains(t.samples[i].x, t.samples[i].y));
        CHECK(t.samples[i].t_ms >= 0.0);
        CHECK(t.samples[i].t_ms <= 2000.0);
        if (i) CHECK(std::abs(t.samples[i].mag.index() - t.samples[i - 1].mag.index()) <= 1);
      }
    }
  }
  SUBCASE("fixed seed reproduces the trajectory exactly") {
    const RawTrajectory a = simulate_reader(gm, prof, 5, 500);
    const RawTrajectory c = simulate_reader(gm, prof, 5, 500);
    REQUIRE(a.samples.size() == c.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
      CHECK(a.samples[i].x == c.samples[i].x);
      CHECK(a.samples[i].y == c.samples[i].y);
      CHECK(a.samples[i].mag == c.samples[i].mag);
      CHECK(a.samples[i].t_ms == c.samples[i].t_ms);
    }
  }
  SUBCASE("stay-only prior never leaves 1X") {
    ReaderProfile stay = prof;
    for (auto& row : stay.mag_transition_prior) row = {0.0, 1.0, 0.0};
    const RawTrajectory t = simulate_reader(gm, stay, 3, 1000);
    for (const auto& s : t.samples) CHECK(s.mag == MagLevel(0));
  }
  SUBCASE("empirical transition frequencies approach the prior") {
    std::array<std::array<double, 3>, kNumMags> counts{};
    for (std::uint64_t s = 0; s < 20; ++s) {
      const RawTrajectory t = simulate_reader(gm, prof, 100 + s, 20000);
      for (std::size_t i = 0; i + 1 < t.samples.size(); ++i) {
        const int d = t.samples[i + 1].mag.index() - t.samples[i].mag.index();
        counts[static_cast<std::size_t>(t.samples[i].mag.index())][static_cast<std::size_t>(d + 1)] += 1;
      }
    }
    for (std::size_t m = 0; m < kNumMags; ++m) {
      const double n = counts[m][0] + counts[m][1] + counts[m][2];
      if (n < 5000) continue;
      for (std::size_t k = 0; k < 3; ++k) {
        const double p = prof.mag_transition_prior[m][k];
        const double tol = 4.0 * std::sqrt(p * (1 - p) / n) + 1e-3;
        CHECK(std::abs(counts[m][k] / n - p) <= tol);
      }
    }
  }
  SUBCASE("drill bias concentrates samples on tumor") {
    ReaderProfile drill = prof;
    drill.drill_bias = 0.9;
    double tumor = 0, benign = 0;
    for (std::uint64_t s = 0; s < 10; ++s) {
      const RawTrajectory t = simulate_reader(gm, drill, 200 + s, 3000);
      for (const auto& smp : t.samples) {
        const Grade g = gm.at_point(smp.x, smp.y);
        if (g == Grade::kBenign) benign += 1;
        if (g == Grade::kG3 || g == Grade::kG4 || g == Grade::kG5) tumor += 1;
      }
    }
    const double n_tumor = static_cast<double>(gm.count(Grade::kG3) + gm.count(Grade::kG4) + gm.count(Grade::kG5));
    const double n_benign = static_cast<double>(gm.count(Grade::kBenign));
    CHECK(tumor / n_tumor > benign / n_benign);
  }
  SUBCASE("too few samples") { CHECK_THROWS_AS(simulate_reader(gm, prof, 1, 9), Error); }
}

TEST_CASE("without drill bias targets are uniform over tissue") {
  const GradeMap gm = gen_wsi(13, 16, 16, GradeMix{});
  ReaderProfile p = ReaderProfile::default_profile();
  p.drill_bias = 0.0;
  std::mt19937_64 rng(1);
  std::vector<double> counts(gm.cells.size(), 0.0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Point2 t = sample_target(gm, p, MagLevel::from_factor(10), rng);
    const auto c = static_cast<std::size_t>(t.x / gm.cell_size);
    const auto r = static_cast<std::size_t>(t.y / gm.cell_size);
    counts[r * gm.cols + c] += 1;
  }
  double tissue = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (gm.cells[i] == Grade::kBackground) {
      CHECK(counts[i] == 0);
    } else {
      tissue += 1;
    }
  }
  const double expected = n / tissue;
  double chi2 = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (gm.cells[i] != Grade::kBackground) chi2 += (counts[i] - expected) * (counts[i] - expected) / expected;
  }
  CHECK(chi2 < chi2_critical(tissue - 1, 2.3263));
}

TEST_CASE("mix_seed streams differ and are stable") {
  CHECK(mix_seed(1, 0) == mix_seed(1, 0));
  CHECK(mix_seed(1, 0) != mix_seed(1, 1));
  CHECK(mix_seed(1, 0) != mix_seed(2, 0));
}

TEST_CASE("corpus generation") {
  CorpusConfig cfg;
  cfg.n_wsis = 5;
  cfg.n_readers = 2;
  cfg.grid_rows = cfg.grid_cols = 12;
  cfg.n_samples = 50;
  const SyntheticCorpus c = generate_corpus(cfg);
  CHECK(c.wsi_ids.size() == 5);
  CHECK(c.trajectories.size() == 10);
  CHECK(c.is_test == std::vector<bool>{false, false, false, false, true});
  const SyntheticCorpus again = generate_corpus(cfg);
  CHECK(again.trajectories[3].samples.back().x == c.trajectories[3].samples.back().x);
  cfg.n_wsis = 1;
  CHECK(generate_corpus(cfg).is_test == std::vector<bool>{false});
  cfg.n_readers = 0;
  CHECK_THROWS_AS(generate_corpus(cfg), Error);
}
