#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "pathscan/error.hpp"
#include "pathscan/pat_s.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace pathscan;
using ad::Tensor;

namespace {

using fx::random_grid;

ScanpathModelConfig mini_config() {
  ScanpathModelConfig c;
  c.feature_dim = 8;
  c.model_dim = 8;
  c.heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.temporal_cap = 6;
  c.seed = 11;
  return c;
}

// 5x5 grid at 10X and 3x3 at 2X over a 100 px slide.
struct MiniSlide {
  FeatureGrid f2x = random_grid(2, 3, 3, 8, 100.0 / 3.0, 1);
  FeatureGrid f10x = random_grid(10, 5, 5, 8, 20.0, 2);
};

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::kContract;
}

}  // namespace

TEST_CASE("cumulative magnification count") {
  const auto sp = fx::path({fx::fix(0, 0, 1), fx::fix(0, 0, 1), fx::fix(0, 0, 2), fx::fix(0, 0, 2),
                            fx::fix(0, 0, 2), fx::fix(0, 0, 4), fx::fix(0, 0, 10),
                            fx::fix(0, 0, 10)});
  const MagDescriptor cm = cumulative_mag_count(sp.fixations);
  CHECK(cm.counts == std::array<int, 6>{2, 3, 1, 2, 0, 0});
  CHECK(cumulative_mag_count({}).counts == std::array<int, 6>{});
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    std::vector<Fixation> h;
    const std::size_t n = rng() % 20;
    for (std::size_t k = 0; k < n; ++k) h.push_back(fx::fix(0, 0, kMagFactors[rng() % 6]));
    CHECK(cumulative_mag_count(h).total() == static_cast<int>(n));
  }
}

TEST_CASE("magnification head") {
  ScanpathModel m(mini_config());
  auto w = m.params().get("mag_head.weight").mutable_values();
  auto b = m.params().get("mag_head.bias").mutable_values();
  std::fill(w.begin(), w.end(), 0.0);
  std::fill(b.begin(), b.end(), 0.0);
  MagDescriptor cm{{2, 3, 1, 2, 0, 0}};
  const Tensor zero = m.predict_mag(cm);
  REQUIRE(zero.numel() == 6);
  for (double v : zero.values()) CHECK(v == 0.5);

  // Weight layout is [in, out].
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 6; ++j) w[i * 6 + j] = 0.1 * (static_cast<double>(i) - static_cast<double>(j));
  }
  for (std::size_t j = 0; j < 6; ++j) b[j] = -0.2 + 0.05 * static_cast<double>(j);
  const Tensor out = m.predict_mag(cm);
  for (std::size_t j = 0; j < 6; ++j) {
    double z = b[j];
    for (std::size_t i = 0; i < 6; ++i) z += cm.counts[i] * w[i * 6 + j];
    CHECK(out.values()[j] == doctest::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-12));
  }
}

TEST_CASE("focal loss") {
  SUBCASE("single positive cell at 0.5") {
    const std::vector<double> gt{1.0};
    const double loss = focal_loss(Tensor::constant({1}, {0.5}), gt).item();
    CHECK(loss == doctest::Approx(-(0.5 * 0.5) * std::log(0.5)));
  }
  SUBCASE("mixed cells against a hand evaluation with gamma 2, beta 4") {
    const std::vector<double> gt{1.0, 0.5, 0.0};
    const double loss = focal_loss(Tensor::constant({3}, {0.5, 0.2, 0.9}), gt).item();
    const double expect = -(0.25 * std::log(0.5) + std::pow(0.5, 4) * 0.04 * std::log(0.8) +
                            0.81 * std::log(0.1)) / 3.0;
    CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("defaults are gamma 2 and beta 4") {
    const std::vector<double> gt{1.0, 0.3, 0.0, 0.7};
    const Tensor p = Tensor::constant({4}, {0.6, 0.3, 0.2, 0.4});
    CHECK(focal_loss(p, gt).item() == focal_loss(p, gt, 2.0, 4.0).item());
    CHECK(focal_loss(p, gt).item() != focal_loss(p, gt, 1.0, 4.0).item());
    CHECK(focal_loss(p, gt).item() != focal_loss(p, gt, 2.0, 2.0).item());
  }
  SUBCASE("perfect prediction approaches zero") {
    const std::vector<double> gt{1, 0, 0, 1};
    CHECK(focal_loss(Tensor::constant({4}, {1, 0, 0, 1}), gt).item() < 1e-9);
  }
  SUBCASE("logit form agrees with the probability form") {
    const std::vector<double> gt{1.0, 0.2, 0.0, 0.6, 0.9, 0.1};
    const std::vector<double> z{0.3, -1.2, 2.0, 0.0, -0.4, 1.1};
    std::vector<double> p;
    for (double v : z) p.push_back(1.0 / (1.0 + std::exp(-v)));
    CHECK(focal_loss_logits(Tensor::constant({6}, z), gt).item() ==
          doctest::Approx(focal_loss(Tensor::constant({6}, p), gt).item()).epsilon(1e-12));
  }
  SUBCASE("target without a peak is a contract error") {
    const std::vector<double> gt{0.9, 0.2};
    CHECK(kind_of([&] { focal_loss(Tensor::constant({2}, {0.5, 0.5}), gt); }) == ErrorKind::kContract);
  }
  SUBCASE("finite differences on 3x3 maps") {
    std::mt19937_64 rng(5);
    std::vector<double> gt{0.1, 0.3, 0.2, 0.6, 1.0, 0.5, 0.0, 0.2, 0.1};
    CHECK(gc::max_rel_error({gc::rand_param({3, 3}, rng, 0.05, 0.95)},
                            [&](const std::vector<Tensor>& in) { return focal_loss(in[0], gt); }) <
          1e-4);
    CHECK(gc::max_rel_error({gc::rand_param({3, 3}, rng, -3, 3)}, [&](const std::vector<Tensor>& in) {
            return focal_loss_logits(in[0], gt);
          }) < 1e-4);
  }
}

TEST_CASE("magnification loss and class weights") {
  const MagWeights ones{1, 1, 1, 1, 1, 1};
  CHECK(mag_loss(Tensor::constant({1, 6}, {0.3, 0.3, 0.3, 0.3, 0.3, 0.3}), 2, ones).item() ==
        doctest::Approx(std::log(6.0)));
  CHECK(mag_loss(Tensor::constant({1, 6}, {1e-9, 1e-9, 1.0 - 1e-9, 1e-9, 1e-9, 1e-9}), 2, ones).item() <
        1e-7);
  CHECK(kind_of([&] { mag_loss(Tensor::constant({1, 6}, std::vector<double>(6, 0.5)), 6, ones); }) ==
        ErrorKind::kRange);

  const MagWeights w = class_weights({10, 20, 30, 20, 10, 10});
  const std::array<double, 6> expect{1.667, 0.833, 0.556, 0.833, 1.667, 1.667};
  for (std::size_t i = 0; i < 6; ++i) CHECK(w[i] == doctest::Approx(expect[i]).epsilon(1e-3));
  for (std::size_t i = 0; i < 6; ++i) CHECK(w[i] * std::array<double, 6>{10, 20, 30, 20, 10, 10}[i] == doctest::Approx(100.0 / 6.0));
  const MagWeights absent = class_weights({5, 0, 5, 0, 0, 0});
  CHECK(absent[1] == 0.0);
  CHECK(absent[0] == doctest::Approx(10.0 / 30.0));

  std::mt19937_64 rng(6);
  CHECK(gc::max_rel_error({gc::rand_param({1, 6}, rng, 0.1, 0.9)}, [&](const std::vector<Tensor>& in) {
          return mag_loss(in[0], 3, w);
        }) < 1e-4);
}

TEST_CASE("total loss") {
  const Tensor a = Tensor::scalar(0.5), b = Tensor::scalar(0.5);
  CHECK(total_loss(a, b, 0.0).item() == 0.5);
  CHECK(total_loss(a, b, 1.0).item() == 1.0);
  CHECK(total_loss(a, b, 3.0).item() - total_loss(a, b, 2.0).item() ==
        doctest::Approx(total_loss(a, b, 2.0).item() - total_loss(a, b, 1.0).item()));

  ScanpathModel m(mini_config());
  MiniSlide s;
  const SlideTensors st(s.f2x, s.f10x);
  const auto hist = fx::path({fx::fix(50, 50, 1), fx::fix(30, 70, 2)}).fixations;
  const auto out = m.forward(st, hist);
  std::vector<double> gt(25, 0.0);
  gt[12] = 1.0;
  const Tensor lt = total_loss(focal_loss_logits(out.heat_logits, gt),
                               mag_loss(out.mag, 2, MagWeights{1, 1, 1, 1, 1, 1}), 1.0);
  ad::backward(lt);
  const auto g = m.params().get("mag_head.weight").grad();
  CHECK(std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; }));
  const auto gq = m.params().get("query").grad();
  CHECK(std::any_of(gq.begin(), gq.end(), [](double v) { return v != 0.0; }));
}

TEST_CASE("working memory") {
  ScanpathModel m(mini_config());
  MiniSlide s;
  const WorkingMemory empty = m.build_memory(s.f2x, {}, s.f10x);
  CHECK(empty.size() == 9);
  CHECK(std::all_of(empty.kinds.begin(), empty.kinds.end(), [](TokenKind k) { return k == TokenKind::kWsi; }));

  for (std::size_t n = 1; n <= 7; ++n) {
    std::vector<Fixation> h;
    for (std::size_t k = 0; k < n; ++k) h.push_back(fx::fix(10.0 + 10 * k, 15.0, kMagFactors[k % 6]));
    const WorkingMemory mem = m.build_memory(s.f2x, h, s.f10x);
    CHECK(mem.size() == 9 + n);
    CHECK(mem.tokens.rows() == 9 + n);
    CHECK(mem.tokens.cols() == 8);
    CHECK(mem.kinds.back() == TokenKind::kViewport);
    CHECK(mem.kinds[8] == TokenKind::kWsi);
  }

  const auto a = m.build_memory(s.f2x, fx::path({fx::fix(40, 40, 2)}).fixations, s.f10x);
  const auto b = m.build_memory(s.f2x, fx::path({fx::fix(40, 40, 4)}).fixations, s.f10x);
  CHECK(vals(ad::slice(a.tokens, 0, 9, 10)) != vals(ad::slice(b.tokens, 0, 9, 10)));
  CHECK(vals(ad::slice(a.tokens, 0, 0, 9)) == vals(ad::slice(b.tokens, 0, 0, 9)));

  CHECK(kind_of([&] { m.build_memory(s.f2x, fx::path({fx::fix(140, 40, 2)}).fixations, s.f10x); }) ==
        ErrorKind::kRange);

  const WorkingMemory up = m.update_memory(a);
  CHECK(up.tokens.shape() == a.tokens.shape());
  // Zeroing one token changes the others through attention.
  std::vector<double> z = vals(a.tokens);
  std::fill(z.begin() + 9 * 8, z.end(), 0.0);
  const WorkingMemory masked = m.update_memory({Tensor::constant(a.tokens.shape(), z), a.kinds});
  CHECK(vals(ad::slice(masked.tokens, 0, 0, 1)) != vals(ad::slice(up.tokens, 0, 0, 1)));

  const Tensor q = m.aggregate(up);
  CHECK(q.shape() == ad::Shape{1, 8});
}

TEST_CASE("attention arithmetic") {
  const Tensor k = Tensor::constant({3, 2}, {1, 2, 1, 2, 1, 2});
  const Tensor q = Tensor::constant({1, 2}, {0.3, -0.7});
  const Tensor weights = nn::attention_weights(q, k);
  for (double w : weights.values()) CHECK(w == doctest::Approx(1.0 / 3.0));

  // C = 2, two memory tokens.
  const Tensor keys = Tensor::constant({2, 2}, {1, 0, 0, 1});
  const Tensor v = Tensor::constant({2, 2}, {2, 4, 6, 8});
  const Tensor qq = Tensor::constant({1, 2}, {1, 3});
  const double s0 = 1.0 / std::sqrt(2.0), s1 = 3.0 / std::sqrt(2.0);
  const double w0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
  const Tensor out = nn::attention(qq, keys, v);
  CHECK(out.values()[0] == doctest::Approx(w0 * 2 + (1 - w0) * 6).epsilon(1e-12));
  CHECK(out.values()[1] == doctest::Approx(w0 * 4 + (1 - w0) * 8).epsilon(1e-12));
}

TEST_CASE("fixation heatmap head") {
  ScanpathModel m(mini_config());
  MiniSlide s;
  const auto hist = fx::path({fx::fix(50, 50, 1)}).fixations;
  const Tensor qp = m.aggregate(m.update_memory(m.build_memory(s.f2x, hist, s.f10x)));

  const Heatmap h = m.predict_fixation_heatmap(qp, s.f10x);
  CHECK(h.rows == 5);
  for (double v : h.values) CHECK((v > 0.0 && v < 1.0));

  // Identity tokens read MLP_H(Q') back out.
  std::vector<double> eye(64, 0.0);
  for (std::size_t i = 0; i < 8; ++i) eye[i * 9] = 1.0;
  const std::vector<double> dir = vals(m.fixation_logits(qp, Tensor::constant({8, 8}, eye)));
  const double len = std::sqrt(std::inner_product(dir.begin(), dir.end(), dir.begin(), 0.0));
  FeatureGrid aligned = s.f10x;
  for (std::size_t i = 0; i < 8; ++i) aligned.data[7 * 8 + i] = static_cast<float>(dir[i] / len);
  const Heatmap ha = m.predict_fixation_heatmap(qp, aligned);
  const auto best = std::max_element(ha.values.begin(), ha.values.end()) - ha.values.begin();
  CHECK(best == 7);

  FeatureGrid bigger = aligned;
  for (std::size_t i = 0; i < 8; ++i) bigger.data[3 * 8 + i] = static_cast<float>(2.0 * dir[i] / len);
  CHECK(m.predict_fixation_heatmap(qp, bigger).values[3] > ha.values[3]);

  auto w = m.params().get("mlp_h.2.weight").mutable_values();
  auto b = m.params().get("mlp_h.2.bias").mutable_values();
  std::fill(w.begin(), w.end(), 0.0);
  std::fill(b.begin(), b.end(), 0.0);
  for (double v : m.predict_fixation_heatmap(qp, s.f10x).values) CHECK(v == 0.5);

  CHECK(kind_of([&] { m.fixation_logits(qp, Tensor::constant({2, 4}, std::vector<double>(8, 0.0))); }) ==
        ErrorKind::kShape);
}

TEST_CASE("end-to-end gradients on a miniature model") {
  ScanpathModel m(mini_config());
  MiniSlide s;
  const SlideTensors st(s.f2x, s.f10x);
  const auto hist =
      fx::path({fx::fix(50, 50, 1), fx::fix(30, 70, 2), fx::fix(33, 72, 4), fx::fix(85, 10, 2)}).fixations;
  const Heatmap y = fixation_target(fx::fix(60, 30, 4), s.f10x, kDefaultSigmaFraction);
  const MagWeights w = class_weights({3, 4, 2, 1, 1, 1});
  std::vector<Tensor> params;
  for (auto& [name, t] : m.params().entries()) params.push_back(t);
  const double err = gc::max_rel_error(params, [&](const std::vector<Tensor>&) {
    const auto out = m.forward(st, hist);
    return total_loss(focal_loss_logits(out.heat_logits, y.values), mag_loss(out.mag, 2, w), 1.0);
  });
  CHECK(err < 1e-3);
}

TEST_CASE("training") {
  MiniSlide s;
  const std::vector<ScanpathSlide> slides{{"w", s.f2x, s.f10x}};
  Scanpath sp = fx::path({fx::fix(50, 50, 1), fx::fix(30, 70, 2), fx::fix(33, 72, 4),
                          fx::fix(85, 10, 4), fx::fix(81, 15, 10)});
  sp.wsi_id = "w";
  Scanpath short_sp = fx::path({fx::fix(50, 50, 1)});
  short_sp.wsi_id = "w";
  ScanpathModelConfig cfg = mini_config();
  cfg.epochs = 3;
  cfg.batch = 2;
  cfg.lr = 1e-2;
  set_warnings_enabled(false);
  const auto r1 = train_scanpath(slides, {sp, short_sp}, cfg);
  const auto r2 = train_scanpath(slides, {sp, short_sp}, cfg);
  set_warnings_enabled(true);
  CHECK(r1.examples == 4);
  REQUIRE(r1.log.size() == 3);
  CHECK(r1.log.back().total == r2.log.back().total);
  CHECK(encode_checkpoint(r1.model.to_checkpoint(&r1.adam)) ==
        encode_checkpoint(r2.model.to_checkpoint(&r2.adam)));

  cfg.lr = 0.0;
  const auto flat = train_scanpath(slides, {sp}, cfg);
  CHECK(flat.log[0].total == doctest::Approx(flat.log[2].total).epsilon(1e-12));

  const ScanpathModel back = ScanpathModel::from_checkpoint(decode_checkpoint(
      encode_checkpoint(r1.model.to_checkpoint())));
  const SlideTensors st(s.f2x, s.f10x);
  const std::span<const Fixation> prefix(sp.fixations.data(), 2);
  CHECK(back.predict(st, prefix).heat.values == r1.model.predict(st, prefix).heat.values);

  Scanpath stranger = sp;
  stranger.wsi_id = "other";
  CHECK(kind_of([&] { train_scanpath(slides, {stranger}, cfg); }) == ErrorKind::kInvalidInput);
}
