#include "pathscan/pat_h.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pathscan/error.hpp"
#include "pathscan/io.hpp"
#include "pathscan/synth.hpp"

namespace pathscan {

namespace {

// Large enough that the position code dominates unit-norm patch features.
constexpr double kPositionAmplitude = 2.0;

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

HeatmapModelConfig config_from_json(const nlohmann::json& j) {
  HeatmapModelConfig c;
  c.dim = j.at("dim").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.ffn_hidden = j.at("ffn_hidden").get<std::size_t>();
  c.mags_trained.clear();
  for (int f : j.at("mags_trained")) c.mags_trained.push_back(MagLevel::from_factor(f));
  c.lr = j.at("lr").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.max_global_tokens = j.at("max_global_tokens").get<std::size_t>();
  c.window = j.at("window").get<std::size_t>();
  c.k_sigma = j.at("k_sigma").get<double>();
  return c;
}

}  // namespace

void HeatmapModelConfig::validate() const {
  if (dim == 0 || heads == 0 || dim % heads != 0 || dim % 4 != 0) {
    fail(ErrorKind::kInvalidConfig,
         "heatmap model dim must be a positive multiple of 4 and of heads");
  }
  if (ffn_hidden == 0) fail(ErrorKind::kInvalidConfig, "ffn_hidden must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail(ErrorKind::kInvalidConfig, "lr must be >= 0");
  if (window == 0) fail(ErrorKind::kInvalidConfig, "attention window must be positive");
  if (!(k_sigma > 0.0)) fail(ErrorKind::kInvalidConfig, "k_sigma must be positive");
}

nlohmann::json HeatmapModelConfig::to_json() const {
  nlohmann::json mags = nlohmann::json::array();
  for (MagLevel m : mags_trained) mags.push_back(m.factor());
  return {{"dim", dim},         {"layers", layers}, {"heads", heads},
          {"ffn_hidden", ffn_hidden},
          {"mags_trained", mags}, {"lr", lr},     {"epochs", epochs},
          {"seed", seed},       {"max_global_tokens", max_global_tokens},
          {"window", window},   {"k_sigma", k_sigma}};
}

HeatmapModel::HeatmapModel(const HeatmapModelConfig& cfg, MagLevel mag, std::size_t rows,
                           std::size_t cols)
    : cfg_(cfg), mag_(mag), rows_(rows), cols_(cols) {
  cfg_.validate();
  if (rows == 0 || cols == 0) fail(ErrorKind::kInvalidConfig, "heatmap grid must be non-empty");
  std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(mag.index()) + 101));
  const std::size_t n = rows * cols;
  // Learned table started from a scaled sinusoidal code so that later
  // stages can localize cells through inner products.
  std::vector<double> pos;
  pos.reserve(n * cfg.dim);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const auto code = nn::position_code((static_cast<double>(c) + 0.5) / static_cast<double>(cols),
                                          (static_cast<double>(r) + 0.5) / static_cast<double>(rows),
                                          cfg.dim);
      for (double v : code) pos.push_back(static_cast<double>(static_cast<float>(kPositionAmplitude * v)));
    }
  }
  pos_ = params_.add("pos", {n, cfg.dim}, std::move(pos));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    layers_.push_back(nn::make_encoder_layer(params_, "enc" + std::to_string(l), cfg.dim,
                                             cfg.heads, cfg.ffn_hidden, rng));
    // Residual branches start small so z_L initially stays close to its input.
    for (ad::Tensor* w : {&layers_.back().attn.o.weight, &layers_.back().ffn.fc2.weight}) {
      for (double& v : w->mutable_values()) v = static_cast<double>(static_cast<float>(0.1 * v));
    }
  }
  decoder_ = nn::make_linear(params_, "dec", cfg.dim, 1, rng);
  if (n > cfg.max_global_tokens) windows_ = nn::grid_windows(rows, cols, cfg.window);
}

void HeatmapModel::check_grid(const FeatureGrid& grid) const {
  if (grid.rows != rows_ || grid.cols != cols_ || grid.dim != cfg_.dim) {
    fail(ErrorKind::kShape, "feature grid " + std::to_string(grid.rows) + "x" +
                                std::to_string(grid.cols) + "x" + std::to_string(grid.dim) +
                                " does not match model " + std::to_string(rows_) + "x" +
                                std::to_string(cols_) + "x" + std::to_string(cfg_.dim));
  }
}

ad::Tensor HeatmapModel::encode(const FeatureGrid& grid) const {
  check_grid(grid);
  const ad::Tensor tokens = ad::Tensor::constant({grid.size(), grid.dim}, to_double(grid.data));
  ad::Tensor z = ad::add(tokens, pos_);
  const nn::WindowPlan* plan = windows_ ? &*windows_ : nullptr;
  for (const auto& layer : layers_) z = layer(z, plan);
  return z;
}

ad::Tensor HeatmapModel::encode_tokens(const ad::Tensor& tokens,
                                       std::span<const std::size_t> pos_ids) const {
  if (tokens.rank() != 2 || tokens.cols() != cfg_.dim || tokens.rows() != pos_ids.size()) {
    fail(ErrorKind::kShape, "encode_tokens expects [n, dim] tokens with n positional ids");
  }
  ad::Tensor z = ad::add(tokens, ad::embedding_lookup(pos_, pos_ids));
  for (const auto& layer : layers_) z = layer(z);
  return z;
}

ad::Tensor HeatmapModel::scores(const ad::Tensor& z) const { return decoder_(z); }

Heatmap HeatmapModel::decode_heatmap(const ad::Tensor& z, double cell_px) const {
  if (z.rows() != rows_ * cols_) fail(ErrorKind::kShape, "encoding does not cover the grid");
  const ad::Tensor s = scores(z);
  Heatmap h = Heatmap::zeros(mag_, rows_, cols_, cell_px);
  std::copy(s.values().begin(), s.values().end(), h.values.begin());
  normalize_min_max(h);
  return h;
}

Heatmap HeatmapModel::predict(const FeatureGrid& grid) const {
  return decode_heatmap(encode(grid), grid.patch_px);
}

FeatureGrid HeatmapModel::encoded_grid(const FeatureGrid& grid) const {
  const ad::Tensor z = encode(grid);
  FeatureGrid out{grid.mag, grid.rows, grid.cols, cfg_.dim, grid.patch_px, {}};
  out.data.assign(z.values().begin(), z.values().end());
  return out;
}

Checkpoint HeatmapModel::to_checkpoint(const nn::AdamState* adam) const {
  Checkpoint ck;
  const nlohmann::json meta{{"kind", "heatmap"},
                            {"tool_version", kToolVersion},
                            {"mag", mag_.factor()},
                            {"rows", rows_},
                            {"cols", cols_},
                            {"config", cfg_.to_json()}};
  ck.metadata = meta.dump();
  store_params(ck, params_, adam);
  return ck;
}

HeatmapModel HeatmapModel::from_checkpoint(const Checkpoint& ck, nn::AdamState* adam) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ck.metadata);
    if (meta.at("kind") != "heatmap") fail(ErrorKind::kFormat, "not a heatmap checkpoint");
    HeatmapModel model(config_from_json(meta.at("config")),
                       MagLevel::from_factor(meta.at("mag").get<int>()),
                       meta.at("rows").get<std::size_t>(), meta.at("cols").get<std::size_t>());
    restore_params(ck, model.params_, adam);
    return model;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("bad heatmap checkpoint metadata: ") + e.what());
  }
}

ad::Tensor loss_cc(const ad::Tensor& pred, const ad::Tensor& gt) {
  if (pred.numel() != gt.numel()) fail(ErrorKind::kShape, "loss_cc size mismatch");
  const ad::Shape flat{pred.numel(), 1};
  const ad::Tensor p = ad::reshape(pred, flat);
  const ad::Tensor g = ad::reshape(gt, flat);
  const ad::Tensor pc = ad::sub(p, ad::mean(p));
  const ad::Tensor gc = ad::sub(g, ad::mean(g));
  const ad::Tensor spp = ad::sum(ad::mul(pc, pc));
  const ad::Tensor sgg = ad::sum(ad::mul(gc, gc));
  if (!(spp.item() > 0.0) || !(sgg.item() > 0.0)) {
    fail(ErrorKind::kDegenerate, "correlation undefined for a constant map");
  }
  const ad::Tensor r = ad::div(ad::sum(ad::mul(pc, gc)), ad::sqrt(ad::mul(spp, sgg)));
  return ad::add_scalar(ad::neg(r), 1.0);
}

double loss_cc(const Heatmap& pred, const Heatmap& gt) { return 1.0 - cc(pred, gt); }

Heatmap fixations_to_heatmap(std::span<const Scanpath> scanpaths, MagLevel mag, std::size_t rows,
                             std::size_t cols, double cell_px, double k_sigma) {
  std::vector<Fixation> at_mag;
  for (const Scanpath& sp : scanpaths) {
    for (const Fixation& f : sp.fixations) {
      if (f.mag == mag) at_mag.push_back(f);
    }
  }
  if (at_mag.empty()) {
    warn("no fixations at " + std::to_string(mag.factor()) + "X; target map is all zero");
    return Heatmap::zeros(mag, rows, cols, cell_px);
  }
  return render_fixations(at_mag, mag, rows, cols, cell_px, k_sigma);
}

HeatmapTrainResult train_heatmap(const std::vector<HeatmapExample>& corpus, MagLevel mag,
                                 const HeatmapModelConfig& cfg, const HeatmapEpochHook& hook) {
  if (corpus.empty()) fail(ErrorKind::kInvalidInput, "empty heatmap training corpus");
  const FeatureGrid& first = corpus.front().features;
  for (const HeatmapExample& ex : corpus) {
    if (ex.features.rows != first.rows || ex.features.cols != first.cols ||
        ex.target.rows != first.rows || ex.target.cols != first.cols) {
      fail(ErrorKind::kShape, "heatmap corpus grids differ in shape at " + ex.wsi_id);
    }
  }
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].target.is_constant()) {
      warn("skipping " + corpus[i].wsi_id + " at " + std::to_string(mag.factor()) +
           "X: constant target map");
    } else {
      usable.push_back(i);
    }
  }
  if (usable.empty()) {
    fail(ErrorKind::kDegenerate,
         "no slide has a non-constant target at " + std::to_string(mag.factor()) + "X");
  }

  HeatmapTrainResult res{HeatmapModel(cfg, mag, first.rows, first.cols), {}, {}};
  const nn::AdamConfig adam_cfg{.lr = cfg.lr};
  std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(mag.index()) + 202));
  std::vector<ad::Tensor> targets;
  targets.reserve(corpus.size());
  for (const HeatmapExample& ex : corpus) {
    targets.push_back(ad::Tensor::constant({ex.target.size(), 1}, ex.target.values));
  }

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(usable.begin(), usable.end(), rng);
    double total = 0.0;
    for (std::size_t i : usable) {
      res.model.params().zero_grad();
      const ad::Tensor z = res.model.encode(corpus[i].features);
      const ad::Tensor loss = loss_cc(res.model.scores(z), targets[i]);
      total += loss.item();
      ad::backward(loss);
      nn::adam_step(res.model.params(), res.adam, adam_cfg);
    }
    const double mean_loss = total / static_cast<double>(usable.size());
    if (!std::isfinite(mean_loss)) fail(ErrorKind::kNumeric, "non-finite heatmap loss");
    res.epoch_loss.push_back(mean_loss);
    if (hook) hook(epoch, mean_loss, res.model, res.adam);
  }
  return res;
}

}  // namespace pathscan
