#include "pathscan/pat_s.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include "pathscan/error.hpp"
#include "pathscan/io.hpp"
#include "pathscan/synth.hpp"

namespace pathscan {

namespace {

constexpr double kLogClamp = 1e-7;
// Comparable to the unit-amplitude position code so that layer norm keeps
// every embedding visible.
constexpr double kEmbedStd = 0.5;

void check_target(std::span<const double> gt, std::size_t n) {
  if (gt.size() != n) {
    fail(ErrorKind::kShape, "focal loss: prediction has " + std::to_string(n) +
                                " cells, target " + std::to_string(gt.size()));
  }
  if (std::none_of(gt.begin(), gt.end(), [](double v) { return v == 1.0; })) {
    fail(ErrorKind::kContract, "focal loss target has no cell equal to 1");
  }
}

struct FocalMasks {
  ad::Tensor pos;
  ad::Tensor neg;
};

FocalMasks focal_masks(std::span<const double> gt, double beta) {
  std::vector<double> pos(gt.size()), neg(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] < 0.0 || gt[i] > 1.0) fail(ErrorKind::kRange, "focal loss target outside [0, 1]");
    pos[i] = gt[i] == 1.0 ? 1.0 : 0.0;
    neg[i] = gt[i] == 1.0 ? 0.0 : std::pow(1.0 - gt[i], beta);
  }
  return {ad::Tensor::constant({gt.size(), 1}, std::move(pos)),
          ad::Tensor::constant({gt.size(), 1}, std::move(neg))};
}

ad::Tensor focal_combine(const FocalMasks& masks, const ad::Tensor& p, const ad::Tensor& q,
                         const ad::Tensor& log_p, const ad::Tensor& log_q, double gamma) {
  const ad::Tensor pos = ad::mul(ad::mul(ad::pow(q, gamma), log_p), masks.pos);
  const ad::Tensor neg = ad::mul(ad::mul(ad::pow(p, gamma), log_q), masks.neg);
  return ad::neg(ad::mean(ad::add(pos, neg)));
}

ad::Tensor row_of(const ad::Tensor& table, std::size_t r) { return ad::slice(table, 0, r, r + 1); }

}  // namespace

void ScanpathModelConfig::validate() const {
  if (model_dim == 0 || model_dim % 4 != 0) {
    fail(ErrorKind::kInvalidConfig, "model_dim must be a positive multiple of 4");
  }
  if (heads == 0 || model_dim % heads != 0) {
    fail(ErrorKind::kInvalidConfig, "model_dim must be divisible by heads");
  }
  if (feature_dim == 0) fail(ErrorKind::kInvalidConfig, "feature_dim must be positive");
  if (!(gamma > 0.0) || !(beta > 0.0)) fail(ErrorKind::kInvalidConfig, "gamma and beta must be > 0");
  if (!(lambda_mag >= 0.0)) fail(ErrorKind::kInvalidConfig, "lambda_mag must be >= 0");
  if (!class_weights.empty() && class_weights.size() != kNumMags) {
    fail(ErrorKind::kInvalidConfig, "class_weights needs 6 entries");
  }
  if (!(lr >= 0.0)) fail(ErrorKind::kInvalidConfig, "lr must be >= 0");
  if (batch == 0) fail(ErrorKind::kInvalidConfig, "batch must be positive");
  if (temporal_cap == 0) fail(ErrorKind::kInvalidConfig, "temporal_cap must be positive");
  if (!(k_sigma > 0.0)) fail(ErrorKind::kInvalidConfig, "k_sigma must be positive");
}

nlohmann::json ScanpathModelConfig::to_json() const {
  return {{"feature_dim", feature_dim}, {"model_dim", model_dim},
          {"enc_layers", enc_layers},   {"dec_layers", dec_layers},
          {"heads", heads},             {"mlp_hidden", mlp_hidden},
          {"lambda_mag", lambda_mag},   {"gamma", gamma},
          {"beta", beta},               {"class_weights", class_weights},
          {"lr", lr},                   {"epochs", epochs},
          {"batch", batch},             {"seed", seed},
          {"temporal_cap", temporal_cap}, {"k_sigma", k_sigma}};
}

ScanpathModelConfig ScanpathModelConfig::from_json(const nlohmann::json& j) {
  ScanpathModelConfig c;
  c.feature_dim = j.at("feature_dim").get<std::size_t>();
  c.model_dim = j.at("model_dim").get<std::size_t>();
  c.enc_layers = j.at("enc_layers").get<std::size_t>();
  c.dec_layers = j.at("dec_layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  c.lambda_mag = j.at("lambda_mag").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.beta = j.at("beta").get<double>();
  c.class_weights = j.at("class_weights").get<std::vector<double>>();
  c.lr = j.at("lr").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch = j.at("batch").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.temporal_cap = j.at("temporal_cap").get<std::size_t>();
  c.k_sigma = j.at("k_sigma").get<double>();
  return c;
}

int MagDescriptor::total() const {
  int t = 0;
  for (int c : counts) t += c;
  return t;
}

MagDescriptor cumulative_mag_count(std::span<const Fixation> history) {
  MagDescriptor cm;
  for (const Fixation& f : history) ++cm.counts[static_cast<std::size_t>(f.mag.index())];
  return cm;
}

SlideTensors::SlideTensors(const FeatureGrid& f2x_grid, const FeatureGrid& f10x_grid)
    : f2x(&f2x_grid), f10x(&f10x_grid), bounds(f10x_grid.extent()) {
  if (f2x_grid.dim != f10x_grid.dim) {
    fail(ErrorKind::kShape, "2X and 10X feature widths differ");
  }
  f2x_tokens = ad::Tensor::constant({f2x_grid.size(), f2x_grid.dim},
                                    {f2x_grid.data.begin(), f2x_grid.data.end()});
  f10x_tokens = ad::Tensor::constant({f10x_grid.size(), f10x_grid.dim},
                                     {f10x_grid.data.begin(), f10x_grid.data.end()});
}

ScanpathModel::ScanpathModel(const ScanpathModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t c = cfg_.model_dim, d = cfg_.feature_dim, h = cfg_.hidden();
  std::mt19937_64 rng(mix_seed(cfg_.seed, 303));
  in_proj_ = nn::make_linear(params_, "in_proj", d, c, rng);
  scale_emb_ = params_.add("scale_emb", {2, c}, nn::init_normal(2 * c, kEmbedStd, rng));
  time_emb_ = params_.add("time_emb", {cfg_.temporal_cap, c},
                          nn::init_normal(cfg_.temporal_cap * c, kEmbedStd, rng));
  mag_emb_ = params_.add("mag_emb", {kNumMags, c}, nn::init_normal(kNumMags * c, kEmbedStd, rng));
  for (std::size_t l = 0; l < cfg_.enc_layers; ++l) {
    memory_layers_.push_back(
        nn::make_encoder_layer(params_, "mem" + std::to_string(l), c, cfg_.heads, 2 * c, rng));
  }
  query_ = params_.add("query", {1, c}, nn::init_normal(c, 0.02, rng));
  for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
    decoder_layers_.push_back(
        nn::make_cross_layer(params_, "dec" + std::to_string(l), c, cfg_.heads, 2 * c, rng));
  }
  mlp_h_.push_back(nn::make_linear(params_, "mlp_h.0", c, h, rng));
  mlp_h_.push_back(nn::make_linear(params_, "mlp_h.1", h, h, rng));
  mlp_h_.push_back(nn::make_linear(params_, "mlp_h.2", h, d, rng));
  mag_head_ = nn::make_linear(params_, "mag_head", kNumMags, kNumMags, rng);
}

WorkingMemory ScanpathModel::build_memory(const SlideTensors& slide,
                                          std::span<const Fixation> history) const {
  const FeatureGrid& g2 = *slide.f2x;
  const std::size_t c = cfg_.model_dim;
  if (g2.dim != cfg_.feature_dim) {
    fail(ErrorKind::kShape, "feature width " + std::to_string(g2.dim) + " != model feature_dim " +
                                std::to_string(cfg_.feature_dim));
  }
  const double w = slide.bounds.width, hgt = slide.bounds.height;

  std::vector<double> pos2;
  pos2.reserve(g2.size() * c);
  for (std::size_t r = 0; r < g2.rows; ++r) {
    for (std::size_t col = 0; col < g2.cols; ++col) {
      const auto code = nn::position_code((static_cast<double>(col) + 0.5) * g2.patch_px / w,
                                      (static_cast<double>(r) + 0.5) * g2.patch_px / hgt, c);
      pos2.insert(pos2.end(), code.begin(), code.end());
    }
  }
  ad::Tensor wsi = ad::add(in_proj_(slide.f2x_tokens),
                           ad::Tensor::constant({g2.size(), c}, std::move(pos2)));
  wsi = ad::add(wsi, row_of(scale_emb_, 0));

  WorkingMemory mem;
  mem.kinds.assign(g2.size(), TokenKind::kWsi);
  if (history.empty()) {
    mem.tokens = wsi;
    return mem;
  }

  const std::size_t n = history.size();
  std::vector<double> feats, pos;
  feats.reserve(n * cfg_.feature_dim);
  pos.reserve(n * c);
  std::vector<std::size_t> recency(n), mags(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Fixation& f = history[i];
    const auto tok = token_at(*slide.f10x, f.x, f.y);
    feats.insert(feats.end(), tok.begin(), tok.end());
    const auto code = nn::position_code(f.x / w, f.y / hgt, c);
    pos.insert(pos.end(), code.begin(), code.end());
    recency[i] = std::min(n - 1 - i, cfg_.temporal_cap - 1);
    mags[i] = static_cast<std::size_t>(f.mag.index());
  }
  ad::Tensor view = in_proj_(ad::Tensor::constant({n, cfg_.feature_dim}, std::move(feats)));
  view = ad::add(view, ad::Tensor::constant({n, c}, std::move(pos)));
  view = ad::add(view, row_of(scale_emb_, 1));
  view = ad::add(view, ad::embedding_lookup(time_emb_, recency));
  view = ad::add(view, ad::embedding_lookup(mag_emb_, mags));

  mem.tokens = ad::concat({wsi, view}, 0);
  mem.kinds.insert(mem.kinds.end(), n, TokenKind::kViewport);
  return mem;
}

WorkingMemory ScanpathModel::build_memory(const FeatureGrid& f2x,
                                          std::span<const Fixation> history,
                                          const FeatureGrid& f10x) const {
  return build_memory(SlideTensors(f2x, f10x), history);
}

WorkingMemory ScanpathModel::update_memory(const WorkingMemory& mem) const {
  if (mem.size() == 0) fail(ErrorKind::kContract, "empty working memory");
  WorkingMemory out{mem.tokens, mem.kinds};
  for (const auto& layer : memory_layers_) out.tokens = layer(out.tokens);
  return out;
}

ad::Tensor ScanpathModel::aggregate(const WorkingMemory& mem) const {
  ad::Tensor q = query_;
  for (const auto& layer : decoder_layers_) q = layer(q, mem.tokens);
  return q;
}

ad::Tensor ScanpathModel::fixation_logits(const ad::Tensor& qp,
                                          const ad::Tensor& f10x_tokens) const {
  if (f10x_tokens.cols() != cfg_.feature_dim) {
    fail(ErrorKind::kShape, "F_10X width does not match MLP_H output");
  }
  ad::Tensor h = qp;
  for (std::size_t i = 0; i < mlp_h_.size(); ++i) {
    h = mlp_h_[i](h);
    if (i + 1 < mlp_h_.size()) h = ad::gelu(h);
  }
  return ad::matmul(f10x_tokens, ad::transpose(h));
}

Heatmap ScanpathModel::predict_fixation_heatmap(const ad::Tensor& qp,
                                                const FeatureGrid& f10x) const {
  const ad::Tensor tokens = ad::Tensor::constant({f10x.size(), f10x.dim},
                                                 {f10x.data.begin(), f10x.data.end()});
  const ad::Tensor p = ad::sigmoid(fixation_logits(qp, tokens));
  Heatmap h = Heatmap::zeros(f10x.mag, f10x.rows, f10x.cols, f10x.patch_px);
  std::copy(p.values().begin(), p.values().end(), h.values.begin());
  return h;
}

ad::Tensor ScanpathModel::predict_mag(const MagDescriptor& cm) const {
  std::vector<double> x(cm.counts.begin(), cm.counts.end());
  return ad::sigmoid(mag_head_(ad::Tensor::constant({1, kNumMags}, std::move(x))));
}

ScanpathModel::Output ScanpathModel::forward(const SlideTensors& slide,
                                             std::span<const Fixation> history) const {
  const WorkingMemory mem = update_memory(build_memory(slide, history));
  return {fixation_logits(aggregate(mem), slide.f10x_tokens),
          predict_mag(cumulative_mag_count(history))};
}

ScanpathModel::Step ScanpathModel::predict(const SlideTensors& slide,
                                           std::span<const Fixation> history) const {
  const Output out = forward(slide, history);
  const FeatureGrid& g = *slide.f10x;
  Step step{Heatmap::zeros(g.mag, g.rows, g.cols, g.patch_px), {}};
  const ad::Tensor p = ad::sigmoid(out.heat_logits);
  std::copy(p.values().begin(), p.values().end(), step.heat.values.begin());
  std::copy(out.mag.values().begin(), out.mag.values().end(), step.mag.begin());
  return step;
}

Checkpoint ScanpathModel::to_checkpoint(const nn::AdamState* adam,
                                        const nlohmann::json& extra) const {
  nlohmann::json meta{{"kind", "scanpath"}, {"tool_version", kToolVersion},
                      {"config", cfg_.to_json()}};
  for (const auto& [k, v] : extra.items()) meta[k] = v;
  Checkpoint ck;
  ck.metadata = meta.dump();
  store_params(ck, params_, adam);
  return ck;
}

ScanpathModel ScanpathModel::from_checkpoint(const Checkpoint& ck, nn::AdamState* adam) {
  try {
    const nlohmann::json meta = nlohmann::json::parse(ck.metadata);
    if (meta.at("kind") != "scanpath") fail(ErrorKind::kFormat, "not a scanpath checkpoint");
    ScanpathModel model(ScanpathModelConfig::from_json(meta.at("config")));
    restore_params(ck, model.params_, adam);
    return model;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("bad scanpath checkpoint metadata: ") + e.what());
  }
}

ad::Tensor focal_loss(const ad::Tensor& pred, std::span<const double> gt, double gamma,
                      double beta) {
  check_target(gt, pred.numel());
  const FocalMasks masks = focal_masks(gt, beta);
  const ad::Tensor p = ad::reshape(pred, {pred.numel(), 1});
  const ad::Tensor q = ad::add_scalar(ad::neg(p), 1.0);
  const ad::Tensor log_p = ad::log(ad::clamp(p, kLogClamp, 1.0 - kLogClamp));
  const ad::Tensor log_q = ad::log(ad::clamp(q, kLogClamp, 1.0 - kLogClamp));
  return focal_combine(masks, p, q, log_p, log_q, gamma);
}

ad::Tensor focal_loss_logits(const ad::Tensor& logits, std::span<const double> gt, double gamma,
                             double beta) {
  check_target(gt, logits.numel());
  const FocalMasks masks = focal_masks(gt, beta);
  const ad::Tensor z = ad::reshape(logits, {logits.numel(), 1});
  const ad::Tensor nz = ad::neg(z);
  return focal_combine(masks, ad::sigmoid(z), ad::sigmoid(nz), ad::log_sigmoid(z),
                       ad::log_sigmoid(nz), gamma);
}

ad::Tensor mag_loss(const ad::Tensor& pred, int gt_level, const MagWeights& weights) {
  if (pred.numel() != kNumMags) fail(ErrorKind::kShape, "magnification head must have 6 outputs");
  if (gt_level < 0 || gt_level >= static_cast<int>(kNumMags)) {
    fail(ErrorKind::kRange, "magnification label " + std::to_string(gt_level) + " outside 0..5");
  }
  const auto g = static_cast<std::size_t>(gt_level);
  const ad::Tensor row = ad::reshape(pred, {1, kNumMags});
  const ad::Tensor p = ad::div(ad::slice(row, 1, g, g + 1), ad::sum(row));
  return ad::sum(ad::scale(ad::log(ad::clamp(p, kLogClamp, 1.0)), -weights[g]));
}

MagWeights class_weights(const std::array<std::size_t, kNumMags>& counts) {
  std::size_t n = 0;
  for (std::size_t c : counts) n += c;
  MagWeights w{};
  for (std::size_t i = 0; i < kNumMags; ++i) {
    w[i] = counts[i] == 0 ? 0.0
                          : static_cast<double>(n) /
                                (static_cast<double>(kNumMags) * static_cast<double>(counts[i]));
  }
  return w;
}

ad::Tensor total_loss(const ad::Tensor& fix_loss, const ad::Tensor& mag_loss, double lambda_mag) {
  return ad::add(fix_loss, ad::scale(mag_loss, lambda_mag));
}

Heatmap fixation_target(const Fixation& next, const FeatureGrid& f10x, double k_sigma) {
  if (!f10x.extent().contains(next.x, next.y)) {
    fail(ErrorKind::kRange, "target fixation outside the feature grid");
  }
  const Fixation one[] = {next};
  return render_fixations(one, f10x.mag, f10x.rows, f10x.cols, f10x.patch_px, k_sigma);
}

ScanpathTrainResult train_scanpath(const std::vector<ScanpathSlide>& slides,
                                   const std::vector<Scanpath>& scanpaths,
                                   const ScanpathModelConfig& cfg,
                                   const ScanpathEpochHook& hook) {
  cfg.validate();
  std::map<std::string, std::size_t> slide_index;
  std::vector<SlideTensors> tensors;
  tensors.reserve(slides.size());
  for (std::size_t i = 0; i < slides.size(); ++i) {
    slide_index[slides[i].wsi_id] = i;
    tensors.emplace_back(slides[i].f2x, slides[i].f10x);
  }

  struct Example {
    std::size_t path;
    std::size_t prefix;
    std::size_t slide;
  };
  std::vector<Example> examples;
  std::array<std::size_t, kNumMags> counts{};
  for (std::size_t s = 0; s < scanpaths.size(); ++s) {
    const Scanpath& sp = scanpaths[s];
    const auto it = slide_index.find(sp.wsi_id);
    if (it == slide_index.end()) {
      fail(ErrorKind::kInvalidInput, "no feature grids for slide " + sp.wsi_id);
    }
    if (sp.fixations.size() < 2) {
      warn("skipping scanpath " + sp.wsi_id + "/" + sp.reader_id + ": fewer than 2 fixations");
      continue;
    }
    for (std::size_t k = 1; k < sp.fixations.size(); ++k) {
      examples.push_back({s, k, it->second});
      ++counts[static_cast<std::size_t>(sp.fixations[k].mag.index())];
    }
  }
  if (examples.empty()) fail(ErrorKind::kInvalidInput, "no scanpath training examples");

  MagWeights weights{};
  if (cfg.class_weights.empty()) {
    weights = class_weights(counts);
  } else {
    std::copy(cfg.class_weights.begin(), cfg.class_weights.end(), weights.begin());
  }

  ScanpathTrainResult res{ScanpathModel(cfg), {}, {}, weights, examples.size()};
  const nn::AdamConfig adam_cfg{.lr = cfg.lr};
  std::mt19937_64 rng(mix_seed(cfg.seed, 404));

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(examples.begin(), examples.end(), rng);
    ScanpathEpochLog log{epoch, 0.0, 0.0, 0.0};
    for (std::size_t start = 0; start < examples.size(); start += cfg.batch) {
      const std::size_t end = std::min(examples.size(), start + cfg.batch);
      const double inv = 1.0 / static_cast<double>(end - start);
      res.model.params().zero_grad();
      for (std::size_t e = start; e < end; ++e) {
        const Example& ex = examples[e];
        const Scanpath& sp = scanpaths[ex.path];
        const std::span<const Fixation> prefix(sp.fixations.data(), ex.prefix);
        const Fixation& next = sp.fixations[ex.prefix];
        const auto out = res.model.forward(tensors[ex.slide], prefix);
        const Heatmap y = fixation_target(next, slides[ex.slide].f10x, cfg.k_sigma);
        const ad::Tensor lf = focal_loss_logits(out.heat_logits, y.values, cfg.gamma, cfg.beta);
        const ad::Tensor lm = mag_loss(out.mag, next.mag.index(), weights);
        const ad::Tensor lt = total_loss(lf, lm, cfg.lambda_mag);
        log.fix += lf.item();
        log.mag += lm.item();
        log.total += lt.item();
        ad::backward(ad::scale(lt, inv));
      }
      nn::adam_step(res.model.params(), res.adam, adam_cfg);
    }
    const double n = static_cast<double>(examples.size());
    log.fix /= n;
    log.mag /= n;
    log.total /= n;
    if (!std::isfinite(log.total)) fail(ErrorKind::kNumeric, "non-finite scanpath loss");
    res.log.push_back(log);
    if (hook) hook(log, res.model, res.adam);
  }
  return res;
}

}  // namespace pathscan
