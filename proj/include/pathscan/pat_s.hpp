#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathscan/autodiff.hpp"
#include "pathscan/checkpoint.hpp"
#include "pathscan/features.hpp"
#include "pathscan/heatmap.hpp"
#include "pathscan/nn.hpp"
#include "pathscan/optim.hpp"
#include "pathscan/trajectory.hpp"

namespace pathscan {

using MagWeights = std::array<double, kNumMags>;

struct ScanpathModelConfig {
  std::size_t feature_dim = 32;  // D, width of the stage-1 encodings
  std::size_t model_dim = 32;    // C
  std::size_t enc_layers = 1;
  std::size_t dec_layers = 2;
  std::size_t heads = 4;
  std::size_t mlp_hidden = 0;  // 0 means 2C
  double lambda_mag = 1.0;
  double gamma = 2.0;
  double beta = 4.0;
  // Empty means derived from the training targets.
  std::vector<double> class_weights;
  double lr = 1e-3;
  std::size_t epochs = 20;
  std::size_t batch = 8;
  std::uint64_t seed = 1;
  std::size_t temporal_cap = 150;
  double k_sigma = kDefaultSigmaFraction;

  std::size_t hidden() const { return mlp_hidden == 0 ? 2 * model_dim : mlp_hidden; }
  void validate() const;
  nlohmann::json to_json() const;
  static ScanpathModelConfig from_json(const nlohmann::json& j);
};

enum class TokenKind { kWsi, kViewport };

struct WorkingMemory {
  ad::Tensor tokens;  // [alpha, C]
  std::vector<TokenKind> kinds;

  std::size_t size() const { return kinds.size(); }
};

struct MagDescriptor {
  std::array<int, kNumMags> counts{};

  int total() const;
};

MagDescriptor cumulative_mag_count(std::span<const Fixation> history);

// Per-slide constants shared by every prefix of every scanpath on the slide.
struct SlideTensors {
  const FeatureGrid* f2x = nullptr;
  const FeatureGrid* f10x = nullptr;
  WsiBounds bounds;
  ad::Tensor f2x_tokens;   // [N2, D]
  ad::Tensor f10x_tokens;  // [N10, D]

  SlideTensors(const FeatureGrid& f2x, const FeatureGrid& f10x);
};

class ScanpathModel {
 public:
  explicit ScanpathModel(const ScanpathModelConfig& cfg);

  const ScanpathModelConfig& config() const { return cfg_; }

  WorkingMemory build_memory(const SlideTensors& slide, std::span<const Fixation> history) const;
  WorkingMemory build_memory(const FeatureGrid& f2x, std::span<const Fixation> history,
                             const FeatureGrid& f10x) const;
  WorkingMemory update_memory(const WorkingMemory& mem) const;
  // Q' [1, C].
  ad::Tensor aggregate(const WorkingMemory& mem) const;
  // <F_10X(cell), MLP_H(Q')> per cell, [N10, 1].
  ad::Tensor fixation_logits(const ad::Tensor& qp, const ad::Tensor& f10x_tokens) const;
  Heatmap predict_fixation_heatmap(const ad::Tensor& qp, const FeatureGrid& f10x) const;
  // sigmoid(W CM + b), [1, 6].
  ad::Tensor predict_mag(const MagDescriptor& cm) const;

  struct Output {
    ad::Tensor heat_logits;  // [N10, 1]
    ad::Tensor mag;          // [1, 6]
  };
  Output forward(const SlideTensors& slide, std::span<const Fixation> history) const;

  struct Step {
    Heatmap heat;  // sigmoid probabilities on the F_10X grid
    std::array<double, kNumMags> mag;
  };
  Step predict(const SlideTensors& slide, std::span<const Fixation> history) const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  Checkpoint to_checkpoint(const nn::AdamState* adam = nullptr,
                           const nlohmann::json& extra = nlohmann::json::object()) const;
  static ScanpathModel from_checkpoint(const Checkpoint& ck, nn::AdamState* adam = nullptr);

 private:
  ScanpathModelConfig cfg_;
  nn::ParamStore params_;
  nn::Linear in_proj_;
  ad::Tensor scale_emb_;
  ad::Tensor time_emb_;
  ad::Tensor mag_emb_;
  std::vector<nn::EncoderLayer> memory_layers_;
  ad::Tensor query_;
  std::vector<nn::CrossAttentionLayer> decoder_layers_;
  std::vector<nn::Linear> mlp_h_;
  nn::Linear mag_head_;
};

// Pixel-wise focal loss averaged over all cells, log arguments clamped to
// [1e-7, 1 - 1e-7]. `gt` must contain at least one cell equal to 1.
ad::Tensor focal_loss(const ad::Tensor& pred, std::span<const double> gt, double gamma = 2.0,
                      double beta = 4.0);
// The same loss evaluated from logits through log-sigmoid.
ad::Tensor focal_loss_logits(const ad::Tensor& logits, std::span<const double> gt,
                             double gamma = 2.0, double beta = 4.0);
// -w_gt log(p_gt) with p the activations divided by their sum.
ad::Tensor mag_loss(const ad::Tensor& pred, int gt_level, const MagWeights& weights);
// w_c = N / (C N_c); classes with no samples get weight 0.
MagWeights class_weights(const std::array<std::size_t, kNumMags>& counts);
ad::Tensor total_loss(const ad::Tensor& fix_loss, const ad::Tensor& mag_loss, double lambda_mag);

// Next-fixation target on the F_10X grid, max-normalized.
Heatmap fixation_target(const Fixation& next, const FeatureGrid& f10x, double k_sigma);

struct ScanpathSlide {
  std::string wsi_id;
  FeatureGrid f2x;
  FeatureGrid f10x;
};

struct ScanpathEpochLog {
  std::size_t epoch = 0;
  double fix = 0.0;
  double mag = 0.0;
  double total = 0.0;
};

struct ScanpathTrainResult {
  ScanpathModel model;
  nn::AdamState adam;
  std::vector<ScanpathEpochLog> log;
  MagWeights class_weights{};
  std::size_t examples = 0;
};

using ScanpathEpochHook = std::function<void(const ScanpathEpochLog&, const ScanpathModel&,
                                             const nn::AdamState&)>;

// Behavior cloning: every prefix of length k >= 1 predicts fixation k.
// Scanpaths shorter than 2 are skipped with a warning.
ScanpathTrainResult train_scanpath(const std::vector<ScanpathSlide>& slides,
                                   const std::vector<Scanpath>& scanpaths,
                                   const ScanpathModelConfig& cfg,
                                   const ScanpathEpochHook& hook = nullptr);

}  // namespace pathscan
