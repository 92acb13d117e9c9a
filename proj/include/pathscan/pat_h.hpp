#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pathscan/autodiff.hpp"
#include "pathscan/checkpoint.hpp"
#include "pathscan/features.hpp"
#include "pathscan/heatmap.hpp"
#include "pathscan/nn.hpp"
#include "pathscan/optim.hpp"
#include "pathscan/trajectory.hpp"

namespace pathscan {

struct HeatmapModelConfig {
  std::size_t dim = 32;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 64;
  std::vector<MagLevel> mags_trained{MagLevel::from_factor(2), MagLevel::from_factor(4),
                                     MagLevel::from_factor(10), MagLevel::from_factor(20)};
  double lr = 1e-3;
  std::size_t epochs = 100;
  std::uint64_t seed = 1;
  // Grids with more tokens than max_global_tokens attend within
  // window x window cell blocks instead of globally.
  std::size_t max_global_tokens = 1024;
  std::size_t window = 8;
  double k_sigma = kDefaultSigmaFraction;

  void validate() const;
  nlohmann::json to_json() const;
};

// Patch-token transformer encoder with learned positional embeddings and a
// linear per-patch scoring head. One instance per magnification level.
class HeatmapModel {
 public:
  HeatmapModel(const HeatmapModelConfig& cfg, MagLevel mag, std::size_t rows, std::size_t cols);

  MagLevel mag() const { return mag_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  const HeatmapModelConfig& config() const { return cfg_; }

  // z_L for a full grid; windowed attention applies above max_global_tokens.
  ad::Tensor encode(const FeatureGrid& grid) const;
  // Global-attention encoder over tokens [n, dim] with explicit positional
  // ids into the embedding table.
  ad::Tensor encode_tokens(const ad::Tensor& tokens, std::span<const std::size_t> pos_ids) const;
  // Per-patch scalar scores [n, 1].
  ad::Tensor scores(const ad::Tensor& z) const;
  // Scores reshaped to the grid and min-max normalized.
  Heatmap decode_heatmap(const ad::Tensor& z, double cell_px) const;
  Heatmap predict(const FeatureGrid& grid) const;
  // z_L packed as a feature grid with the input's geometry.
  FeatureGrid encoded_grid(const FeatureGrid& grid) const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  Checkpoint to_checkpoint(const nn::AdamState* adam = nullptr) const;
  static HeatmapModel from_checkpoint(const Checkpoint& ck, nn::AdamState* adam = nullptr);

 private:
  void check_grid(const FeatureGrid& grid) const;

  HeatmapModelConfig cfg_;
  MagLevel mag_;
  std::size_t rows_;
  std::size_t cols_;
  nn::ParamStore params_;
  ad::Tensor pos_;
  std::vector<nn::EncoderLayer> layers_;
  nn::Linear decoder_;
  std::optional<nn::WindowPlan> windows_;
};

// 1 - CC(pred, gt) over all elements, differentiable in pred. Throws
// kDegenerate when either input has zero variance.
ad::Tensor loss_cc(const ad::Tensor& pred, const ad::Tensor& gt);
double loss_cc(const Heatmap& pred, const Heatmap& gt);

// Ground-truth attention map at `mag` pooled over every scanpath's fixations
// at that level. Returns an all-zero map, with a warning, if there are none.
Heatmap fixations_to_heatmap(std::span<const Scanpath> scanpaths, MagLevel mag, std::size_t rows,
                             std::size_t cols, double cell_px,
                             double k_sigma = kDefaultSigmaFraction);

struct HeatmapExample {
  std::string wsi_id;
  FeatureGrid features;
  Heatmap target;
};

struct HeatmapTrainResult {
  HeatmapModel model;
  nn::AdamState adam;
  std::vector<double> epoch_loss;
};

// Called after every epoch with (epoch index, mean loss, model, optimizer).
using HeatmapEpochHook =
    std::function<void(std::size_t, double, const HeatmapModel&, const nn::AdamState&)>;

// Adam on 1 - CC, one slide per step, seeded shuffle per epoch. Examples with
// a constant target are skipped.
HeatmapTrainResult train_heatmap(const std::vector<HeatmapExample>& corpus, MagLevel mag,
                                 const HeatmapModelConfig& cfg,
                                 const HeatmapEpochHook& hook = nullptr);

}  // namespace pathscan
