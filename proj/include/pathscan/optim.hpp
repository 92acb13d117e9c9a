#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pathscan/nn.hpp"

namespace pathscan::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Round parameters and moments to float32 after each step so a float32
  // checkpoint captures the optimizer state exactly.
  bool float32_storage = true;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, AdamMoments> moments;
};

// One bias-corrected Adam update of a single array; `step` is 1-based.
void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& mom,
                 std::int64_t step, const AdamConfig& cfg);

// Advances the step counter and updates every parameter; parameters that
// never received a gradient see a zero gradient.
void adam_step(ParamStore& params, AdamState& state, const AdamConfig& cfg);

}  // namespace pathscan::nn
