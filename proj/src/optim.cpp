#include "pathscan/optim.hpp"

#include <cmath>

#include "pathscan/error.hpp"

namespace pathscan::nn {

void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& mom,
                 std::int64_t step, const AdamConfig& cfg) {
  const std::size_t n = param.size();
  if (mom.m.size() != n) mom.m.assign(n, 0.0);
  if (mom.v.size() != n) mom.v.assign(n, 0.0);
  if (!grad.empty() && grad.size() != n) fail(ErrorKind::kShape, "adam: gradient size mismatch");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    double m = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g;
    double v = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g;
    double p = param[i] - cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
    if (cfg.float32_storage) {
      m = static_cast<float>(m);
      v = static_cast<float>(v);
      p = static_cast<float>(p);
    }
    mom.m[i] = m;
    mom.v[i] = v;
    param[i] = p;
  }
}

void adam_step(ParamStore& params, AdamState& state, const AdamConfig& cfg) {
  ++state.step;
  for (auto& [name, t] : params.entries()) {
    adam_update(t.mutable_values(), t.grad(), state.moments[name], state.step, cfg);
  }
}

}  // namespace pathscan::nn
