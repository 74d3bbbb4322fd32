#include "fprl/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "fprl/error.hpp"

namespace fprl::optim {

void adamw_step(std::span<double> theta, std::span<const double> grad, Moments& state, std::size_t step,
                const AdamWConfig& config) {
  const std::size_t n = theta.size();
  if (grad.size() != n) throw DimensionError("gradient size does not match parameter size");
  if (step == 0) throw DomainError("AdamW step index is 1-based");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(grad[i])) throw NumericError("non-finite gradient at element " + std::to_string(i));
  if (state.m.empty()) state.m.assign(n, 0.0);
  if (state.v.empty()) state.v.assign(n, 0.0);
  if (state.m.size() != n || state.v.size() != n) throw DimensionError("moment buffers do not match parameter size");

  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t i = 0; i < n; ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grad[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    theta[i] -= config.lr * (m_hat / (std::sqrt(v_hat) + config.eps) + config.weight_decay * theta[i]);
  }
}

double lr_at(std::size_t step, double base_lr, std::size_t warmup_steps, std::size_t total_steps) {
  if (warmup_steps >= total_steps) throw ConfigError("warmup_steps must be smaller than total_steps");
  if (step > total_steps) throw DomainError("step beyond total_steps");
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace fprl::optim
