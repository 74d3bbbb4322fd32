#pragma once

#include <span>
#include <vector>

namespace fprl::optim {

struct AdamWConfig {
  double lr = 1.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.05;
  double eps = 1e-8;
};

struct Moments {
  std::vector<double> m;
  std::vector<double> v;
};

// One AdamW update with decoupled weight decay:
//   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
// `step` is 1-based. A non-finite gradient aborts before anything changes.
void adamw_step(std::span<double> theta, std::span<const double> grad, Moments& state, std::size_t step,
                const AdamWConfig& config);

// Linear warmup from 0 to base_lr, then half-cosine decay to 0 at total_steps.
double lr_at(std::size_t step, double base_lr, std::size_t warmup_steps, std::size_t total_steps);

}  // namespace fprl::optim
