#pragma once

// Pre-training losses and their weighted combination.

#include <span>

#include "fprl/ops.hpp"

namespace fprl::objectives {

enum class Similarity { cosine, dot };

struct LossWeights {
  double rec = 1.0;    // lambda_1
  double align = 0.8;  // lambda_2
  double cl = 1.0;     // lambda_3
  double pf = 20.0;    // lambda_pf
  double tau = 0.1;
  bool include_positive = false;
  double aux_mask = 0.0;
  Similarity similarity = Similarity::cosine;

  void validate() const;
};

// ||x_hat_i - x_i||^2 per row -> [N].
Tensor per_token_squared_error(const Tensor& x_hat, const Tensor& target);

// Mean over masked rows of the squared error.
Tensor loss_rec(const Tensor& x_hat, const Tensor& target, const IndexList& masked);

struct AlignTerms {
  Tensor pt;
  Tensor ft;
  Tensor pf;
  Tensor align;  // pt + ft + lambda_pf * pf
};

AlignTerms loss_align(const Tensor& z_cp, const Tensor& z_cf, const Tensor& z_t, const IndexList& masked,
                      double lambda_pf);

// InfoNCE over in-batch keys {p_p, p_f}. Per element, the past and future
// terms are summed; the result is the batch mean. Without include_positive
// each positive is left out of its own denominator.
Tensor loss_cl(std::span<const Tensor> p_c, std::span<const Tensor> p_p, std::span<const Tensor> p_f, double tau,
               bool include_positive, Similarity similarity = Similarity::cosine);

// -sum over masked i of P_i * err_i; err is treated as a constant.
Tensor loss_aux_mask(const Tensor& P, const Tensor& token_errors, const IndexList& masked);

struct LossReport {
  std::size_t step = 0;
  std::size_t masked = 0;  // |masked| per clip
  std::size_t batch = 0;
  double rec = 0.0;
  double pt = 0.0;
  double ft = 0.0;
  double pf = 0.0;
  double align = 0.0;
  double cl = 0.0;
  double aux_mask = 0.0;
  double total = 0.0;
};

struct LossComponents {
  Tensor rec;
  Tensor pt;
  Tensor ft;
  Tensor pf;
  Tensor align;
  Tensor cl;
  Tensor aux_mask;  // may be empty when the auxiliary term is off
};

struct WeightedLoss {
  Tensor total;
  LossReport report;
};

WeightedLoss loss_total(const LossComponents& parts, const LossWeights& weights);

}  // namespace fprl::objectives
