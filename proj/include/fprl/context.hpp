#pragma once

// Cross-view masked feature completion (CVMFC) and attention-guided temporal
// prediction (AGTP) heads.

#include <string>

#include "fprl/params.hpp"

namespace fprl::context {

struct CvmfcConfig {
  std::size_t blocks = 1;
  std::size_t heads = 1;  // cross-attention heads
  bool tied = true;       // past and future paths share parameters

  void validate(std::size_t dim) const;
};

enum class Path { past, future };

// Parameter prefix of one block on one path.
std::string block_prefix(const std::string& prefix, const CvmfcConfig& config, Path path, std::size_t block);

void init_cvmfc(ParamStore& store, const std::string& prefix, std::size_t dim, const CvmfcConfig& config, Rng& rng);

struct CvmfcOutput {
  Tensor completed;  // [N x d]
  Tensor attention;  // [N x N] cross-attention of the last block
};

// Q = z_c W_q, K = z_adj W_k, V = z_adj W_v, z' = softmax(Q K^T / sqrt(d)) V,
// then pre-norm residual self-attention and FFN.
CvmfcOutput cvmfc_block(const Tensor& z_c_full, const Tensor& z_adj, const ParamStore& p, const std::string& prefix,
                        std::size_t heads);

// Blocks composed in sequence, each attending from the running stream to z_adj.
CvmfcOutput cvmfc(const Tensor& z_c_full, const Tensor& z_adj, const ParamStore& p, const std::string& prefix,
                  const CvmfcConfig& config, Path path);

// Two affine maps with a ReLU between them: "<prefix>.fc1", "<prefix>.fc2".
void init_projector(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t out_dim, Rng& rng);
Tensor project(const Tensor& v, const ParamStore& p, const std::string& prefix);

// Normalized column mean of a row-stochastic matrix -> [N].
Tensor pooling_weights(const Tensor& attention);

// phi_t(sum_j a_j z_adj[j]); uniform weights when attention_pool is false.
// The result never carries gradient.
Tensor agtp_pool(const Tensor& attention, const Tensor& z_adj, const ParamStore& p, const std::string& target_prefix,
                 bool attention_pool = true);

// phi_c(mean of the visible rows).
Tensor agtp_current(const Tensor& z_c_visible, const ParamStore& p, const std::string& query_prefix);

// target := m target + (1 - m) query for every parameter under target_prefix.
void ema_update(ParamStore& store, const std::string& target_prefix, const std::string& query_prefix, double m);

}  // namespace fprl::context
