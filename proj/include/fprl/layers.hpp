#pragma once

// Attention and feed-forward building blocks shared by the mask head,
// the cross-view completion block and the reconstruction decoder.

#include <string>

#include "fprl/params.hpp"

namespace fprl {

struct AttentionResult {
  Tensor out;      // [Nq x d]
  Tensor weights;  // [Nq x Nk], averaged over heads; rows sum to 1
};

// Scaled dot-product attention on already-projected q [Nq x d], k, v [Nk x d].
// Heads split the feature axis; scores use 1/sqrt(d / heads).
AttentionResult attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

void init_self_attention(ParamStore& store, const std::string& prefix, std::size_t dim, Rng& rng);
// Projections "<prefix>.q/.k/.v" then output projection "<prefix>.o".
Tensor self_attention(const Tensor& x, const ParamStore& p, const std::string& prefix, std::size_t heads);

void init_ffn(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t hidden, Rng& rng);
// relu(x W1 + b1) W2 + b2
Tensor ffn(const Tensor& x, const ParamStore& p, const std::string& prefix);

void init_transformer_block(ParamStore& store, const std::string& prefix, std::size_t dim, Rng& rng);
// Pre-norm residual self-attention followed by pre-norm residual FFN (hidden 2d).
Tensor transformer_block(const Tensor& x, const ParamStore& p, const std::string& prefix, std::size_t heads);

}  // namespace fprl
