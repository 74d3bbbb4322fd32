#pragma once

// Teacher-prior adaptive masking: fuse a saliency prior from teacher token
// norms with a learned attention head, then pick the visible tokens.

#include <string>

#include "fprl/ops.hpp"
#include "fprl/params.hpp"
#include "fprl/rng.hpp"
#include "fprl/ssm.hpp"

namespace fprl::tpam {

enum class SelectMode { topk, multinomial, random };

// Standardizes a vector to zero mean and unit (population) variance. Returns
// zeros when the variance is below 1e-12. Differentiable.
Tensor zscore(const Tensor& v);

// z-scored token norms of the teacher features [N x d] -> [N]. Never tracked.
Tensor saliency_prior(const Tensor& z_t);

// Parameters "<prefix>.attn.{q,k,v,o}" and "<prefix>.logit" (d -> 1).
void init_mask_head(ParamStore& store, const std::string& prefix, std::size_t dim, Rng& rng);

// z-scored per-token logits from self-attention over the full current view.
Tensor attention_logits(const Tensor& tokens, const ParamStore& p, const std::string& prefix, std::size_t heads);

// ceil(ratio * n), robust to representation error in ratio * n.
std::size_t masked_count(std::size_t n, double ratio);

struct MaskSelection {
  Tensor H;
  Tensor R;
  Tensor S;
  Tensor P;  // tracked through R when the head is trainable
  IndexList visible;  // ascending
  IndexList masked;   // ascending
  double alpha = 0.5;
  double ratio = 0.9;
};

// S = alpha H + (1 - alpha) R, P = softmax(S). topk keeps the K = N - ceil(ratio N)
// most probable tokens (lower index wins ties); multinomial draws K without
// replacement from P; random does the same from a constant score.
MaskSelection fuse_and_select(const Tensor& H, const Tensor& R, double alpha, double ratio, SelectMode mode, Rng& rng);

struct MaskedTokens {
  Tensor visible;          // [K x d]
  IndexList visible_index; // positions in the full sequence
  std::size_t total = 0;   // N
  ssm::Segments segments;  // visible tokens per frame, zero-length frames dropped
};

MaskedTokens apply_mask(const Tensor& tokens, const IndexList& visible, const ssm::Segments& frame_segments);

// Full [N x d] sequence: encoded visible rows at their positions, mask_token [d] elsewhere.
Tensor scatter_with_mask_token(const Tensor& encoded_visible, const MaskedTokens& recipe, const Tensor& mask_token);

}  // namespace fprl::tpam
