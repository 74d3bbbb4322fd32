#include "fprl/tpam.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fprl/error.hpp"
#include "fprl/layers.hpp"

namespace fprl::tpam {

Tensor zscore(const Tensor& v) {
  if (v.rank() != 1) throw DimensionError("zscore expects a vector, got " + shape_string(v.shape()));
  const std::size_t n = v.size();
  double mu = 0.0;
  for (double x : v.values()) mu += x;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (double x : v.values()) var += (x - mu) * (x - mu);
  var /= static_cast<double>(n);
  if (var < 1e-12) return Tensor::zeros(v.shape());
  Tensor centred = sub(v, mean_all(v));
  Tensor sd = sqrt(mean_all(square(centred)));
  return div(centred, sd);
}

Tensor saliency_prior(const Tensor& z_t) { return zscore(token_l2_norms(z_t.detached())).detached(); }

void init_mask_head(ParamStore& store, const std::string& prefix, std::size_t dim, Rng& rng) {
  init_self_attention(store, prefix + ".attn", dim, rng);
  init_linear(store, prefix + ".logit", dim, 1, rng);
}

Tensor attention_logits(const Tensor& tokens, const ParamStore& p, const std::string& prefix, std::size_t heads) {
  Tensor h = self_attention(tokens, p, prefix + ".attn", heads);
  Tensor logits = linear(h, p, prefix + ".logit");
  return zscore(reshape(logits, {tokens.dim(0)}));
}

std::size_t masked_count(std::size_t n, double ratio) {
  double raw = ratio * static_cast<double>(n);
  double nearest = std::round(raw);
  if (std::abs(raw - nearest) < 1e-9) return static_cast<std::size_t>(nearest);
  return static_cast<std::size_t>(std::ceil(raw));
}

namespace {

IndexList draw_without_replacement(std::span<const double> weights, std::size_t k, Rng& rng) {
  std::vector<double> w(weights.begin(), weights.end());
  IndexList picked;
  picked.reserve(k);
  for (std::size_t draw = 0; draw < k; ++draw) {
    double total = 0.0;
    for (double x : w) total += x;
    double u = rng.uniform() * total;
    std::size_t chosen = w.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] <= 0.0) continue;
      acc += w[i];
      chosen = i;
      if (u < acc) break;
    }
    if (chosen == w.size()) throw StructuralError("no positive sampling weight left");
    picked.push_back(chosen);
    w[chosen] = 0.0;
  }
  return picked;
}

}  // namespace

MaskSelection fuse_and_select(const Tensor& H, const Tensor& R, double alpha, double ratio, SelectMode mode, Rng& rng) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must lie in (0, 1)");
  if (H.rank() != 1 || H.shape() != R.shape())
    throw DimensionError("H " + shape_string(H.shape()) + " and R " + shape_string(R.shape()) + " must be equal vectors");
  const std::size_t n = H.size();
  const std::size_t m = masked_count(n, ratio);
  if (m >= n) throw ConfigError("mask ratio " + std::to_string(ratio) + " leaves no visible token out of " + std::to_string(n));
  if (m == 0) throw ConfigError("mask ratio " + std::to_string(ratio) + " masks no token out of " + std::to_string(n));
  const std::size_t k = n - m;

  MaskSelection sel;
  sel.alpha = alpha;
  sel.ratio = ratio;
  sel.H = H;
  sel.R = R;
  sel.S = mode == SelectMode::random ? Tensor::zeros({n}) : add(scale(H, alpha), scale(R, 1.0 - alpha));
  sel.P = softmax(sel.S, 0);

  if (mode == SelectMode::topk) {
    IndexList order(n);
    std::iota(order.begin(), order.end(), 0);
    auto P = sel.P.values();
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return P[a] > P[b]; });
    sel.visible.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  } else {
    sel.visible = draw_without_replacement(sel.P.values(), k, rng);
  }
  std::sort(sel.visible.begin(), sel.visible.end());
  std::vector<bool> is_visible(n, false);
  for (std::size_t i : sel.visible) is_visible[i] = true;
  for (std::size_t i = 0; i < n; ++i)
    if (!is_visible[i]) sel.masked.push_back(i);
  DecisionRecorder::note_indices(sel.visible);
  return sel;
}

MaskedTokens apply_mask(const Tensor& tokens, const IndexList& visible, const ssm::Segments& frame_segments) {
  const std::size_t n = tokens.dim(0);
  if (std::accumulate(frame_segments.begin(), frame_segments.end(), std::size_t{0}) != n)
    throw StructuralError("frame segments do not cover the token sequence");
  if (visible.empty()) throw StructuralError("no visible token");
  for (std::size_t i = 0; i < visible.size(); ++i) {
    if (visible[i] >= n) throw StructuralError("visible index out of range");
    if (i && visible[i] <= visible[i - 1]) throw StructuralError("visible indices must be strictly ascending");
  }
  MaskedTokens out;
  out.visible = gather_rows(tokens, visible);
  out.visible_index = visible;
  out.total = n;
  std::size_t begin = 0, cursor = 0;
  for (std::size_t len : frame_segments) {
    std::size_t count = 0;
    while (cursor < visible.size() && visible[cursor] < begin + len) {
      ++count;
      ++cursor;
    }
    if (count) out.segments.push_back(count);
    begin += len;
  }
  return out;
}

Tensor scatter_with_mask_token(const Tensor& encoded_visible, const MaskedTokens& recipe, const Tensor& mask_token) {
  if (encoded_visible.rank() != 2 || encoded_visible.dim(0) != recipe.visible_index.size())
    throw DimensionError("encoded visible tokens " + shape_string(encoded_visible.shape()) + " do not match the recipe");
  const std::size_t d = encoded_visible.dim(1);
  if (mask_token.size() != d) throw DimensionError("mask token width does not match the token width");
  Tensor base = broadcast_to(reshape(mask_token, {1, d}), {recipe.total, d});
  return scatter_rows(base, encoded_visible, recipe.visible_index);
}

}  // namespace fprl::tpam
