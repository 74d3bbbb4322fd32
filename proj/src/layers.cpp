#include "fprl/layers.hpp"

#include <cmath>
#include <vector>

#include "fprl/error.hpp"
#include "fprl/ops.hpp"

namespace fprl {

AttentionResult attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  const std::size_t d = q.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("head count " + std::to_string(heads) + " does not divide width " + std::to_string(d));
  }
  if (k.dim(1) != d || v.dim(1) != d || k.dim(0) != v.dim(0)) {
    throw DimensionError("attention operands " + shape_string(q.shape()) + ", " + shape_string(k.shape()) + ", " +
                         shape_string(v.shape()) + " do not fit");
  }
  const std::size_t hd = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  if (heads == 1) {
    Tensor a = softmax(scale(matmul(q, transpose(k)), inv_sqrt), 1);
    return {matmul(a, v), a};
  }
  std::vector<Tensor> outs;
  Tensor weight_sum;
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
    const Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
    const Tensor vh = slice_cols(v, h * hd, (h + 1) * hd);
    Tensor a = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1);
    outs.push_back(matmul(a, vh));
    weight_sum = h == 0 ? a : add(weight_sum, a);
  }
  return {concat(outs, 1), scale(weight_sum, 1.0 / static_cast<double>(heads))};
}

void init_self_attention(ParamStore& store, const std::string& prefix, std::size_t dim, Rng& rng) {
  for (const char* part : {".q", ".k", ".v", ".o"}) init_linear(store, prefix + part, dim, dim, rng);
}

Tensor self_attention(const Tensor& x, const ParamStore& p, const std::string& prefix, std::size_t heads) {
  const Tensor q = linear(x, p, prefix + ".q");
  const Tensor k = linear(x, p, prefix + ".k");
  const Tensor v = linear(x, p, prefix + ".v");
  return linear(attention(q, k, v, heads).out, p, prefix + ".o");
}

void init_ffn(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t hidden, Rng& rng) {
  init_linear(store, prefix + ".fc1", dim, hidden, rng);
  init_linear(store, prefix + ".fc2", hidden, dim, rng);
}

Tensor ffn(const Tensor& x, const ParamStore& p, const std::string& prefix) {
  return linear(relu(linear(x, p, prefix + ".fc1")), p, prefix + ".fc2");
}

void init_transformer_block(ParamStore& store, const std::string& prefix, std::size_t dim, Rng& rng) {
  init_layer_norm(store, prefix + ".ln1", dim);
  init_self_attention(store, prefix + ".attn", dim, rng);
  init_layer_norm(store, prefix + ".ln2", dim);
  init_ffn(store, prefix + ".ffn", dim, 2 * dim, rng);
}

Tensor transformer_block(const Tensor& x, const ParamStore& p, const std::string& prefix, std::size_t heads) {
  const Tensor h = add(x, self_attention(layer_norm(x, p, prefix + ".ln1"), p, prefix + ".attn", heads));
  return add(h, ffn(layer_norm(h, p, prefix + ".ln2"), p, prefix + ".ffn"));
}

}  // namespace fprl
