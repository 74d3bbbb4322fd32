#include "fprl/context.hpp"

#include <algorithm>
#include <cmath>

#include "fprl/error.hpp"
#include "fprl/layers.hpp"
#include "fprl/ops.hpp"

namespace fprl::context {

void CvmfcConfig::validate(std::size_t dim) const {
  if (blocks == 0) throw ConfigError("cvmfc_blocks must be at least 1");
  if (heads == 0 || dim % heads != 0) throw ConfigError("cvmfc_heads must divide embed_dim");
}

std::string block_prefix(const std::string& prefix, const CvmfcConfig& config, Path path, std::size_t block) {
  std::string base = prefix;
  if (!config.tied) base += path == Path::past ? ".past" : ".future";
  return base + ".block" + std::to_string(block);
}

namespace {

void init_block(ParamStore& store, const std::string& prefix, std::size_t dim, Rng& rng) {
  for (const char* part : {".q", ".k", ".v"}) init_linear(store, prefix + part, dim, dim, rng, false);
  init_transformer_block(store, prefix + ".refine", dim, rng);
}

}  // namespace

void init_cvmfc(ParamStore& store, const std::string& prefix, std::size_t dim, const CvmfcConfig& config, Rng& rng) {
  config.validate(dim);
  for (Path path : {Path::past, Path::future}) {
    if (config.tied && path == Path::future) break;
    for (std::size_t b = 0; b < config.blocks; ++b) init_block(store, block_prefix(prefix, config, path, b), dim, rng);
  }
}

CvmfcOutput cvmfc_block(const Tensor& z_c_full, const Tensor& z_adj, const ParamStore& p, const std::string& prefix,
                        std::size_t heads) {
  if (z_c_full.rank() != 2 || z_adj.rank() != 2 || z_c_full.dim(0) != z_adj.dim(0))
    throw StructuralError("cross-view inputs " + shape_string(z_c_full.shape()) + " and " +
                          shape_string(z_adj.shape()) + " must have the same row count");
  const Tensor q = linear(z_c_full, p, prefix + ".q");
  const Tensor k = linear(z_adj, p, prefix + ".k");
  const Tensor v = linear(z_adj, p, prefix + ".v");
  AttentionResult cross = attention(q, k, v, heads);
  return {transformer_block(cross.out, p, prefix + ".refine", 1), cross.weights};
}

CvmfcOutput cvmfc(const Tensor& z_c_full, const Tensor& z_adj, const ParamStore& p, const std::string& prefix,
                  const CvmfcConfig& config, Path path) {
  config.validate(z_c_full.dim(1));
  CvmfcOutput out{z_c_full, Tensor()};
  for (std::size_t b = 0; b < config.blocks; ++b)
    out = cvmfc_block(out.completed, z_adj, p, block_prefix(prefix, config, path, b), config.heads);
  return out;
}

void init_projector(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t out_dim, Rng& rng) {
  init_linear(store, prefix + ".fc1", dim, dim, rng);
  init_linear(store, prefix + ".fc2", dim, out_dim, rng);
}

Tensor project(const Tensor& v, const ParamStore& p, const std::string& prefix) {
  Tensor row = v.rank() == 1 ? reshape(v, {1, v.size()}) : v;
  Tensor out = linear(relu(linear(row, p, prefix + ".fc1")), p, prefix + ".fc2");
  return reshape(out, {out.size()});
}

Tensor pooling_weights(const Tensor& attention) {
  if (attention.rank() != 2) throw DimensionError("attention must be a matrix");
  const std::size_t rows = attention.dim(0), cols = attention.dim(1);
  std::vector<double> u(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) u[j] += attention.at(i, j);
  double total = 0.0;
  for (auto& x : u) {
    x /= static_cast<double>(rows);
    total += x;
  }
  if (!(total > 0.0)) throw StructuralError("attention column mean has non-positive mass");
  for (auto& x : u) x /= total;
  return Tensor::vector(std::move(u));
}

Tensor agtp_pool(const Tensor& attention, const Tensor& z_adj, const ParamStore& p, const std::string& target_prefix,
                 bool attention_pool) {
  const std::size_t n = z_adj.dim(0);
  if (attention.rank() != 2 || attention.dim(1) != n)
    throw DimensionError("attention " + shape_string(attention.shape()) + " does not match " +
                         shape_string(z_adj.shape()));
  Tensor a = attention_pool ? pooling_weights(attention.detached()) : Tensor::full({n}, 1.0 / static_cast<double>(n));
  Tensor pooled = matmul(reshape(a, {1, n}), z_adj.detached());
  ParamStore frozen;
  for (const auto& e : p.entries())
    if (e.name.starts_with(target_prefix + ".")) frozen.add(e.name, e.value.detached());
  return stop_gradient(project(pooled, frozen, target_prefix));
}

Tensor agtp_current(const Tensor& z_c_visible, const ParamStore& p, const std::string& query_prefix) {
  if (z_c_visible.rank() != 2 || z_c_visible.dim(0) == 0) throw StructuralError("no visible tokens to pool");
  return project(mean(z_c_visible, 0), p, query_prefix);
}

void ema_update(ParamStore& store, const std::string& target_prefix, const std::string& query_prefix, double m) {
  if (!(m >= 0.0 && m < 1.0)) throw DomainError("EMA momentum must lie in [0, 1)");
  const std::string tp = target_prefix + ".";
  std::size_t updated = 0;
  for (const auto& name : store.names()) {
    if (!name.starts_with(tp)) continue;
    const std::string qname = query_prefix + "." + name.substr(tp.size());
    if (!store.contains(qname)) throw StructuralError("query head has no parameter " + qname);
    const Tensor& t = store.at(name);
    const Tensor& q = store.at(qname);
    if (t.shape() != q.shape())
      throw StructuralError("EMA shape mismatch for " + name + ": " + shape_string(t.shape()) + " vs " +
                            shape_string(q.shape()));
    std::vector<double> out(t.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = std::clamp(m * t[i] + (1.0 - m) * q[i], std::min(t[i], q[i]), std::max(t[i], q[i]));
    store.set(name, Tensor(t.shape(), std::move(out)));
    ++updated;
  }
  std::size_t query_count = 0;
  for (const auto& name : store.names()) query_count += name.starts_with(query_prefix + ".");
  if (updated == 0 || updated != query_count) throw StructuralError("target and query heads differ in structure");
}

}  // namespace fprl::context
