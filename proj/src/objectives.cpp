#include "fprl/objectives.hpp"

#include <cmath>
#include <string>

#include "fprl/error.hpp"

namespace fprl::objectives {

void LossWeights::validate() const {
  if (!(rec >= 0.0) || !(align >= 0.0) || !(cl >= 0.0) || !(pf >= 0.0) || !(aux_mask >= 0.0))
    throw ConfigError("loss weights must be non-negative");
  if (!(tau > 0.0)) throw ConfigError("temperature tau must be positive");
}

namespace {

void check_masked(const IndexList& masked, std::size_t n) {
  if (masked.empty()) throw DomainError("masked set is empty");
  for (std::size_t i : masked)
    if (i >= n) throw StructuralError("masked index " + std::to_string(i) + " out of range " + std::to_string(n));
}

}  // namespace

Tensor per_token_squared_error(const Tensor& x_hat, const Tensor& target) {
  if (x_hat.rank() != 2 || x_hat.shape() != target.shape())
    throw DimensionError("reconstruction " + shape_string(x_hat.shape()) + " vs target " +
                         shape_string(target.shape()));
  return sum(square(sub(x_hat, target)), 1);
}

Tensor loss_rec(const Tensor& x_hat, const Tensor& target, const IndexList& masked) {
  check_masked(masked, x_hat.dim(0));
  return mean_all(per_token_squared_error(gather_rows(x_hat, masked), gather_rows(target, masked)));
}

AlignTerms loss_align(const Tensor& z_cp, const Tensor& z_cf, const Tensor& z_t, const IndexList& masked,
                      double lambda_pf) {
  if (z_cp.rank() != 2 || z_cp.shape() != z_cf.shape() || z_cp.shape() != z_t.shape())
    throw DimensionError("alignment inputs must share one [N x d] shape");
  check_masked(masked, z_cp.dim(0));
  const std::size_t d = z_t.dim(1);
  for (std::size_t i : masked) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += z_t.at(i, j) * z_t.at(i, j);
    if (acc == 0.0) throw DegenerateInputError("teacher feature of masked token " + std::to_string(i) + " has zero norm");
  }
  const Tensor teacher = gather_rows(z_t.detached(), masked);
  const Tensor zp = gather_rows(z_cp, masked);
  const Tensor zf = gather_rows(z_cf, masked);
  AlignTerms out;
  out.pt = add_scalar(neg(mean_all(row_cosine(zp, teacher))), 1.0);
  out.ft = add_scalar(neg(mean_all(row_cosine(zf, teacher))), 1.0);
  out.pf = mean_all(sum(square(sub(zp, zf)), 1));
  out.align = add(add(out.pt, out.ft), scale(out.pf, lambda_pf));
  return out;
}

namespace {

Tensor stack(std::span<const Tensor> rows) {
  std::vector<Tensor> parts;
  parts.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.rank() != 1) throw DimensionError("embedding must be a vector, got " + shape_string(r.shape()));
    parts.push_back(reshape(r, {1, r.size()}));
  }
  return concat(parts, 0);
}

}  // namespace

Tensor loss_cl(std::span<const Tensor> p_c, std::span<const Tensor> p_p, std::span<const Tensor> p_f, double tau,
               bool include_positive, Similarity similarity) {
  if (!(tau > 0.0)) throw DomainError("temperature must be positive");
  const std::size_t B = p_c.size();
  if (B == 0 || p_p.size() != B || p_f.size() != B) throw StructuralError("contrastive batch is empty or ragged");

  // Keys interleaved: row 2b is p_p[b], row 2b+1 is p_f[b].
  std::vector<Tensor> keys;
  for (std::size_t b = 0; b < B; ++b) {
    keys.push_back(stop_gradient(p_p[b]));
    keys.push_back(stop_gradient(p_f[b]));
  }
  Tensor q = stack(p_c);
  Tensor k = stack(keys);
  if (similarity == Similarity::cosine) {
    q = l2_normalize_rows(q);
    k = l2_normalize_rows(k);
  }
  const Tensor logits = scale(matmul(q, transpose(k)), 1.0 / tau);  // [B x 2B]
  const std::size_t nk = 2 * B;

  Tensor total;
  for (std::size_t b = 0; b < B; ++b) {
    const Tensor row = reshape(gather_rows(logits, {b}), {nk});
    for (std::size_t pos : {2 * b, 2 * b + 1}) {
      IndexList denom;
      for (std::size_t j = 0; j < nk; ++j)
        if (include_positive || j != pos) denom.push_back(j);
      if (denom.empty()) throw StructuralError("contrastive term has no keys");
      Tensor term = sub(logsumexp(gather_rows(row, denom), 0), gather_rows(row, {pos}));
      total = total.empty() ? term : add(total, term);
    }
  }
  return scale(reshape(total, {}), 1.0 / static_cast<double>(B));
}

Tensor loss_aux_mask(const Tensor& P, const Tensor& token_errors, const IndexList& masked) {
  if (P.rank() != 1 || P.shape() != token_errors.shape())
    throw DimensionError("P " + shape_string(P.shape()) + " and errors " + shape_string(token_errors.shape()) +
                         " must be equal vectors");
  check_masked(masked, P.size());
  return neg(sum_all(mul(gather_rows(P, masked), gather_rows(stop_gradient(token_errors), masked))));
}

WeightedLoss loss_total(const LossComponents& parts, const LossWeights& w) {
  w.validate();
  WeightedLoss out;
  out.total = add(add(scale(parts.rec, w.rec), scale(parts.align, w.align)), scale(parts.cl, w.cl));
  if (!parts.aux_mask.empty()) out.total = add(out.total, scale(parts.aux_mask, w.aux_mask));
  auto value = [](const Tensor& t) { return t.empty() ? 0.0 : t.item(); };
  LossReport& r = out.report;
  r.rec = value(parts.rec);
  r.pt = value(parts.pt);
  r.ft = value(parts.ft);
  r.pf = value(parts.pf);
  r.align = value(parts.align);
  r.cl = value(parts.cl);
  r.aux_mask = value(parts.aux_mask);
  r.total = out.total.item();
  return out;
}

}  // namespace fprl::objectives
