#include "fprl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

#include "fprl/error.hpp"
#include "fprl/kernels.hpp"

namespace fprl {

namespace {

thread_local DecisionRecorder* g_recorder = nullptr;

using Grads = std::span<std::vector<double>* const>;
using GradOut = std::span<const double>;

Tensor make(Shape shape, std::vector<double> values, const char* op) {
  check_finite(values, op);
  return Tensor(std::move(shape), std::move(values));
}

// out linear index -> input linear index for a broadcast input.
std::vector<std::size_t> broadcast_map(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> in_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t axis_in = in.size() - 1 - k;
    const std::size_t axis_out = rank - 1 - k;
    in_stride[axis_out] = in[axis_in] == 1 ? 0 : stride;
    stride *= in[axis_in];
  }
  const std::size_t n = numel(out);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = offset;
    for (std::size_t axis = rank; axis-- > 0;) {
      ++idx[axis];
      offset += in_stride[axis];
      if (idx[axis] < out[axis]) break;
      offset -= in_stride[axis] * idx[axis];
      idx[axis] = 0;
    }
  }
  return map;
}

struct BroadcastPlan {
  Shape out;
  bool same = true;
  std::vector<std::size_t> ia, ib;
  std::size_t a_index(std::size_t i) const { return same ? i : ia[i]; }
  std::size_t b_index(std::size_t i) const { return same ? i : ib[i]; }
};

std::shared_ptr<BroadcastPlan> plan_binary(const Tensor& a, const Tensor& b) {
  auto p = std::make_shared<BroadcastPlan>();
  if (a.shape() == b.shape()) {
    p->out = a.shape();
    return p;
  }
  p->out = broadcast_shapes(a.shape(), b.shape());
  p->same = false;
  p->ia = broadcast_map(a.shape(), p->out);
  p->ib = broadcast_map(b.shape(), p->out);
  return p;
}

// Reduction geometry: [outer, len, inner] around `axis`.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t k = 0; k < axis; ++k) s.outer *= shape[k];
  s.len = shape[axis];
  for (std::size_t k = axis + 1; k < shape.size(); ++k) s.inner *= shape[k];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t k = 0; k < shape.size(); ++k)
    if (k != axis) out.push_back(shape[k]);
  return out;
}

void require_matrix(const Tensor& x, const char* op) {
  if (x.rank() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(x.shape()));
}

std::vector<double> transposed(const double* x, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = x[i * cols + j];
  return t;
}

template <class Forward, class Derivative>
Tensor unary(const Tensor& x, const char* op, Forward f, Derivative dfdx) {
  std::vector<double> out(x.size());
  const double* xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  Tensor y = make(x.shape(), std::move(out), op);
  Tensor yv = y;
  return Tape::record(y, {&x}, [x, yv, dfdx](GradOut g, Grads gi) {
    auto& gx = *gi[0];
    const double* xd = x.data();
    const double* yd = yv.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xd[i], yd[i]);
  });
}

}  // namespace

void check_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

// ---------------------------------------------------------------------------
// Decision recording

DecisionRecorder::DecisionRecorder() : previous_(g_recorder) { g_recorder = this; }
DecisionRecorder::~DecisionRecorder() { g_recorder = previous_; }

void DecisionRecorder::note(std::uint8_t value) {
  if (g_recorder) g_recorder->log_.push_back(value);
}

void DecisionRecorder::note_indices(std::span<const std::size_t> indices) {
  if (!g_recorder) return;
  for (auto i : indices) {
    for (int b = 0; b < 4; ++b) g_recorder->log_.push_back(static_cast<std::uint8_t>(i >> (8 * b)));
  }
}

bool DecisionRecorder::active() noexcept { return g_recorder != nullptr; }

// ---------------------------------------------------------------------------
// Broadcasting elementwise ops

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    out[rank - 1 - k] = std::max(da, db);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  auto p = plan_binary(a, b);
  std::vector<double> out(numel(p->out));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[p->a_index(i)] + b[p->b_index(i)];
  return Tape::record(make(p->out, std::move(out), "add"), {&a, &b}, [p](GradOut g, Grads gi) {
    if (gi[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[p->a_index(i)] += g[i];
    if (gi[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[p->b_index(i)] += g[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto p = plan_binary(a, b);
  std::vector<double> out(numel(p->out));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[p->a_index(i)] - b[p->b_index(i)];
  return Tape::record(make(p->out, std::move(out), "sub"), {&a, &b}, [p](GradOut g, Grads gi) {
    if (gi[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[p->a_index(i)] += g[i];
    if (gi[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[p->b_index(i)] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto p = plan_binary(a, b);
  std::vector<double> out(numel(p->out));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[p->a_index(i)] * b[p->b_index(i)];
  return Tape::record(make(p->out, std::move(out), "mul"), {&a, &b}, [p, a, b](GradOut g, Grads gi) {
    if (gi[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[p->a_index(i)] += g[i] * b[p->b_index(i)];
    if (gi[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[p->b_index(i)] += g[i] * a[p->a_index(i)];
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  auto p = plan_binary(a, b);
  std::vector<double> out(numel(p->out));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[p->a_index(i)] / b[p->b_index(i)];
  return Tape::record(make(p->out, std::move(out), "div"), {&a, &b}, [p, a, b](GradOut g, Grads gi) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double bv = b[p->b_index(i)];
      if (gi[0]) (*gi[0])[p->a_index(i)] += g[i] / bv;
      if (gi[1]) (*gi[1])[p->b_index(i)] -= g[i] * a[p->a_index(i)] / (bv * bv);
    }
  });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shapes(x.shape(), shape) != shape) {
    throw DimensionError("cannot broadcast " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  auto map = std::make_shared<std::vector<std::size_t>>(broadcast_map(x.shape(), shape));
  std::vector<double> out(map->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[(*map)[i]];
  return Tape::record(Tensor(shape, std::move(out)), {&x}, [map](GradOut g, Grads gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[(*map)[i]] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Unary

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double factor) {
  return unary(x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(x, "add_scalar", [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.values()) {
    if (!(v > 0.0)) throw DomainError("log of a non-positive value");
  }
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  for (double v : x.values()) {
    if (v < 0.0) throw DomainError("sqrt of a negative value");
  }
  return unary(x, "sqrt", [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor relu(const Tensor& x) {
  if (DecisionRecorder::active()) {
    for (double v : x.values()) DecisionRecorder::note(v > 0.0 ? 1 : 0);
  }
  return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, "softplus",
      [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](double v, double) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

Tensor square(const Tensor& x) {
  return unary(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// ---------------------------------------------------------------------------
// Linear algebra and shape

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  kernels::active().gemm(m, k, n, a.data(), b.data(), out.data());
  return Tape::record(make({m, n}, std::move(out), "matmul"), {&a, &b}, [a, b, m, k, n](GradOut g, Grads gi) {
    const auto& kt = kernels::active();
    if (gi[0]) {
      auto bt = transposed(b.data(), k, n);
      std::vector<double> ga(m * k);
      kt.gemm(m, n, k, g.data(), bt.data(), ga.data());
      for (std::size_t i = 0; i < ga.size(); ++i) (*gi[0])[i] += ga[i];
    }
    if (gi[1]) {
      auto at = transposed(a.data(), m, k);
      std::vector<double> gb(k * n);
      kt.gemm(k, m, n, at.data(), g.data(), gb.data());
      for (std::size_t i = 0; i < gb.size(); ++i) (*gi[1])[i] += gb[i];
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_matrix(x, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  return Tape::record(Tensor({c, r}, transposed(x.data(), r, c)), {&x}, [r, c](GradOut g, Grads gi) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*gi[0])[i * c + j] += g[j * r + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("cannot reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  return Tape::record(Tensor(std::move(shape), x.to_vector()), {&x}, [](GradOut g, Grads gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw StructuralError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == first.size();
    for (std::size_t k = 0; ok && k < first.size(); ++k) ok = k == axis || p.shape()[k] == first[k];
    if (!ok) throw DimensionError("concat mismatch: " + shape_string(first) + " vs " + shape_string(p.shape()));
    out_shape[axis] += p.shape()[axis];
  }
  AxisSplit s = split_axis(out_shape, axis);
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[axis] * s.inner);
  const std::size_t row = s.len * s.inner;
  std::vector<double> out(numel(out_shape));
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double* src = parts[k].data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy(src + o * widths[k], src + (o + 1) * widths[k], out.begin() + o * row + col);
    col += widths[k];
  }
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  const std::size_t outer = s.outer;
  return Tape::record(Tensor(out_shape, std::move(out)), inputs, [widths, row, outer](GradOut g, Grads gi) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (gi[k]) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < widths[k]; ++j) (*gi[k])[o * widths[k] + j] += g[o * row + col + j];
      }
      col += widths[k];
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_cols");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (begin >= end || end > cols) throw DimensionError("slice_cols range out of bounds for " + shape_string(x.shape()));
  const std::size_t w = end - begin;
  std::vector<double> out(rows * w);
  for (std::size_t i = 0; i < rows; ++i)
    std::copy(x.data() + i * cols + begin, x.data() + i * cols + end, out.begin() + i * w);
  return Tape::record(Tensor({rows, w}, std::move(out)), {&x}, [rows, cols, begin, w](GradOut g, Grads gi) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < w; ++j) (*gi[0])[i * cols + begin + j] += g[i * w + j];
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += x[(o * s.len + l) * s.inner + i];
  return Tape::record(make(drop_axis(x.shape(), axis), std::move(out), "sum"), {&x}, [s](GradOut g, Grads gi) {
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t i = 0; i < s.inner; ++i) (*gi[0])[(o * s.len + l) * s.inner + i] += g[o * s.inner + i];
  });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  return scale(sum(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return Tape::record(make({}, {acc}, "sum_all"), {&x}, [](GradOut g, Grads gi) {
    for (auto& v : *gi[0]) v += g[0];
  });
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.size())); }

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t l) { return (o * s.len + l) * s.inner + i; };
      double mx = x[at(0)];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, x[at(l)]);
      double total = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        out[at(l)] = std::exp(x[at(l)] - mx);
        total += out[at(l)];
      }
      for (std::size_t l = 0; l < s.len; ++l) out[at(l)] /= total;
    }
  }
  Tensor y = make(x.shape(), std::move(out), "softmax");
  Tensor yv = y;
  return Tape::record(y, {&x}, [s, yv](GradOut g, Grads gi) {
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        auto at = [&](std::size_t l) { return (o * s.len + l) * s.inner + i; };
        double dot = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) dot += g[at(l)] * yv[at(l)];
        for (std::size_t l = 0; l < s.len; ++l) (*gi[0])[at(l)] += yv[at(l)] * (g[at(l)] - dot);
      }
    }
  });
}

Tensor logsumexp(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<double> out(s.outer * s.inner);
  auto weights = std::make_shared<std::vector<double>>(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t l) { return (o * s.len + l) * s.inner + i; };
      double mx = x[at(0)];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, x[at(l)]);
      double total = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        (*weights)[at(l)] = std::exp(x[at(l)] - mx);
        total += (*weights)[at(l)];
      }
      for (std::size_t l = 0; l < s.len; ++l) (*weights)[at(l)] /= total;
      out[o * s.inner + i] = mx + std::log(total);
    }
  }
  return Tape::record(make(drop_axis(x.shape(), axis), std::move(out), "logsumexp"), {&x},
                      [s, weights](GradOut g, Grads gi) {
                        for (std::size_t o = 0; o < s.outer; ++o)
                          for (std::size_t l = 0; l < s.len; ++l)
                            for (std::size_t i = 0; i < s.inner; ++i) {
                              const std::size_t at = (o * s.len + l) * s.inner + i;
                              (*gi[0])[at] += g[o * s.inner + i] * (*weights)[at];
                            }
                      });
}

// ---------------------------------------------------------------------------
// Normalization

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm of a scalar");
  const std::size_t d = x.shape().back();
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm affine params " + shape_string(gamma.shape()) + "/" +
                         shape_string(beta.shape()) + " do not match " + shape_string(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double iv = 1.0 / std::sqrt(var + eps);
    (*inv)[r] = iv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * iv;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gamma[j] + beta[j];
    }
  }
  return Tape::record(make(x.shape(), std::move(out), "layer_norm"), {&x, &gamma, &beta},
                      [xhat, inv, gamma, rows, d](GradOut g, Grads gi) {
                        std::vector<double> gh(d);
                        for (std::size_t r = 0; r < rows; ++r) {
                          const double* hr = xhat->data() + r * d;
                          const double* gr = g.data() + r * d;
                          if (gi[1])
                            for (std::size_t j = 0; j < d; ++j) (*gi[1])[j] += gr[j] * hr[j];
                          if (gi[2])
                            for (std::size_t j = 0; j < d; ++j) (*gi[2])[j] += gr[j];
                          if (!gi[0]) continue;
                          double m1 = 0.0, m2 = 0.0;
                          for (std::size_t j = 0; j < d; ++j) {
                            gh[j] = gr[j] * gamma[j];
                            m1 += gh[j];
                            m2 += gh[j] * hr[j];
                          }
                          m1 /= static_cast<double>(d);
                          m2 /= static_cast<double>(d);
                          for (std::size_t j = 0; j < d; ++j)
                            (*gi[0])[r * d + j] += (*inv)[r] * (gh[j] - m1 - hr[j] * m2);
                        }
                      });
}

// ---------------------------------------------------------------------------
// Row indexing

Tensor gather_rows(const Tensor& x, const IndexList& rows) {
  if (x.rank() == 0) throw DimensionError("gather_rows on a scalar");
  if (rows.empty()) throw StructuralError("gather_rows with an empty index list");
  const std::size_t n = x.dim(0), w = x.size() / n;
  for (auto r : rows) {
    if (r >= n) throw StructuralError("gather_rows index " + std::to_string(r) + " out of range " + std::to_string(n));
  }
  Shape shape = x.shape();
  shape[0] = rows.size();
  std::vector<double> out(rows.size() * w);
  for (std::size_t k = 0; k < rows.size(); ++k)
    std::copy(x.data() + rows[k] * w, x.data() + (rows[k] + 1) * w, out.begin() + k * w);
  return Tape::record(Tensor(shape, std::move(out)), {&x}, [rows, w](GradOut g, Grads gi) {
    for (std::size_t k = 0; k < rows.size(); ++k)
      for (std::size_t j = 0; j < w; ++j) (*gi[0])[rows[k] * w + j] += g[k * w + j];
  });
}

Tensor scatter_rows(const Tensor& base, const Tensor& src, const IndexList& rows) {
  if (base.rank() == 0 || src.rank() != base.rank()) {
    throw DimensionError("scatter_rows rank mismatch: " + shape_string(base.shape()) + " vs " +
                         shape_string(src.shape()));
  }
  const std::size_t n = base.dim(0), w = base.size() / n;
  if (src.dim(0) != rows.size() || src.size() / src.dim(0) != w) {
    throw DimensionError("scatter_rows source " + shape_string(src.shape()) + " does not fit " +
                         std::to_string(rows.size()) + " rows of " + shape_string(base.shape()));
  }
  std::vector<char> hit(n, 0);
  for (auto r : rows) {
    if (r >= n) throw StructuralError("scatter_rows index " + std::to_string(r) + " out of range");
    if (hit[r]) throw StructuralError("scatter_rows index " + std::to_string(r) + " repeated");
    hit[r] = 1;
  }
  std::vector<double> out = base.to_vector();
  for (std::size_t k = 0; k < rows.size(); ++k)
    std::copy(src.data() + k * w, src.data() + (k + 1) * w, out.begin() + rows[k] * w);
  return Tape::record(Tensor(base.shape(), std::move(out)), {&base, &src}, [rows, hit, w](GradOut g, Grads gi) {
    if (gi[0]) {
      for (std::size_t i = 0; i < hit.size(); ++i)
        if (!hit[i])
          for (std::size_t j = 0; j < w; ++j) (*gi[0])[i * w + j] += g[i * w + j];
    }
    if (gi[1]) {
      for (std::size_t k = 0; k < rows.size(); ++k)
        for (std::size_t j = 0; j < w; ++j) (*gi[1])[k * w + j] += g[rows[k] * w + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Norms and similarity

Tensor token_l2_norms(const Tensor& z) {
  require_matrix(z, "token_l2_norms");
  const std::size_t n = z.dim(0), d = z.dim(1);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += z.at(i, j) * z.at(i, j);
    out[i] = std::sqrt(acc);
  }
  Tensor y = make({n}, std::move(out), "token_l2_norms");
  Tensor yv = y;
  return Tape::record(y, {&z}, [z, yv, n, d](GradOut g, Grads gi) {
    for (std::size_t i = 0; i < n; ++i) {
      if (yv[i] == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) (*gi[0])[i * d + j] += g[i] * z.at(i, j) / yv[i];
    }
  });
}

namespace {

// Cosine of rows a_i, b_i plus the partials needed for backward.
struct CosRow {
  double cos, na, nb;
};

CosRow cos_row(const double* a, const double* b, std::size_t d) {
  double dot = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    dot += a[j] * b[j];
    aa += a[j] * a[j];
    bb += b[j] * b[j];
  }
  if (aa == 0.0 || bb == 0.0) throw DegenerateInputError("cosine similarity of a zero-norm vector");
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  return {std::clamp(dot / (na * nb), -1.0, 1.0), na, nb};
}

void cos_row_backward(const double* a, const double* b, std::size_t d, const CosRow& c, double g, double* ga,
                      double* gb) {
  const double inv = 1.0 / (c.na * c.nb);
  for (std::size_t j = 0; j < d; ++j) {
    if (ga) ga[j] += g * (b[j] * inv - c.cos * a[j] / (c.na * c.na));
    if (gb) gb[j] += g * (a[j] * inv - c.cos * b[j] / (c.nb * c.nb));
  }
}

}  // namespace

Tensor cosine_similarity(const Tensor& u, const Tensor& v) {
  if (u.rank() != 1 || u.shape() != v.shape()) {
    throw DimensionError("cosine_similarity needs equal vectors, got " + shape_string(u.shape()) + " and " +
                         shape_string(v.shape()));
  }
  const std::size_t d = u.size();
  const CosRow c = cos_row(u.data(), v.data(), d);
  return Tape::record(make({}, {c.cos}, "cosine_similarity"), {&u, &v}, [u, v, d, c](GradOut g, Grads gi) {
    cos_row_backward(u.data(), v.data(), d, c, g[0], gi[0] ? gi[0]->data() : nullptr,
                     gi[1] ? gi[1]->data() : nullptr);
  });
}

Tensor row_cosine(const Tensor& a, const Tensor& b) {
  require_matrix(a, "row_cosine");
  if (a.shape() != b.shape()) {
    throw DimensionError("row_cosine shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const std::size_t n = a.dim(0), d = a.dim(1);
  auto rows = std::make_shared<std::vector<CosRow>>();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    rows->push_back(cos_row(a.data() + i * d, b.data() + i * d, d));
    out[i] = rows->back().cos;
  }
  return Tape::record(make({n}, std::move(out), "row_cosine"), {&a, &b}, [a, b, n, d, rows](GradOut g, Grads gi) {
    for (std::size_t i = 0; i < n; ++i) {
      cos_row_backward(a.data() + i * d, b.data() + i * d, d, (*rows)[i], g[i],
                       gi[0] ? gi[0]->data() + i * d : nullptr, gi[1] ? gi[1]->data() + i * d : nullptr);
    }
  });
}

Tensor l2_normalize_rows(const Tensor& x) {
  require_matrix(x, "l2_normalize_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  auto norms = std::make_shared<std::vector<double>>(n);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += x.at(i, j) * x.at(i, j);
    if (acc == 0.0) throw DegenerateInputError("normalizing a zero-norm row");
    (*norms)[i] = std::sqrt(acc);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x.at(i, j) / (*norms)[i];
  }
  Tensor y = make(x.shape(), std::move(out), "l2_normalize_rows");
  Tensor yv = y;
  return Tape::record(y, {&x}, [yv, norms, n, d](GradOut g, Grads gi) {
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += g[i * d + j] * yv[i * d + j];
      for (std::size_t j = 0; j < d; ++j)
        (*gi[0])[i * d + j] += (g[i * d + j] - yv[i * d + j] * dot) / (*norms)[i];
    }
  });
}

namespace {
thread_local StopGradientReplay* g_replay = nullptr;
}  // namespace

StopGradientReplay::StopGradientReplay(Mode mode, std::vector<Tensor>* values)
    : mode_(mode), values_(values), previous_(g_replay) {
  if (mode_ == Mode::record) values_->clear();
  g_replay = this;
}

StopGradientReplay::~StopGradientReplay() { g_replay = previous_; }

Tensor StopGradientReplay::apply(const Tensor& x) {
  StopGradientReplay* r = g_replay;
  if (!r) return x.detached();
  if (r->mode_ == Mode::record) {
    r->values_->push_back(x.detached());
    return x.detached();
  }
  if (r->cursor_ >= r->values_->size()) throw StructuralError("stop_gradient replay ran past the recorded values");
  const Tensor& v = (*r->values_)[r->cursor_++];
  if (v.shape() != x.shape()) throw StructuralError("stop_gradient replay shape mismatch");
  return v;
}

Tensor stop_gradient(const Tensor& x) { return StopGradientReplay::apply(x); }

}  // namespace fprl
