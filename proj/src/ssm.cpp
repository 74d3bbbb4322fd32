#include "fprl/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "fprl/error.hpp"
#include "fprl/kernels.hpp"
#include "fprl/ops.hpp"

namespace fprl::ssm {

double zoh_gain(double z) {
  if (std::abs(z) < 1e-6) return 1.0 + z / 2.0 + z * z / 6.0;
  return std::expm1(z) / z;
}

double zoh_gain_derivative(double z) {
  // d/dz (e^z - 1)/z = sum_{n>=1} n z^(n-1) / (n+1)!
  if (std::abs(z) < 1e-2) {
    return 0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0 + z * z * z * z / 144.0;
  }
  return (z * std::exp(z) - std::expm1(z)) / (z * z);
}

Discretized discretize(const Tensor& delta, const Tensor& a, const Tensor& b) {
  for (double v : delta.values()) {
    if (!(v > 0.0)) throw DomainError("discretize: delta must be positive");
  }
  const Shape za_shape = broadcast_shapes(delta.shape(), a.shape());
  const Shape out_shape = broadcast_shapes(za_shape, b.shape());
  const Tensor d_full = broadcast_to(delta.detached(), out_shape);
  const Tensor a_full = broadcast_to(a.detached(), out_shape);
  const Tensor b_full = broadcast_to(b.detached(), out_shape);
  std::vector<double> a_bar(d_full.size()), b_bar(d_full.size());
  for (std::size_t i = 0; i < a_bar.size(); ++i) {
    const double z = d_full[i] * a_full[i];
    a_bar[i] = std::exp(z);
    b_bar[i] = zoh_gain(z) * d_full[i] * b_full[i];
  }
  check_finite(a_bar, "discretize");
  check_finite(b_bar, "discretize");
  return {Tensor(out_shape, std::move(a_bar)), Tensor(out_shape, std::move(b_bar))};
}

// ---------------------------------------------------------------------------
// Pre-discretized scans

void ScanProblem::validate() const {
  if (length == 0 || channels == 0 || state == 0) throw DimensionError("scan problem with an empty extent");
  const std::size_t plane = length * state * channels;
  if (a_bar.size() != plane || b_bar.size() != plane || c.size() != length * state || x.size() != length * channels) {
    throw DimensionError("scan problem buffers do not match its extents");
  }
}

namespace {

ScanProblem reversed(const ScanProblem& p) {
  ScanProblem r = p;
  const std::size_t plane = p.state * p.channels;
  for (std::size_t t = 0; t < p.length; ++t) {
    const std::size_t s = p.length - 1 - t;
    std::copy_n(p.a_bar.begin() + s * plane, plane, r.a_bar.begin() + t * plane);
    std::copy_n(p.b_bar.begin() + s * plane, plane, r.b_bar.begin() + t * plane);
    std::copy_n(p.c.begin() + s * p.state, p.state, r.c.begin() + t * p.state);
    std::copy_n(p.x.begin() + s * p.channels, p.channels, r.x.begin() + t * p.channels);
  }
  return r;
}

std::vector<double> reverse_rows(const std::vector<double>& y, std::size_t length, std::size_t width) {
  std::vector<double> out(y.size());
  for (std::size_t t = 0; t < length; ++t)
    std::copy_n(y.begin() + (length - 1 - t) * width, width, out.begin() + t * width);
  return out;
}

// h -> scale * h + shift, elementwise over a [state][channels] plane.
struct AffineMap {
  std::vector<double> scale;
  std::vector<double> shift;
};

// Apply `first`, then `second`: (a2 a1, a2 b1 + b2).
AffineMap compose(const AffineMap& first, const AffineMap& second) {
  AffineMap out{std::vector<double>(first.scale.size()), std::vector<double>(first.scale.size())};
  for (std::size_t i = 0; i < out.scale.size(); ++i) {
    out.scale[i] = second.scale[i] * first.scale[i];
    out.shift[i] = second.scale[i] * first.shift[i] + second.shift[i];
  }
  return out;
}

}  // namespace

std::vector<double> scan_sequential(const ScanProblem& problem, Direction dir, std::span<double> carry) {
  problem.validate();
  const std::size_t plane = problem.state * problem.channels;
  if (!carry.empty() && carry.size() != plane) throw DimensionError("scan carry state has the wrong size");
  if (dir == Direction::backward) {
    const ScanProblem r = reversed(problem);
    return reverse_rows(scan_sequential(r, Direction::forward, carry), problem.length, problem.channels);
  }
  std::vector<double> state(plane, 0.0);
  if (!carry.empty()) std::copy(carry.begin(), carry.end(), state.begin());
  std::vector<double> y(problem.length * problem.channels);
  kernels::ScanArgs args;
  args.length = problem.length;
  args.channels = problem.channels;
  args.state = problem.state;
  args.a_bar = problem.a_bar.data();
  args.b_bar = problem.b_bar.data();
  args.c = problem.c.data();
  args.x = problem.x.data();
  args.state_io = state.data();
  args.y = y.data();
  kernels::active().scan_forward(args);
  if (!carry.empty()) std::copy(state.begin(), state.end(), carry.begin());
  return y;
}

std::vector<double> scan_parallel(const ScanProblem& problem, Direction dir, std::size_t block) {
  problem.validate();
  if (block == 0) throw DomainError("scan block size must be positive");
  if (dir == Direction::backward) {
    const ScanProblem r = reversed(problem);
    return reverse_rows(scan_parallel(r, Direction::forward, block), problem.length, problem.channels);
  }
  const std::size_t L = problem.length, d = problem.channels, r = problem.state, plane = r * d;
  const std::size_t blocks = (L + block - 1) / block;

  // Per-step maps and their within-block inclusive prefixes. Blocks are independent.
  std::vector<AffineMap> prefix(L);
  for (std::size_t j = 0; j < blocks; ++j) {
    const std::size_t begin = j * block, end = std::min(L, begin + block);
    for (std::size_t t = begin; t < end; ++t) {
      AffineMap step{std::vector<double>(plane), std::vector<double>(plane)};
      for (std::size_t q = 0; q < r; ++q)
        for (std::size_t ch = 0; ch < d; ++ch) {
          const std::size_t i = q * d + ch;
          step.scale[i] = problem.a_bar[t * plane + i];
          step.shift[i] = problem.b_bar[t * plane + i] * problem.x[t * d + ch];
        }
      prefix[t] = t == begin ? std::move(step) : compose(prefix[t - 1], step);
    }
  }

  // Inclusive scan over block aggregates (Hillis-Steele, log2(blocks) rounds).
  std::vector<AffineMap> agg(blocks);
  for (std::size_t j = 0; j < blocks; ++j) agg[j] = prefix[std::min(L, (j + 1) * block) - 1];
  for (std::size_t stride = 1; stride < blocks; stride *= 2) {
    std::vector<AffineMap> next = agg;
    for (std::size_t j = stride; j < blocks; ++j) next[j] = compose(agg[j - stride], agg[j]);
    agg = std::move(next);
  }

  std::vector<double> y(L * d, 0.0);
  for (std::size_t j = 0; j < blocks; ++j) {
    const std::size_t begin = j * block, end = std::min(L, begin + block);
    for (std::size_t t = begin; t < end; ++t) {
      for (std::size_t q = 0; q < r; ++q) {
        const double cq = problem.c[t * r + q];
        for (std::size_t ch = 0; ch < d; ++ch) {
          const std::size_t i = q * d + ch;
          // State entering the block is the shift of the aggregate of all earlier blocks.
          const double carry = j == 0 ? 0.0 : agg[j - 1].shift[i];
          const double h = prefix[t].scale[i] * carry + prefix[t].shift[i];
          y[t * d + ch] += cq * h;
        }
      }
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Fused differentiable scan

namespace {

struct ScanTrace {
  std::size_t length, channels, state;
  std::vector<std::size_t> order;  // working position -> token index
  Segments segments;               // in working order
  std::vector<double> z, a_bar, b_bar, gain, h, x, c;
};

}  // namespace

Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b, const Tensor& c,
                      const Segments& segments, Direction dir) {
  if (x.rank() != 2 || delta.shape() != x.shape() || a.rank() != 2 || a.dim(0) != x.dim(1) || b.rank() != 2 ||
      c.shape() != b.shape() || b.dim(0) != x.dim(0) || b.dim(1) != a.dim(1)) {
    throw DimensionError("selective_scan operands x" + shape_string(x.shape()) + " delta" +
                         shape_string(delta.shape()) + " a" + shape_string(a.shape()) + " b" +
                         shape_string(b.shape()) + " c" + shape_string(c.shape()) + " do not fit");
  }
  const std::size_t L = x.dim(0), d = x.dim(1), r = a.dim(1), plane = r * d;
  if (std::accumulate(segments.begin(), segments.end(), std::size_t{0}) != L) {
    throw StructuralError("scan segments cover " +
                          std::to_string(std::accumulate(segments.begin(), segments.end(), std::size_t{0})) +
                          " tokens, sequence has " + std::to_string(L));
  }
  for (double v : delta.values()) {
    if (!(v > 0.0)) throw DomainError("selective_scan: delta must be positive");
  }

  auto tr = std::make_shared<ScanTrace>();
  tr->length = L;
  tr->channels = d;
  tr->state = r;
  tr->order.resize(L);
  for (std::size_t t = 0; t < L; ++t) tr->order[t] = dir == Direction::forward ? t : L - 1 - t;
  tr->segments = segments;
  if (dir == Direction::backward) std::reverse(tr->segments.begin(), tr->segments.end());

  tr->z.resize(L * plane);
  tr->a_bar.resize(L * plane);
  tr->b_bar.resize(L * plane);
  tr->gain.resize(L * plane);
  tr->h.resize(L * plane);
  tr->x.resize(L * d);
  tr->c.resize(L * r);
  for (std::size_t t = 0; t < L; ++t) {
    const std::size_t tok = tr->order[t];
    std::copy_n(x.data() + tok * d, d, tr->x.begin() + t * d);
    std::copy_n(c.data() + tok * r, r, tr->c.begin() + t * r);
    for (std::size_t q = 0; q < r; ++q) {
      const double bq = b[tok * r + q];
      for (std::size_t ch = 0; ch < d; ++ch) {
        const std::size_t i = t * plane + q * d + ch;
        const double dt = delta[tok * d + ch];
        const double z = dt * a[ch * r + q];
        tr->z[i] = z;
        tr->a_bar[i] = std::exp(z);
        tr->gain[i] = zoh_gain(z);
        tr->b_bar[i] = tr->gain[i] * dt * bq;
      }
    }
  }

  std::vector<double> y_work(L * d, 0.0);
  const auto& kt = kernels::active();
  std::vector<double> state(plane);
  std::size_t start = 0;
  for (std::size_t len : tr->segments) {
    if (len == 0) continue;
    std::fill(state.begin(), state.end(), 0.0);
    kernels::ScanArgs args;
    args.length = len;
    args.channels = d;
    args.state = r;
    args.a_bar = tr->a_bar.data() + start * plane;
    args.b_bar = tr->b_bar.data() + start * plane;
    args.c = tr->c.data() + start * r;
    args.x = tr->x.data() + start * d;
    args.state_io = state.data();
    args.h_trace = tr->h.data() + start * plane;
    args.y = y_work.data() + start * d;
    kt.scan_forward(args);
    start += len;
  }
  std::vector<double> y(L * d);
  for (std::size_t t = 0; t < L; ++t) std::copy_n(y_work.begin() + t * d, d, y.begin() + tr->order[t] * d);
  check_finite(y, "selective_scan");

  return Tape::record(
      Tensor({L, d}, std::move(y)), {&x, &delta, &a, &b, &c},
      [tr, delta, a, b](std::span<const double> g, std::span<std::vector<double>* const> gi) {
        const std::size_t L = tr->length, d = tr->channels, r = tr->state, plane = r * d;
        std::vector<double> gy(L * d);
        for (std::size_t t = 0; t < L; ++t) std::copy_n(g.begin() + tr->order[t] * d, d, gy.begin() + t * d);
        std::vector<double> g_ab(L * plane), g_bb(L * plane), g_c(L * r), g_x(L * d);
        const auto& kt = kernels::active();
        std::size_t start = 0;
        for (std::size_t len : tr->segments) {
          if (len == 0) continue;
          kernels::ScanGradArgs args;
          args.length = len;
          args.channels = d;
          args.state = r;
          args.a_bar = tr->a_bar.data() + start * plane;
          args.b_bar = tr->b_bar.data() + start * plane;
          args.c = tr->c.data() + start * r;
          args.x = tr->x.data() + start * d;
          args.h_trace = tr->h.data() + start * plane;
          args.grad_y = gy.data() + start * d;
          args.grad_a_bar = g_ab.data() + start * plane;
          args.grad_b_bar = g_bb.data() + start * plane;
          args.grad_c = g_c.data() + start * r;
          args.grad_x = g_x.data() + start * d;
          kt.scan_backward(args);
          start += len;
        }
        auto* gx = gi[0];
        auto* gdelta = gi[1];
        auto* ga = gi[2];
        auto* gb = gi[3];
        auto* gc = gi[4];
        for (std::size_t t = 0; t < L; ++t) {
          const std::size_t tok = tr->order[t];
          if (gx)
            for (std::size_t ch = 0; ch < d; ++ch) (*gx)[tok * d + ch] += g_x[t * d + ch];
          if (gc)
            for (std::size_t q = 0; q < r; ++q) (*gc)[tok * r + q] += g_c[t * r + q];
          if (!gdelta && !ga && !gb) continue;
          for (std::size_t q = 0; q < r; ++q) {
            const double bq = b[tok * r + q];
            double gbq = 0.0;
            for (std::size_t ch = 0; ch < d; ++ch) {
              const std::size_t i = t * plane + q * d + ch;
              const double dt = delta[tok * d + ch];
              const double aq = a[ch * r + q];
              const double z = tr->z[i];
              const double dgain = zoh_gain_derivative(z);
              // a_bar = e^z, b_bar = dt * b * gain(z), z = dt * a
              const double d_ab_dz = tr->a_bar[i];
              const double gz = g_ab[i] * d_ab_dz + g_bb[i] * dt * bq * dgain;
              if (gdelta) (*gdelta)[tok * d + ch] += gz * aq + g_bb[i] * bq * tr->gain[i];
              if (ga) (*ga)[ch * r + q] += gz * dt;
              gbq += g_bb[i] * dt * tr->gain[i];
            }
            if (gb) (*gb)[tok * r + q] += gbq;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Layers and encoder

LayerKind EncoderConfig::kind(std::size_t layer) const {
  if (!schedule.empty()) return schedule.at(layer);
  return layer % 2 == 0 ? LayerKind::bidirectional : LayerKind::unidirectional;
}

void EncoderConfig::validate() const {
  if (embed_dim == 0 || state_dim == 0) throw ConfigError("encoder widths must be positive");
  if (!schedule.empty() && schedule.size() != depth) {
    throw ConfigError("encoder schedule has " + std::to_string(schedule.size()) + " entries for depth " +
                      std::to_string(depth));
  }
}

void init_encoder(ParamStore& store, const std::string& prefix, const EncoderConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.embed_dim, r = config.state_dim;
  for (std::size_t l = 0; l < config.depth; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    init_layer_norm(store, p + ".ln", d);
    init_linear(store, p + ".in", d, d, rng);
    init_linear(store, p + ".delta", d, d, rng);
    init_linear(store, p + ".bproj", d, r, rng, false);
    init_linear(store, p + ".cproj", d, r, rng, false);
    std::vector<double> a_log(d * r);
    for (auto& v : a_log) v = std::log(rng.uniform(0.5, 1.5));
    store.add(p + ".a_log", Tensor({d, r}, std::move(a_log)));
    init_linear(store, p + ".out", d, d, rng);
  }
}

Tensor ssm_layer(const Tensor& x, const Segments& frame_segments, LayerKind kind, BidirMerge merge,
                 const ParamStore& p, const std::string& prefix) {
  const Tensor u = linear(layer_norm(x, p, prefix + ".ln"), p, prefix + ".in");
  const Tensor delta = softplus(linear(u, p, prefix + ".delta"));
  const Tensor bsel = linear(u, p, prefix + ".bproj");
  const Tensor csel = linear(u, p, prefix + ".cproj");
  const Tensor a = neg(exp(p.at(prefix + ".a_log")));
  Tensor y;
  if (kind == LayerKind::bidirectional) {
    const Tensor fwd = selective_scan(u, delta, a, bsel, csel, frame_segments, Direction::forward);
    const Tensor bwd = selective_scan(u, delta, a, bsel, csel, frame_segments, Direction::backward);
    y = add(fwd, bwd);
    if (merge == BidirMerge::mean) y = scale(y, 0.5);
  } else {
    y = selective_scan(u, delta, a, bsel, csel, Segments{x.dim(0)}, Direction::forward);
  }
  return add(x, linear(y, p, prefix + ".out"));
}

Tensor encode(const Tensor& tokens, const Segments& frame_segments, const EncoderConfig& config,
              const ParamStore& p, const std::string& prefix) {
  if (tokens.rank() != 2) throw DimensionError("encode expects [N x d] tokens, got " + shape_string(tokens.shape()));
  const std::size_t covered = std::accumulate(frame_segments.begin(), frame_segments.end(), std::size_t{0});
  if (covered != tokens.dim(0)) {
    throw StructuralError("frame segments cover " + std::to_string(covered) + " tokens but " +
                          std::to_string(tokens.dim(0)) + " were given");
  }
  Tensor h = tokens;
  for (std::size_t l = 0; l < config.depth; ++l) {
    h = ssm_layer(h, frame_segments, config.kind(l), config.merge, p, prefix + ".layer" + std::to_string(l));
  }
  return h;
}

}  // namespace fprl::ssm
