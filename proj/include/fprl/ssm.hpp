#pragma once

// Diagonal selective state-space layers and the encoder built from them.
//
// Continuous system h' = A h + B x, y = C h with diagonal A < 0, discretized
// by zero-order hold with a per-token timescale delta:
//   a_bar = exp(delta * a)
//   b_bar = (delta * a)^-1 (exp(delta * a) - 1) * delta * b
// and run as the recurrence h_t = a_bar_t h_{t-1} + b_bar_t x_t, y_t = C_t h_t.

#include <span>
#include <string>
#include <vector>

#include "fprl/params.hpp"

namespace fprl::ssm {

enum class Direction { forward, backward };

// Token counts of consecutive segments; the recurrence restarts from the zero
// state at every segment boundary.
using Segments = std::vector<std::size_t>;

// (e^z - 1) / z, switching to its Taylor series when |z| < 1e-6.
double zoh_gain(double z);
double zoh_gain_derivative(double z);

struct Discretized {
  Tensor a_bar;
  Tensor b_bar;
};

// Elementwise (broadcasting) discretization. Not differentiable; the fused
// selective_scan carries its own gradient. Throws DomainError unless delta > 0.
Discretized discretize(const Tensor& delta, const Tensor& a, const Tensor& b);

/// A pre-discretized scan instance, laid out like kernels::ScanArgs.
struct ScanProblem {
  std::size_t length = 0;
  std::size_t channels = 0;
  std::size_t state = 0;
  std::vector<double> a_bar;  // [length][state][channels]
  std::vector<double> b_bar;  // [length][state][channels]
  std::vector<double> c;      // [length][state]
  std::vector<double> x;      // [length][channels]

  void validate() const;
};

// Left-to-right recurrence (right-to-left for Direction::backward). When
// `carry` is non-empty it holds the [state][channels] initial state and
// receives the final state.
std::vector<double> scan_sequential(const ScanProblem& problem, Direction dir = Direction::forward,
                                    std::span<double> carry = {});

// Same result via blocked prefix composition of the affine maps
// h -> a_bar h + b_bar x: blocks are scanned locally, block aggregates are
// combined with (a1, b1) then (a2, b2) = (a2 a1, a2 b1 + b2), and the carried
// states are folded back into each block.
std::vector<double> scan_parallel(const ScanProblem& problem, Direction dir = Direction::forward,
                                  std::size_t block = 8);

/// Differentiable fused selective scan.
///   x, delta: [L x d]; a: [d x r] (negative); b, c: [L x r].
/// Returns y [L x d]. Gradients flow to all five inputs.
Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b, const Tensor& c,
                      const Segments& segments, Direction dir);

enum class LayerKind { bidirectional, unidirectional };
enum class BidirMerge { sum, mean };

struct EncoderConfig {
  std::size_t depth = 4;
  std::size_t embed_dim = 32;
  std::size_t state_dim = 8;
  // Per-layer topology; empty means even layers bidirectional-within-frame,
  // odd layers unidirectional across the whole sequence.
  std::vector<LayerKind> schedule;
  BidirMerge merge = BidirMerge::sum;

  LayerKind kind(std::size_t layer) const;
  void validate() const;
};

void init_encoder(ParamStore& store, const std::string& prefix, const EncoderConfig& config, Rng& rng);

// One pre-norm residual block: x + out(scan(in(LN(x)))).
Tensor ssm_layer(const Tensor& x, const Segments& frame_segments, LayerKind kind, BidirMerge merge,
                 const ParamStore& p, const std::string& prefix);

// tokens [N x d]; frame_segments gives the tokens per frame (sum must be N).
Tensor encode(const Tensor& tokens, const Segments& frame_segments, const EncoderConfig& config,
              const ParamStore& p, const std::string& prefix);

}  // namespace fprl::ssm
