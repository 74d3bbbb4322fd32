#pragma once

// Differentiable tensor operations. Each one computes its forward value
// eagerly and, when any input is tracked, records a backward rule on the
// input's tape. Every forward result is checked for NaN/infinity.

#include <cstdint>
#include <span>
#include <vector>

#include "fprl/autodiff.hpp"
#include "fprl/tensor.hpp"

namespace fprl {

using IndexList = std::vector<std::size_t>;

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor square(const Tensor& x);

Tensor broadcast_to(const Tensor& x, const Shape& shape);
Shape broadcast_shapes(const Shape& a, const Shape& b);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);

Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x, std::size_t axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor logsumexp(const Tensor& x, std::size_t axis);

// x[N x d] normalized over the last axis, then x * gamma + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor gather_rows(const Tensor& x, const IndexList& rows);
// Copy of `base` with rows[k] of `src` written at index rows[k].
Tensor scatter_rows(const Tensor& base, const Tensor& src, const IndexList& rows);

Tensor token_l2_norms(const Tensor& z);
// Scalar cosine of two vectors; zero-norm operand throws DegenerateInputError.
Tensor cosine_similarity(const Tensor& u, const Tensor& v);
// Row-wise cosine of two [N x d] matrices -> [N].
Tensor row_cosine(const Tensor& a, const Tensor& b);
// Each row divided by its Euclidean norm.
Tensor l2_normalize_rows(const Tensor& x);

// Value of x as a constant. Inside a StopGradientReplay in replay mode the
// value recorded at the same call position is returned instead.
Tensor stop_gradient(const Tensor& x);

/// Pins stop_gradient values for finite-difference checks. A recording pass
/// captures every stop_gradient output in call order; replay passes return
/// those values, so perturbed evaluations differentiate the same function
/// the tape does.
class StopGradientReplay {
 public:
  enum class Mode { record, replay };
  StopGradientReplay(Mode mode, std::vector<Tensor>* values);
  ~StopGradientReplay();
  StopGradientReplay(const StopGradientReplay&) = delete;
  StopGradientReplay& operator=(const StopGradientReplay&) = delete;

  static Tensor apply(const Tensor& x);

 private:
  Mode mode_;
  std::vector<Tensor>* values_;
  std::size_t cursor_ = 0;
  StopGradientReplay* previous_;
};

/// Records the discrete decisions (ReLU signs, mask selections) taken while
/// it is alive on this thread. Finite-difference checks compare two logs to
/// reject perturbations that cross a kink.
class DecisionRecorder {
 public:
  DecisionRecorder();
  ~DecisionRecorder();
  DecisionRecorder(const DecisionRecorder&) = delete;
  DecisionRecorder& operator=(const DecisionRecorder&) = delete;

  const std::vector<std::uint8_t>& log() const noexcept { return log_; }

  static void note(std::uint8_t value);
  static void note_indices(std::span<const std::size_t> indices);
  static bool active() noexcept;

 private:
  std::vector<std::uint8_t> log_;
  DecisionRecorder* previous_;
};

void check_finite(std::span<const double> values, const char* op);

}  // namespace fprl
