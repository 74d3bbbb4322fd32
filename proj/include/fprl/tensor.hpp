#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fprl {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;

/// Immutable dense row-major array of doubles.
///
/// A tensor optionally carries a handle into a Tape; such a tensor is
/// "tracked" and gradients flow back to it. Copies share storage.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_ ? data_->size() : 0; }
  std::size_t dim(std::size_t axis) const;
  bool empty() const noexcept { return !data_; }

  std::span<const double> values() const noexcept;
  const double* data() const noexcept { return data_ ? data_->data() : nullptr; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t row, std::size_t col) const;
  double item() const;
  std::vector<double> to_vector() const;

  bool tracked() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  NodeId node() const noexcept { return node_; }

  // Same storage, no tape handle.
  Tensor detached() const;

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  NodeId node_ = kNoNode;
};

// Bitwise equality of shape and values.
bool identical(const Tensor& a, const Tensor& b);

}  // namespace fprl
