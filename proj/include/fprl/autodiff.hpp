#pragma once

#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "fprl/tensor.hpp"

namespace fprl {

/// Gradients produced by one backward pass, keyed by leaf node.
class GradientMap {
 public:
  bool contains(const Tensor& leaf) const;
  const Tensor& at(const Tensor& leaf) const;
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<NodeId, Tensor> grads_;
};

/// Computation record for reverse-mode differentiation.
///
/// Operations append entries in execution order, so the entry list is
/// topologically sorted by construction. A tape supports exactly one
/// backward pass and must outlive every tensor it tracks.
class Tape {
 public:
  // grad_in[k] is null for inputs that are not tracked.
  using BackwardFn =
      std::function<void(std::span<const double> grad_out, std::span<std::vector<double>* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a value as a differentiable leaf.
  Tensor leaf(const Tensor& value);

  /// Runs the backward pass from a scalar loss.
  GradientMap backward(const Tensor& loss);

  std::size_t entry_count() const noexcept { return entries_.size(); }
  std::size_t leaf_count() const noexcept { return leaves_.size(); }
  bool consumed() const noexcept { return consumed_; }

  /// Records `output` as computed from `inputs`. Returns `output` unchanged
  /// when no input is tracked. Used by operation implementations.
  static Tensor record(Tensor output, std::initializer_list<const Tensor*> inputs, BackwardFn backward);
  static Tensor record(Tensor output, std::span<const Tensor* const> inputs, BackwardFn backward);

 private:
  struct Entry {
    std::vector<NodeId> inputs;
    NodeId output;
    BackwardFn backward;
  };

  NodeId new_node(std::size_t size);

  std::vector<std::size_t> node_sizes_;
  std::vector<std::pair<NodeId, Shape>> leaves_;
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

}  // namespace fprl
