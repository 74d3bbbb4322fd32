#include "fprl/autodiff.hpp"

#include "fprl/error.hpp"

namespace fprl {

bool GradientMap::contains(const Tensor& leaf) const {
  return leaf.tracked() && grads_.count(leaf.node()) != 0;
}

const Tensor& GradientMap::at(const Tensor& leaf) const {
  if (!leaf.tracked()) throw StructuralError("gradient requested for an untracked tensor");
  auto it = grads_.find(leaf.node());
  if (it == grads_.end()) throw StructuralError("tensor is not a leaf of this backward pass");
  return it->second;
}

NodeId Tape::new_node(std::size_t size) {
  if (consumed_) throw StructuralError("tape already consumed by backward()");
  node_sizes_.push_back(size);
  return node_sizes_.size() - 1;
}

Tensor Tape::leaf(const Tensor& value) {
  if (value.empty()) throw StructuralError("cannot track an empty tensor");
  Tensor t = value.detached();
  t.tape_ = this;
  t.node_ = new_node(t.size());
  leaves_.emplace_back(t.node_, t.shape());
  return t;
}

Tensor Tape::record(Tensor output, std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  return record(std::move(output), std::span<const Tensor* const>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Tensor Tape::record(Tensor output, std::span<const Tensor* const> inputs, BackwardFn backward) {
  Tape* tape = nullptr;
  for (const Tensor* in : inputs) {
    if (!in->tracked()) continue;
    if (tape && tape != in->tape()) throw StructuralError("operation mixes tensors from different tapes");
    tape = in->tape();
  }
  if (!tape) return output;

  Entry e;
  e.inputs.reserve(inputs.size());
  for (const Tensor* in : inputs) e.inputs.push_back(in->tracked() ? in->node() : kNoNode);
  e.output = tape->new_node(output.size());
  e.backward = std::move(backward);

  output.tape_ = tape;
  output.node_ = e.output;
  tape->entries_.push_back(std::move(e));
  return output;
}

GradientMap Tape::backward(const Tensor& loss) {
  if (consumed_) throw StructuralError("backward() called twice on the same tape");
  if (!loss.tracked() || loss.tape() != this) throw StructuralError("loss is not recorded on this tape");
  if (loss.size() != 1) {
    throw DimensionError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
  }
  consumed_ = true;

  std::vector<std::vector<double>> grads(node_sizes_.size());
  grads[loss.node()].assign(1, 1.0);

  std::vector<std::vector<double>*> slots;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    auto& g_out = grads[it->output];
    if (g_out.empty()) continue;
    slots.assign(it->inputs.size(), nullptr);
    for (std::size_t k = 0; k < it->inputs.size(); ++k) {
      const NodeId id = it->inputs[k];
      if (id == kNoNode) continue;
      if (grads[id].empty()) grads[id].assign(node_sizes_[id], 0.0);
      slots[k] = &grads[id];
    }
    it->backward(g_out, slots);
    // Interior gradients are no longer needed once propagated.
    std::vector<double>().swap(g_out);
    it->backward = nullptr;
  }

  GradientMap out;
  for (const auto& [id, shape] : leaves_) {
    auto& g = grads[id];
    if (g.empty()) g.assign(node_sizes_[id], 0.0);
    out.grads_.emplace(id, Tensor(shape, std::move(g)));
  }
  return out;
}

}  // namespace fprl
