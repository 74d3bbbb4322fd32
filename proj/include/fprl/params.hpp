#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fprl/autodiff.hpp"
#include "fprl/rng.hpp"
#include "fprl/tensor.hpp"

namespace fprl {

/// Insertion-ordered collection of named tensors.
///
/// The same type holds stored parameters and the per-step bound copy whose
/// trainable entries are tape leaves.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  void add(const std::string& name, Tensor value);
  void set(const std::string& name, Tensor value);
  const Tensor& at(const std::string& name) const;
  const Tensor& operator[](const std::string& name) const { return at(name); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const;
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<std::string> names() const;

  // Copy in which entries accepted by `trainable` become leaves of `tape`.
  ParamStore bind(Tape& tape, const std::function<bool(const std::string&)>& trainable) const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight [fan_in x fan_out] and bias [fan_out].
void init_linear(ParamStore& store, const std::string& prefix, std::size_t fan_in, std::size_t fan_out, Rng& rng,
                 bool with_bias = true);
void init_layer_norm(ParamStore& store, const std::string& prefix, std::size_t dim);
Tensor uniform_tensor(Shape shape, double bound, Rng& rng);

// x * W + b using parameters "<prefix>.w" and, when present, "<prefix>.b".
Tensor linear(const Tensor& x, const ParamStore& p, const std::string& prefix);
Tensor layer_norm(const Tensor& x, const ParamStore& p, const std::string& prefix);

}  // namespace fprl
