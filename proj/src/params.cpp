#include "fprl/params.hpp"

#include <cmath>

#include "fprl/error.hpp"
#include "fprl/ops.hpp"

namespace fprl {

void ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw StructuralError("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({name, std::move(value)});
}

void ParamStore::set(const std::string& name, Tensor value) {
  auto it = index_.find(name);
  if (it == index_.end()) throw StructuralError("unknown parameter '" + name + "'");
  auto& slot = entries_[it->second].value;
  if (slot.shape() != value.shape()) {
    throw DimensionError("parameter '" + name + "' is " + shape_string(slot.shape()) + ", got " +
                         shape_string(value.shape()));
  }
  slot = std::move(value);
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw StructuralError("missing parameter '" + name + "'");
  return entries_[it->second].value;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

ParamStore ParamStore::bind(Tape& tape, const std::function<bool(const std::string&)>& trainable) const {
  ParamStore out;
  for (const auto& e : entries_) out.add(e.name, trainable(e.name) ? tape.leaf(e.value) : e.value.detached());
  return out;
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v));
}

void init_linear(ParamStore& store, const std::string& prefix, std::size_t fan_in, std::size_t fan_out, Rng& rng,
                 bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  store.add(prefix + ".w", uniform_tensor({fan_in, fan_out}, bound, rng));
  if (with_bias) store.add(prefix + ".b", uniform_tensor({fan_out}, bound, rng));
}

void init_layer_norm(ParamStore& store, const std::string& prefix, std::size_t dim) {
  store.add(prefix + ".g", Tensor::full({dim}, 1.0));
  store.add(prefix + ".b", Tensor::zeros({dim}));
}

Tensor linear(const Tensor& x, const ParamStore& p, const std::string& prefix) {
  Tensor y = matmul(x, p.at(prefix + ".w"));
  const std::string bias = prefix + ".b";
  return p.contains(bias) ? add(y, p.at(bias)) : y;
}

Tensor layer_norm(const Tensor& x, const ParamStore& p, const std::string& prefix) {
  return layer_norm(x, p.at(prefix + ".g"), p.at(prefix + ".b"));
}

}  // namespace fprl
