#include "fprl/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "fprl/binary_io.hpp"
#include "fprl/error.hpp"

namespace fprl::checkpoint {

namespace {

constexpr std::uint8_t kMagic[6] = {'F', 'P', 'R', 'L', '1', '\0'};
constexpr std::uint16_t kVersion = 1;

std::string hex(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::vector<std::uint8_t> encode(std::uint64_t digest, const NamedTensors& tensors) {
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u16(kVersion);
  w.u64(digest);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.text(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values()) w.f64(v);
  }
  return w.take();
}

Decoded decode(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  auto magic = r.bytes(sizeof kMagic, "checkpoint magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("bad checkpoint magic");
  std::uint16_t version = r.u16("checkpoint version");
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Decoded out;
  out.digest = r.u64("config digest");
  std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t len = r.u32("tensor name length");
    std::string name = r.text(len, "tensor name");
    std::uint32_t rank = r.u32("tensor rank");
    if (rank > 8) throw FormatError("implausible rank " + std::to_string(rank) + " for " + name);
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      shape.push_back(r.u32("tensor dims"));
      if (shape.back() == 0) throw FormatError("zero extent in " + name);
      n *= shape.back();
    }
    if (r.remaining() / 8 < n) throw FormatError("truncated file while reading data of " + name);
    std::vector<double> data(n);
    for (auto& v : data) v = r.f64("tensor data");
    out.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint data");
  return out;
}

NamedTensors collect(const Model& model, const TrainState& state) {
  NamedTensors out;
  for (const auto& e : model.params.entries()) out.emplace_back("param." + e.name, e.value);
  for (const auto& name : model.trainable_names()) {
    const Shape& shape = model.params.at(name).shape();
    auto it = state.moments.find(name);
    const bool have = it != state.moments.end() && !it->second.m.empty();
    out.emplace_back("adam.m." + name, have ? Tensor(shape, it->second.m) : Tensor::zeros(shape));
    out.emplace_back("adam.v." + name, have ? Tensor(shape, it->second.v) : Tensor::zeros(shape));
  }
  out.emplace_back("run.step", Tensor::vector({static_cast<double>(state.step)}));
  return out;
}

void save(const std::filesystem::path& path, const RunConfig& config, const Model& model, const TrainState& state) {
  io::write_file(path, encode(config_digest(config), collect(model, state)));
}

void load(const std::filesystem::path& path, const RunConfig& config, Model& model, TrainState& state) {
  Decoded file;
  try {
    file = decode(io::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const std::uint64_t expected = config_digest(config);
  if (file.digest != expected)
    throw FormatError(path.string() + ": config digest mismatch: checkpoint " + hex(file.digest) + ", config " +
                      hex(expected));

  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : file.tensors)
    if (!by_name.emplace(name, t).second) throw FormatError(path.string() + ": duplicate tensor " + name);

  // Template from the current layout; every name must be present with the same shape.
  const NamedTensors layout = collect(model, state);
  if (by_name.size() != layout.size())
    throw FormatError(path.string() + ": expected " + std::to_string(layout.size()) + " tensors, found " +
                      std::to_string(by_name.size()));
  for (const auto& [name, t] : layout) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError(path.string() + ": missing tensor " + name);
    if (it->second.shape() != t.shape())
      throw FormatError(path.string() + ": tensor " + name + " has shape " + shape_string(it->second.shape()) +
                        ", expected " + shape_string(t.shape()));
  }

  Model restored = model;
  TrainState st;
  for (const auto& e : model.params.entries()) restored.params.set(e.name, by_name.at("param." + e.name));
  for (const auto& name : model.trainable_names()) {
    st.moments[name].m = by_name.at("adam.m." + name).to_vector();
    st.moments[name].v = by_name.at("adam.v." + name).to_vector();
  }
  const double step = by_name.at("run.step")[0];
  if (!(step >= 0.0) || step != std::floor(step)) throw FormatError(path.string() + ": invalid step counter");
  st.step = static_cast<std::size_t>(step);
  model = std::move(restored);
  state = std::move(st);
}

void load_teacher(const std::filesystem::path& path, ParamStore& params) {
  Decoded file = decode(io::read_file(path));
  std::map<std::string, Tensor> by_name(file.tensors.begin(), file.tensors.end());
  for (const auto& name : params.names()) {
    if (!name.starts_with("teacher.")) continue;
    auto it = by_name.find("param." + name);
    if (it == by_name.end()) throw FormatError(path.string() + ": teacher checkpoint lacks " + name);
    if (it->second.shape() != params.at(name).shape())
      throw FormatError(path.string() + ": teacher tensor " + name + " has the wrong shape");
    params.set(name, it->second);
  }
}

}  // namespace fprl::checkpoint
