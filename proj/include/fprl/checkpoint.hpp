#pragma once

// Checkpoint file: magic "FPRL1\0", version u16, config digest u64, tensor
// count u32, then per tensor: name length u32, UTF-8 name, rank u32, dims
// u32 each, f64 data. All little endian.
//
// Tensor names: "param.<name>" for every parameter, "adam.m.<name>" and
// "adam.v.<name>" for every trainable parameter, "run.step".

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fprl/model.hpp"

namespace fprl::checkpoint {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct Decoded {
  std::uint64_t digest = 0;
  NamedTensors tensors;
};

std::vector<std::uint8_t> encode(std::uint64_t digest, const NamedTensors& tensors);
Decoded decode(std::span<const std::uint8_t> bytes);

NamedTensors collect(const Model& model, const TrainState& state);

void save(const std::filesystem::path& path, const RunConfig& config, const Model& model, const TrainState& state);

// Restores model and state. The model must already have the layout of
// `config` (Model::initialize). Refuses files written under another digest.
void load(const std::filesystem::path& path, const RunConfig& config, Model& model, TrainState& state);

// Replaces teacher.* parameters with those stored in any checkpoint of the
// same geometry, ignoring its digest.
void load_teacher(const std::filesystem::path& path, ParamStore& params);

}  // namespace fprl::checkpoint
