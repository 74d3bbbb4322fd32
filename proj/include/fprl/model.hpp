#pragma once

// Parameter layout and the full pre-training forward pass.
//
// Parameter groups (prefixes): student, teacher (frozen), mask, stream,
// cvmfc, decoder, agtp.query, agtp.target (EMA only).

#include <map>
#include <span>
#include <string>
#include <vector>

#include "fprl/config.hpp"
#include "fprl/objectives.hpp"
#include "fprl/optim.hpp"
#include "fprl/synth.hpp"
#include "fprl/tpam.hpp"
#include "fprl/views.hpp"

namespace fprl {

struct Model {
  ParamStore params;

  // Student and heads from the run seed; the teacher from a fixed seed so
  // every run distils from the same frozen network.
  static Model initialize(const RunConfig& config);
  static bool trainable(const std::string& name);
  std::vector<std::string> trainable_names() const;
};

// Seed used for teacher initialization.
inline constexpr std::uint64_t kTeacherSeed = 0x7eac4e12f00dULL;

void init_teacher(ParamStore& store, const RunConfig& config);

struct ClipOutputs {
  views::ViewTriple views;
  tpam::MaskSelection selection;
  Tensor teacher;     // z_t [N x d]
  Tensor completed_past;
  Tensor completed_future;
  Tensor recon;       // [N x p]
  Tensor target;      // [N x p]
  Tensor p_c, p_p, p_f;
  Tensor rec;
  objectives::AlignTerms align;
  Tensor aux_mask;    // empty when the auxiliary weight is zero
};

ClipOutputs forward_clip(const synth::VideoClip& clip, const ParamStore& params, const RunConfig& config, Rng& rng);

struct BatchOutputs {
  objectives::WeightedLoss loss;
  std::vector<ClipOutputs> clips;
};

// Per-clip terms averaged over the batch; the contrastive term uses the whole
// batch as its key set.
BatchOutputs forward_batch(std::span<const synth::VideoClip* const> clips, const ParamStore& params,
                           const RunConfig& config, Rng& rng);

struct TrainState {
  std::size_t step = 0;
  std::map<std::string, optim::Moments> moments;
};

// batch distinct clip indices (with replacement when the dataset is smaller).
IndexList sample_batch(std::size_t dataset_size, std::size_t batch, Rng& rng);

// Random stream for a given step; a resumed run reproduces it from the step alone.
Rng step_rng(const RunConfig& config, std::size_t step);

// One optimizer step: forward, backward, AdamW on trainable parameters, EMA
// update of the target head. Increments state.step.
objectives::LossReport pretrain_step(Model& model, TrainState& state, std::span<const synth::VideoClip> dataset,
                                     const RunConfig& config);

}  // namespace fprl
