#pragma once

// Run configuration: flat UTF-8 "key = value" text, one entry per line,
// '#' starts a comment. Unknown or repeated keys are rejected; missing keys
// keep their defaults.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "fprl/context.hpp"
#include "fprl/objectives.hpp"
#include "fprl/ssm.hpp"
#include "fprl/tpam.hpp"

namespace fprl {

struct RunConfig {
  // geometry
  std::size_t frame_side = 32;
  std::size_t patch_size = 8;
  std::size_t frames_per_view = 2;
  std::size_t window_len = 50;
  // encoder
  std::size_t embed_dim = 32;
  std::size_t state_dim = 8;
  std::size_t depth = 4;
  ssm::BidirMerge bidir_merge = ssm::BidirMerge::sum;
  // masking
  double mask_ratio = 0.9;
  double alpha = 0.5;
  tpam::SelectMode mask_select_mode = tpam::SelectMode::topk;
  std::size_t mask_heads = 2;
  // completion, decoder, prediction heads
  std::size_t cvmfc_blocks = 1;
  std::size_t cvmfc_heads = 1;
  bool cvmfc_tied = true;
  std::size_t decoder_depth = 4;
  bool agtp_attn_pool = true;
  bool agtp_ema = true;
  double ema_momentum = 0.996;
  // objective
  double lambda_rec = 1.0;
  double lambda_align = 0.8;
  double lambda_cl = 1.0;
  double lambda_pf = 20.0;
  double tau = 0.1;
  bool include_positive_in_denominator = false;
  objectives::Similarity similarity = objectives::Similarity::cosine;
  double aux_mask_weight = 0.0;
  // optimization
  double lr = 1.5e-4;
  std::optional<std::size_t> warmup_steps;  // default: 10% of total_steps
  std::size_t total_steps = 500;
  std::size_t batch_size = 8;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0 = only at the end
  // paths
  std::string data_dir = "data";
  std::string out_dir = "run";
  std::string teacher_ckpt;  // optional checkpoint providing teacher.* tensors

  std::size_t effective_warmup() const { return warmup_steps ? *warmup_steps : total_steps / 10; }
  std::size_t grid() const { return frame_side / patch_size; }
  std::size_t tokens_per_view() const { return frames_per_view * grid() * grid(); }
  std::size_t patch_values() const { return patch_size * patch_size * 3; }

  ssm::EncoderConfig encoder() const;
  context::CvmfcConfig cvmfc() const;
  objectives::LossWeights loss_weights() const;

  void validate() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Every key in a fixed order, doubles printed round-trip exact. Parsing the
// result gives back an identical config.
std::string to_text(const RunConfig& config);

// FNV-1a of the canonical text without the path keys; identifies the model
// and training setup a checkpoint belongs to.
std::uint64_t config_digest(const RunConfig& config);

}  // namespace fprl
