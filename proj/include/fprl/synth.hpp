#pragma once

// Synthetic endoscopy-like clips: a smooth tissue background that jitters
// from frame to frame, one static textured circular lesion, and sensor noise.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fprl/tensor.hpp"

namespace fprl::synth {

struct ClipSpec {
  std::size_t frames = 50;
  std::size_t side = 32;
  std::size_t channels = 3;
  std::size_t patch = 8;
  double radius_min = 4.0;
  double radius_max = 7.0;
  double drift = 0.5;  // max background step per frame, pixels
  double noise = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

struct VideoClip {
  std::size_t frames = 0;
  std::size_t side = 0;
  std::size_t channels = 0;
  std::size_t patch = 0;
  std::vector<float> pixels;                 // [frames][side][side][channels], in [0, 1]
  std::vector<std::uint8_t> lesion_mask;     // [frames][side][side], 0 or 1
  std::vector<float> patch_overlap;          // [grid * grid], lesion pixel fraction per patch

  std::size_t grid() const noexcept { return patch ? side / patch : 0; }
  std::size_t patches_per_frame() const noexcept { return grid() * grid(); }

  // Selected frames as a [F x side x side x channels] tensor.
  Tensor frames_tensor(std::span<const std::size_t> frame_indices) const;
};

bool operator==(const VideoClip& a, const VideoClip& b);

VideoClip generate_clip(const ClipSpec& spec);

// Clip file: "FPRLCLIP\0", version u16, frames/side/channels/patch u32, pixels
// f32, lesion masks as LSB-first packed bits, patch overlaps f32. Little endian.
std::vector<std::uint8_t> encode_clip(const VideoClip& clip);
VideoClip decode_clip(std::span<const std::uint8_t> bytes);
void write_clip(const std::filesystem::path& path, const VideoClip& clip);
VideoClip read_clip(const std::filesystem::path& path);

// Test double for the teacher: row (f, i) is basis vector e_{i mod d} scaled
// by 1 + overlap(i), so token norms rank lesion patches strictly above
// background. Returns [frames * patches_per_frame x d].
Tensor synthetic_teacher_features(const VideoClip& clip, std::span<const std::size_t> frame_indices, std::size_t d);

}  // namespace fprl::synth
