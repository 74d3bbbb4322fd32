#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "fprl/binary_io.hpp"
#include "fprl/error.hpp"
#include "fprl/ops.hpp"
#include "fprl/synth.hpp"

using namespace fprl;
using namespace fprl::synth;

namespace {

ClipSpec small(std::uint64_t seed) {
  ClipSpec s;
  s.frames = 10;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("clip generation is deterministic") {
  CHECK(generate_clip(small(7)) == generate_clip(small(7)));
  CHECK_FALSE(generate_clip(small(7)) == generate_clip(small(8)));
}

TEST_CASE("clip contents respect the declared ranges") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    VideoClip c = generate_clip(small(seed));
    CHECK(c.pixels.size() == 10 * 32 * 32 * 3);
    for (float v : c.pixels) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
    const std::size_t area = 32 * 32;
    for (std::size_t f = 0; f < 10; ++f) {
      std::size_t lit = 0;
      for (std::size_t i = 0; i < area; ++i) lit += c.lesion_mask[f * area + i];
      CHECK(lit > 0);
    }
    // Overlap fractions integrate to the lesion area.
    double covered = 0.0;
    for (float o : c.patch_overlap) covered += o * 64.0;
    std::size_t lit0 = 0;
    for (std::size_t i = 0; i < area; ++i) lit0 += c.lesion_mask[i];
    CHECK(std::abs(covered - static_cast<double>(lit0)) < 1e-3);
  }
}

TEST_CASE("lesion is static while the background moves") {
  VideoClip c = generate_clip(small(3));
  const std::size_t area = 32 * 32;
  for (std::size_t f = 1; f < 10; ++f)
    CHECK(std::equal(c.lesion_mask.begin(), c.lesion_mask.begin() + area, c.lesion_mask.begin() + f * area));
  ClipSpec quiet = small(3);
  quiet.noise = 0.0;
  VideoClip q = generate_clip(quiet);
  const std::size_t frame = area * 3;
  bool moved = false;
  for (std::size_t i = 0; i < frame; ++i) moved |= q.pixels[i] != q.pixels[9 * frame + i];
  CHECK(moved);
}

TEST_CASE("no noise and no drift gives identical frames") {
  ClipSpec s = small(11);
  s.noise = 0.0;
  s.drift = 0.0;
  VideoClip c = generate_clip(s);
  const std::size_t frame = 32 * 32 * 3;
  for (std::size_t f = 1; f < s.frames; ++f)
    CHECK(std::equal(c.pixels.begin(), c.pixels.begin() + frame, c.pixels.begin() + f * frame));
}

TEST_CASE("invalid clip geometry is rejected") {
  ClipSpec s = small(1);
  s.patch = 7;
  CHECK_THROWS_AS(generate_clip(s), ConfigError);
  s = small(1);
  s.radius_max = 20;
  CHECK_THROWS_AS(generate_clip(s), ConfigError);
  s = small(1);
  s.frames = 0;
  CHECK_THROWS_AS(generate_clip(s), ConfigError);
}

TEST_CASE("clip files round-trip bitwise") {
  VideoClip c = generate_clip(small(5));
  auto bytes = encode_clip(c);
  CHECK(decode_clip(bytes) == c);
  CHECK(encode_clip(decode_clip(bytes)) == bytes);

  auto dir = std::filesystem::temp_directory_path() / "fprl_synth_test";
  std::filesystem::create_directories(dir);
  write_clip(dir / "a.fprlclip", c);
  CHECK(read_clip(dir / "a.fprlclip") == c);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(read_clip(dir / "missing.fprlclip"), DataError);
}

TEST_CASE("corrupt clip files are rejected") {
  auto bytes = encode_clip(generate_clip(small(6)));
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_clip(bad), FormatError);
  bad = bytes;
  bad[9] = 9;  // version
  CHECK_THROWS_AS(decode_clip(bad), FormatError);
  bad.assign(bytes.begin(), bytes.end() - 5);
  CHECK_THROWS_AS(decode_clip(bad), FormatError);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(decode_clip(bad), FormatError);
  bad.assign(bytes.begin(), bytes.begin() + 12);
  CHECK_THROWS_AS(decode_clip(bad), FormatError);
}

TEST_CASE("synthetic teacher norms encode lesion overlap") {
  VideoClip c = generate_clip(small(9));
  IndexList frames{0, 4};
  Tensor z = synthetic_teacher_features(c, frames, 32);
  CHECK(z.shape() == Shape{32, 32});
  Tensor norms = token_l2_norms(z);
  for (std::size_t i = 0; i < 32; ++i) CHECK(std::abs(norms[i] - (1.0 + c.patch_overlap[i % 16])) < 1e-12);
  bool saw_background = false;
  for (std::size_t i = 0; i < 16; ++i) {
    if (c.patch_overlap[i] == 0.0f) {
      saw_background = true;
      CHECK(norms[i] == 1.0);
    }
  }
  CHECK(saw_background);

  // A fully covered patch has norm 2.
  ClipSpec big = small(2);
  big.side = 64;
  big.radius_min = 14;
  big.radius_max = 15;
  VideoClip b = generate_clip(big);
  Tensor zb = token_l2_norms(synthetic_teacher_features(b, frames, 16));
  std::size_t full = 0;
  for (std::size_t i = 0; i < b.patches_per_frame(); ++i)
    if (b.patch_overlap[i] == 1.0f) {
      ++full;
      CHECK(std::abs(zb[i] - 2.0) < 1e-12);
    }
  CHECK(full > 0);
}

TEST_CASE("teacher norm ranking equals overlap ranking") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    VideoClip c = generate_clip(small(seed));
    IndexList frames{2};
    Tensor norms = token_l2_norms(synthetic_teacher_features(c, frames, 8));
    IndexList by_norm(16), by_overlap(16);
    std::iota(by_norm.begin(), by_norm.end(), 0);
    std::iota(by_overlap.begin(), by_overlap.end(), 0);
    std::stable_sort(by_norm.begin(), by_norm.end(), [&](auto a, auto b) { return norms[a] > norms[b]; });
    std::stable_sort(by_overlap.begin(), by_overlap.end(),
                     [&](auto a, auto b) { return c.patch_overlap[a] > c.patch_overlap[b]; });
    CHECK(by_norm == by_overlap);
  }
}
