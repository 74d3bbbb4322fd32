#include "fprl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "fprl/binary_io.hpp"
#include "fprl/error.hpp"
#include "fprl/rng.hpp"

namespace fprl::synth {

namespace {

constexpr char kMagic[] = "FPRLCLIP";  // plus the terminating NUL
constexpr std::size_t kMagicLen = 9;
constexpr std::uint16_t kVersion = 1;

struct Wave {
  double fx, fy, phase, amp;
};

}  // namespace

void ClipSpec::validate() const {
  if (frames == 0 || side == 0 || channels == 0 || patch == 0) throw ConfigError("clip dimensions must be positive");
  if (side % patch != 0)
    throw ConfigError("frame side " + std::to_string(side) + " not divisible by patch size " + std::to_string(patch));
  if (!(radius_min > 0.0) || radius_max < radius_min) throw ConfigError("invalid lesion radius range");
  if (2.0 * radius_max + 2.0 > static_cast<double>(side)) throw ConfigError("lesion does not fit inside the frame");
  if (!(drift >= 0.0) || !(noise >= 0.0)) throw ConfigError("drift and noise must be non-negative");
}

Tensor VideoClip::frames_tensor(std::span<const std::size_t> frame_indices) const {
  const std::size_t per_frame = side * side * channels;
  std::vector<double> out;
  out.reserve(frame_indices.size() * per_frame);
  for (std::size_t f : frame_indices) {
    if (f >= frames) throw DimensionError("frame index " + std::to_string(f) + " out of range");
    const float* src = pixels.data() + f * per_frame;
    out.insert(out.end(), src, src + per_frame);
  }
  return Tensor({frame_indices.size(), side, side, channels}, std::move(out));
}

bool operator==(const VideoClip& a, const VideoClip& b) {
  auto same_floats = [](const std::vector<float>& x, const std::vector<float>& y) {
    return x.size() == y.size() &&
           std::equal(x.begin(), x.end(), y.begin(), [](float p, float q) {
             return std::bit_cast<std::uint32_t>(p) == std::bit_cast<std::uint32_t>(q);
           });
  };
  return a.frames == b.frames && a.side == b.side && a.channels == b.channels && a.patch == b.patch &&
         a.lesion_mask == b.lesion_mask && same_floats(a.pixels, b.pixels) &&
         same_floats(a.patch_overlap, b.patch_overlap);
}

VideoClip generate_clip(const ClipSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t S = spec.side, C = spec.channels, T = spec.frames;
  const double side = static_cast<double>(S);

  // Tissue: a reddish base colour modulated by a few long-wavelength waves.
  std::vector<double> base(C);
  for (std::size_t c = 0; c < C; ++c) base[c] = (c == 0 ? 0.70 : 0.35) + rng.uniform(-0.05, 0.05);
  std::vector<Wave> waves(3);
  for (auto& w : waves) {
    double period = rng.uniform(12.0, 30.0);
    double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    w.fx = std::cos(angle) / period;
    w.fy = std::sin(angle) / period;
    w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    w.amp = rng.uniform(0.04, 0.10);
  }

  // Lesion: static disk, yellowish with a fine ring texture.
  const double radius = rng.uniform(spec.radius_min, spec.radius_max);
  const double cx = rng.uniform(radius + 1.0, side - radius - 1.0);
  const double cy = rng.uniform(radius + 1.0, side - radius - 1.0);
  std::vector<double> lesion_colour(C);
  for (std::size_t c = 0; c < C; ++c) lesion_colour[c] = (c == 2 ? 0.25 : 0.85) + rng.uniform(-0.05, 0.05);
  const double texture_period = rng.uniform(2.5, 3.5);

  VideoClip clip;
  clip.frames = T;
  clip.side = S;
  clip.channels = C;
  clip.patch = spec.patch;
  clip.pixels.resize(T * S * S * C);
  clip.lesion_mask.assign(T * S * S, 0);

  std::vector<std::uint8_t> disk(S * S, 0);
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
      disk[y * S + x] = dx * dx + dy * dy <= radius * radius ? 1 : 0;
    }

  double ox = 0.0, oy = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) {
      ox += spec.drift * rng.uniform(-1.0, 1.0);
      oy += spec.drift * rng.uniform(-1.0, 1.0);
    }
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        const std::size_t pix = y * S + x;
        const double px = static_cast<double>(x) + ox, py = static_cast<double>(y) + oy;
        double shade = 0.0;
        for (const auto& w : waves) shade += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * px + w.fy * py) + w.phase);
        double ring = 0.0;
        if (disk[pix]) {
          double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
          ring = 0.12 * std::sin(2.0 * std::numbers::pi * std::sqrt(dx * dx + dy * dy) / texture_period);
        }
        for (std::size_t c = 0; c < C; ++c) {
          double v = disk[pix] ? lesion_colour[c] + ring : base[c] + shade;
          if (spec.noise > 0.0) v += spec.noise * rng.normal();
          clip.pixels[(t * S * S + pix) * C + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
        clip.lesion_mask[t * S * S + pix] = disk[pix];
      }
  }

  const std::size_t G = S / spec.patch, P = spec.patch;
  clip.patch_overlap.resize(G * G);
  for (std::size_t gy = 0; gy < G; ++gy)
    for (std::size_t gx = 0; gx < G; ++gx) {
      std::size_t count = 0;
      for (std::size_t y = gy * P; y < (gy + 1) * P; ++y)
        for (std::size_t x = gx * P; x < (gx + 1) * P; ++x) count += disk[y * S + x];
      clip.patch_overlap[gy * G + gx] = static_cast<float>(static_cast<double>(count) / static_cast<double>(P * P));
    }
  return clip;
}

std::vector<std::uint8_t> encode_clip(const VideoClip& clip) {
  const std::size_t S = clip.side;
  if (clip.pixels.size() != clip.frames * S * S * clip.channels || clip.lesion_mask.size() != clip.frames * S * S ||
      clip.patch_overlap.size() != clip.patches_per_frame())
    throw StructuralError("clip buffers do not match its header");
  io::ByteWriter w;
  w.bytes({reinterpret_cast<const std::uint8_t*>(kMagic), kMagicLen});
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(clip.frames));
  w.u32(static_cast<std::uint32_t>(S));
  w.u32(static_cast<std::uint32_t>(clip.channels));
  w.u32(static_cast<std::uint32_t>(clip.patch));
  for (float v : clip.pixels) w.f32(v);
  std::uint8_t acc = 0;
  std::size_t nbits = 0;
  for (std::uint8_t bit : clip.lesion_mask) {
    acc |= static_cast<std::uint8_t>((bit & 1u) << nbits);
    if (++nbits == 8) {
      w.u8(acc);
      acc = 0;
      nbits = 0;
    }
  }
  if (nbits) w.u8(acc);
  for (float v : clip.patch_overlap) w.f32(v);
  return w.take();
}

VideoClip decode_clip(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  auto magic = r.bytes(kMagicLen, "clip magic");
  if (!std::equal(magic.begin(), magic.end(), reinterpret_cast<const std::uint8_t*>(kMagic)))
    throw FormatError("bad clip magic");
  std::uint16_t version = r.u16("clip version");
  if (version != kVersion) throw FormatError("unsupported clip version " + std::to_string(version));
  VideoClip clip;
  clip.frames = r.u32("frame count");
  clip.side = r.u32("frame side");
  clip.channels = r.u32("channel count");
  clip.patch = r.u32("patch size");
  if (clip.frames == 0 || clip.side == 0 || clip.channels == 0 || clip.patch == 0 || clip.side % clip.patch != 0)
    throw FormatError("invalid clip geometry");
  const std::size_t S = clip.side;
  const std::size_t n_pix = clip.frames * S * S * clip.channels;
  const std::size_t n_mask = clip.frames * S * S;
  const std::size_t expected = n_pix * 4 + (n_mask + 7) / 8 + clip.patches_per_frame() * 4;
  if (r.remaining() < expected) throw FormatError("truncated clip file");
  if (r.remaining() > expected) throw FormatError("trailing bytes after clip data");
  clip.pixels.resize(n_pix);
  for (auto& v : clip.pixels) {
    v = r.f32("pixels");
    if (!(v >= 0.0f && v <= 1.0f)) throw FormatError("pixel value outside [0, 1]");
  }
  clip.lesion_mask.resize(n_mask);
  auto packed = r.bytes((n_mask + 7) / 8, "lesion masks");
  for (std::size_t i = 0; i < n_mask; ++i) clip.lesion_mask[i] = (packed[i / 8] >> (i % 8)) & 1u;
  clip.patch_overlap.resize(clip.patches_per_frame());
  for (auto& v : clip.patch_overlap) v = r.f32("patch overlaps");
  return clip;
}

void write_clip(const std::filesystem::path& path, const VideoClip& clip) { io::write_file(path, encode_clip(clip)); }

VideoClip read_clip(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  try {
    return decode_clip(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Tensor synthetic_teacher_features(const VideoClip& clip, std::span<const std::size_t> frame_indices, std::size_t d) {
  if (d == 0) throw DimensionError("teacher feature dimension must be positive");
  const std::size_t per_frame = clip.patches_per_frame();
  const std::size_t n = frame_indices.size() * per_frame;
  std::vector<double> out(n * d, 0.0);
  for (std::size_t f = 0; f < frame_indices.size(); ++f) {
    if (frame_indices[f] >= clip.frames) throw DimensionError("frame index out of range");
    for (std::size_t i = 0; i < per_frame; ++i) {
      std::size_t row = f * per_frame + i;
      out[row * d + row % d] = 1.0 + static_cast<double>(clip.patch_overlap[i]);
    }
  }
  return Tensor({n, d}, std::move(out));
}

}  // namespace fprl::synth
