#include "fprl/views.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fprl/error.hpp"

namespace fprl::views {

ViewTriple sample_views(std::size_t frame_count, std::size_t window_len, std::size_t frames_per_view, Rng& rng) {
  if (frames_per_view == 0) throw ConfigError("frames_per_view must be positive");
  if (window_len > frame_count)
    throw ConfigError("window_len " + std::to_string(window_len) + " exceeds clip length " +
                      std::to_string(frame_count));
  const std::size_t need = 3 * frames_per_view;
  if (need > window_len)
    throw ConfigError("window_len " + std::to_string(window_len) + " too small for 3 views of " +
                      std::to_string(frames_per_view) + " frames");

  ViewTriple out;
  out.window_begin = rng.below(frame_count - window_len + 1);
  out.window_end = out.window_begin + window_len - 1;

  // Partial Fisher-Yates over window offsets.
  std::vector<std::size_t> pool(window_len);
  std::iota(pool.begin(), pool.end(), out.window_begin);
  for (std::size_t i = 0; i < need; ++i) {
    std::size_t j = i + rng.below(window_len - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(need);
  std::sort(pool.begin(), pool.end());
  auto third = static_cast<std::ptrdiff_t>(frames_per_view);
  out.past.assign(pool.begin(), pool.begin() + third);
  out.current.assign(pool.begin() + third, pool.begin() + 2 * third);
  out.future.assign(pool.begin() + 2 * third, pool.end());
  return out;
}

Tensor extract_patches(const Tensor& frames, std::size_t patch) {
  if (frames.rank() != 4) throw DimensionError("frames must be [F x S x S x C], got " + shape_string(frames.shape()));
  const std::size_t F = frames.dim(0), S = frames.dim(1), C = frames.dim(3);
  if (frames.dim(2) != S) throw DimensionError("frames must be square");
  if (patch == 0 || S % patch != 0)
    throw ConfigError("frame side " + std::to_string(S) + " not divisible by patch size " + std::to_string(patch));
  const std::size_t G = S / patch, pv = patch * patch * C;
  std::vector<double> out(F * G * G * pv);
  const double* src = frames.data();
  double* dst = out.data();
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t gy = 0; gy < G; ++gy)
      for (std::size_t gx = 0; gx < G; ++gx)
        for (std::size_t y = 0; y < patch; ++y) {
          const double* row = src + ((f * S + gy * patch + y) * S + gx * patch) * C;
          dst = std::copy(row, row + patch * C, dst);
        }
  return Tensor({F * G * G, pv}, std::move(out));
}

Tensor normalize_patches(const Tensor& patches) {
  if (patches.rank() != 2) throw DimensionError("patches must be a matrix");
  const std::size_t n = patches.dim(0), p = patches.dim(1);
  std::vector<double> out(patches.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = patches.data() + i * p;
    double mean = std::accumulate(row, row + p, 0.0) / static_cast<double>(p);
    double var = 0.0;
    for (std::size_t j = 0; j < p; ++j) var += (row[j] - mean) * (row[j] - mean);
    double sd = std::sqrt(var / static_cast<double>(p)) + 1e-6;
    for (std::size_t j = 0; j < p; ++j) out[i * p + j] = (row[j] - mean) / sd;
  }
  return Tensor(patches.shape(), std::move(out));
}

TokenizedView tokenize(const Tensor& frames, std::size_t patch, const ParamStore& p, const std::string& prefix) {
  TokenizedView view;
  view.patches = normalize_patches(extract_patches(frames, patch));
  view.grid = frames.dim(1) / patch;
  view.segments.assign(frames.dim(0), view.grid * view.grid);
  view.tokens = linear(view.patches, p, prefix);
  if (p.contains(prefix + ".pos")) {
    const Tensor& pos = p.at(prefix + ".pos");
    if (pos.shape() != view.tokens.shape())
      throw DimensionError("positional table " + shape_string(pos.shape()) + " does not match tokens " +
                           shape_string(view.tokens.shape()));
    view.tokens = add(view.tokens, pos);
  }
  return view;
}

void init_patch_embedding(ParamStore& store, const std::string& prefix, std::size_t patch_values, std::size_t tokens,
                          std::size_t dim, Rng& rng) {
  init_linear(store, prefix, patch_values, dim, rng);
  store.add(prefix + ".pos", uniform_tensor({tokens, dim}, 0.1, rng));
}

}  // namespace fprl::views
