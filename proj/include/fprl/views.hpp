#pragma once

// Multi-view sparse sampling and patch tokenization.

#include <string>
#include <vector>

#include "fprl/ops.hpp"
#include "fprl/params.hpp"
#include "fprl/rng.hpp"
#include "fprl/ssm.hpp"

namespace fprl::views {

struct ViewTriple {
  IndexList past;
  IndexList current;
  IndexList future;
  std::size_t window_begin = 0;  // inclusive
  std::size_t window_end = 0;    // inclusive
};

// Window start uniform over valid positions, then 3 * frames_per_view distinct
// frames drawn without replacement, sorted and split into thirds.
ViewTriple sample_views(std::size_t frame_count, std::size_t window_len, std::size_t frames_per_view, Rng& rng);

// frames [F x S x S x C] -> [F * (S/patch)^2 x patch*patch*C], frame-major,
// row-major patch order, pixel values ordered (y, x, channel) inside a patch.
Tensor extract_patches(const Tensor& frames, std::size_t patch);

// Standardizes every row by its own mean and standard deviation (+1e-6).
Tensor normalize_patches(const Tensor& patches);

struct TokenizedView {
  Tensor tokens;        // [N x d]
  Tensor patches;       // [N x p] normalized pixels, the reconstruction targets
  ssm::Segments segments;  // tokens per frame
  std::size_t grid = 0;    // patches per frame side
};

// Normalized patches embedded with "<prefix>.w" [p x d] and "<prefix>.b",
// plus the positional table "<prefix>.pos" [N x d] when the store has one.
TokenizedView tokenize(const Tensor& frames, std::size_t patch, const ParamStore& p, const std::string& prefix);

void init_patch_embedding(ParamStore& store, const std::string& prefix, std::size_t patch_values, std::size_t tokens,
                          std::size_t dim, Rng& rng);

}  // namespace fprl::views
