#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "fprl/error.hpp"
#include "fprl/ops.hpp"
#include "fprl/synth.hpp"
#include "fprl/tpam.hpp"
#include "test_support.hpp"

using namespace fprl;
using namespace fprl::tpam;
using fprl::testing::random_tensor;

namespace {

void check_partition(const MaskSelection& s, std::size_t n, double ratio) {
  CHECK(s.masked.size() == static_cast<std::size_t>(std::ceil(ratio * n - 1e-9)));
  CHECK(s.visible.size() + s.masked.size() == n);
  IndexList all = s.visible;
  all.insert(all.end(), s.masked.begin(), s.masked.end());
  std::sort(all.begin(), all.end());
  IndexList expect(n);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(all == expect);
  CHECK(std::is_sorted(s.visible.begin(), s.visible.end()));
  CHECK(std::is_sorted(s.masked.begin(), s.masked.end()));
  double total = 0.0;
  for (double p : s.P.values()) {
    CHECK(p >= 0.0);
    total += p;
  }
  CHECK(std::abs(total - 1.0) <= 1e-12);
}

}  // namespace

TEST_CASE("saliency prior z-scores token norms") {
  Tensor z = Tensor::matrix(3, 2, {3, 0, 0, 4, 3, 4});
  Tensor h = saliency_prior(z);
  CHECK(std::abs(h[0] + std::sqrt(1.5)) < 1e-12);
  CHECK(std::abs(h[1]) < 1e-12);
  CHECK(std::abs(h[2] - std::sqrt(1.5)) < 1e-12);
  CHECK_FALSE(h.tracked());

  Tensor same = Tensor::matrix(4, 3, {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3});
  Tensor flat = saliency_prior(same);
  for (double v : flat.values()) CHECK(v == 0.0);
}

TEST_CASE("saliency prior is invariant to feature scale") {
  Rng rng(1);
  Tensor z = random_tensor({10, 4}, rng);
  Tensor a = saliency_prior(z), b = saliency_prior(scale(z, 7.5));
  for (std::size_t i = 0; i < 10; ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
}

TEST_CASE("attention logits degenerate cases") {
  Rng rng(2);
  ParamStore p;
  init_mask_head(p, "mask", 8, rng);
  std::vector<double> row(8);
  for (auto& x : row) x = rng.normal();
  std::vector<double> rows;
  for (int i = 0; i < 5; ++i) rows.insert(rows.end(), row.begin(), row.end());
  Tensor r1 = attention_logits(Tensor({5, 8}, rows), p, "mask", 2);
  for (double r : r1.values()) CHECK(r == 0.0);

  ParamStore q = p;
  q.set("mask.logit.w", Tensor::zeros(p.at("mask.logit.w").shape()));
  q.set("mask.logit.b", Tensor::zeros(p.at("mask.logit.b").shape()));
  Tensor r2 = attention_logits(random_tensor({6, 8}, rng), q, "mask", 2);
  for (double r : r2.values()) CHECK(r == 0.0);
}

TEST_CASE("attention logits are permutation equivariant") {
  Rng rng(3);
  ParamStore p;
  init_mask_head(p, "mask", 8, rng);
  Tensor x = random_tensor({6, 8}, rng);
  IndexList perm{3, 0, 5, 1, 4, 2};
  Tensor a = attention_logits(x, p, "mask", 2);
  Tensor b = attention_logits(gather_rows(x, perm), p, "mask", 2);
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(b[i] - a[perm[i]]) < 1e-12);
}

TEST_CASE("alpha one keeps the top teacher tokens") {
  Rng rng(4);
  // argsort descending of H is [3, 0, 2, 1].
  Tensor H = zscore(Tensor::vector({2.0, 0.5, 1.0, 3.0}));
  Tensor R = Tensor::vector({5.0, -1.0, 9.0, -3.0});
  MaskSelection s = fuse_and_select(H, R, 1.0, 0.5, SelectMode::topk, rng);
  CHECK(s.visible == IndexList{0, 3});
  CHECK(s.masked == IndexList{1, 2});
  check_partition(s, 4, 0.5);
}

TEST_CASE("alpha zero selects by the learned logits only") {
  Rng rng(5);
  Tensor R = Tensor::vector({0.1, 2.0, -1.0, 1.5});
  for (int t = 0; t < 5; ++t) {
    Tensor H = random_tensor({4}, rng);
    MaskSelection s = fuse_and_select(H, R, 0.0, 0.5, SelectMode::topk, rng);
    CHECK(s.visible == IndexList{1, 3});
  }
}

TEST_CASE("constant scores fall back to the lowest indices") {
  Rng rng(6);
  MaskSelection s = fuse_and_select(Tensor::zeros({10}), Tensor::zeros({10}), 0.5, 0.7, SelectMode::topk, rng);
  CHECK(s.visible == IndexList{0, 1, 2});
  for (double p : s.P.values()) CHECK(std::abs(p - 0.1) < 1e-15);
}

TEST_CASE("partition holds across the mask ratio grid") {
  Rng rng(7);
  for (std::size_t n : {32, 48, 64, 96}) {
    for (double ratio : {0.70, 0.75, 0.80, 0.85, 0.90, 0.95}) {
      if (masked_count(n, ratio) >= n) continue;
      for (SelectMode mode : {SelectMode::topk, SelectMode::multinomial, SelectMode::random}) {
        MaskSelection s = fuse_and_select(random_tensor({n}, rng), random_tensor({n}, rng), 0.5, ratio, mode, rng);
        check_partition(s, n, ratio);
      }
    }
  }
  CHECK(masked_count(32, 0.9) == 29);
  CHECK(masked_count(100, 0.7) == 70);
  CHECK(masked_count(20, 0.95) == 19);
}

TEST_CASE("selection rejects degenerate ratios") {
  Rng rng(8);
  Tensor z = Tensor::zeros({4});
  CHECK_THROWS_AS(fuse_and_select(z, z, 0.5, 0.9, SelectMode::topk, rng), ConfigError);
  CHECK_THROWS_AS(fuse_and_select(z, z, 1.5, 0.5, SelectMode::topk, rng), ConfigError);
  CHECK_THROWS_AS(fuse_and_select(z, z, 0.5, 0.0, SelectMode::topk, rng), ConfigError);
}

TEST_CASE("random mode ignores the scores") {
  Tensor H = Tensor::vector({10, 0, 0, 0, 0, 0, 0, 0});
  std::vector<int> hits(8, 0);
  Rng rng(9);
  for (int t = 0; t < 4000; ++t)
    for (std::size_t i : fuse_and_select(H, H, 1.0, 0.75, SelectMode::random, rng).visible) ++hits[i];
  // Each token is visible with probability 2/8.
  for (int h : hits) CHECK(std::abs(h / 4000.0 - 0.25) < 0.04);
}

TEST_CASE("multinomial mode follows the probabilities") {
  Tensor H = Tensor::vector({4.0, 0, 0, 0, 0, 0, 0, 0});
  Rng rng(10);
  // One visible token: it is token 0 with probability P_0.
  const double p0 = fuse_and_select(H, H, 1.0, 0.875, SelectMode::multinomial, rng).P[0];
  int first = 0;
  for (int t = 0; t < 20000; ++t) first += fuse_and_select(H, H, 1.0, 0.875, SelectMode::multinomial, rng).visible[0] == 0;
  CHECK(std::abs(first / 20000.0 - p0) < 0.015);
}

TEST_CASE("apply then scatter is the identity with everything visible") {
  Rng rng(11);
  Tensor x = random_tensor({6, 4}, rng);
  MaskedTokens m = apply_mask(x, {0, 1, 2, 3, 4, 5}, {3, 3});
  CHECK(identical(m.visible, x));
  CHECK(m.segments == ssm::Segments{3, 3});
  CHECK(identical(scatter_with_mask_token(m.visible, m, Tensor::zeros({4})), x));
}

TEST_CASE("masked tokens bookkeeping") {
  Rng rng(12);
  Tensor x = random_tensor({6, 4}, rng);
  Tensor token = Tensor::vector({9, 9, 9, 9});
  MaskedTokens m = apply_mask(x, {1, 2}, {3, 3});
  CHECK(m.visible.shape() == Shape{2, 4});
  CHECK(m.segments == ssm::Segments{2});
  CHECK(m.total == 6);
  Tensor full = scatter_with_mask_token(m.visible, m, token);
  for (std::size_t r : {0, 3, 4, 5})
    for (std::size_t c = 0; c < 4; ++c) CHECK(full.at(r, c) == 9.0);
  for (std::size_t c = 0; c < 4; ++c) CHECK(full.at(2, c) == x.at(2, c));
}

TEST_CASE("synthetic teacher: alpha one recovers the planted lesion tokens") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    synth::ClipSpec spec;
    spec.frames = 12;
    spec.seed = seed;
    synth::VideoClip clip = synth::generate_clip(spec);
    IndexList frames{3, 7};
    Tensor z = synth::synthetic_teacher_features(clip, frames, 32);
    const std::size_t n = z.dim(0), k = n - masked_count(n, 0.9);
    // Planted ranking: overlap descending, lower index first.
    IndexList order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return clip.patch_overlap[a % 16] > clip.patch_overlap[b % 16];
    });
    IndexList planted(order.begin(), order.begin() + static_cast<long>(k));
    std::sort(planted.begin(), planted.end());
    CHECK(clip.patch_overlap[planted[0] % 16] > 0.0f);
    Rng rng(seed);
    MaskSelection s = fuse_and_select(saliency_prior(z), Tensor::zeros({n}), 1.0, 0.9, SelectMode::topk, rng);
    CHECK(s.visible == planted);
  }
}
