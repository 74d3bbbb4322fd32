#include <cmath>

#include "doctest.h"
#include "fprl/config.hpp"
#include "fprl/error.hpp"
#include "fprl/model.hpp"
#include "fprl/objectives.hpp"
#include "fprl/ops.hpp"
#include "fprl/synth.hpp"
#include "test_support.hpp"

using namespace fprl;
using namespace fprl::objectives;
using fprl::testing::random_tensor;

TEST_CASE("reconstruction loss cases") {
  Rng rng(1);
  Tensor x = random_tensor({5, 3}, rng);
  CHECK(loss_rec(x, x, {0, 2, 4}).item() == 0.0);

  Tensor a = Tensor::matrix(2, 2, {1, -1, 7, 7});
  Tensor b = Tensor::matrix(2, 2, {0, 0, 0, 0});
  CHECK(std::abs(loss_rec(a, b, {0}).item() - 2.0) < 1e-15);
  // Mean over masked rows: (2 + 98) / 2.
  CHECK(std::abs(loss_rec(a, b, {0, 1}).item() - 50.0) < 1e-12);
  CHECK_THROWS_AS(loss_rec(a, b, {}), DomainError);
}

TEST_CASE("alignment loss cases") {
  Rng rng(2);
  Tensor zt = random_tensor({4, 3}, rng);
  IndexList masked{1, 3};
  AlignTerms same = loss_align(zt, zt, zt, masked, 20.0);
  CHECK(std::abs(same.pt.item()) < 1e-12);
  CHECK(std::abs(same.ft.item()) < 1e-12);
  CHECK(same.pf.item() == 0.0);
  AlignTerms anti = loss_align(neg(zt), neg(zt), zt, masked, 20.0);
  CHECK(std::abs(anti.pt.item() - 2.0) < 1e-12);
  CHECK(std::abs(anti.ft.item() - 2.0) < 1e-12);

  Tensor zp = Tensor::matrix(1, 2, {1.1, 2.0});
  Tensor zf = Tensor::matrix(1, 2, {1.0, 2.0});
  Tensor t = Tensor::matrix(1, 2, {1.0, 0.0});
  AlignTerms pf = loss_align(zp, zf, t, {0}, 20.0);
  CHECK(std::abs(pf.pf.item() - 0.01) < 1e-12);
  CHECK(std::abs(pf.align.item() - (pf.pt.item() + pf.ft.item() + 0.2)) < 1e-12);

  Tensor dead = Tensor::matrix(2, 2, {1, 1, 0, 0});
  CHECK_THROWS_AS(loss_align(dead, dead, dead, {1}, 20.0), DegenerateInputError);
  CHECK_NOTHROW(loss_align(dead, dead, dead, {0}, 20.0));
}

TEST_CASE("alignment terms stay in range") {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    AlignTerms a = loss_align(random_tensor({6, 4}, rng), random_tensor({6, 4}, rng), random_tensor({6, 4}, rng),
                              {0, 2, 5}, 20.0);
    for (const Tensor* v : {&a.pt, &a.ft}) {
      CHECK(v->item() >= 0.0);
      CHECK(v->item() <= 2.0);
    }
    CHECK(a.pf.item() >= 0.0);
  }
}

TEST_CASE("contrastive loss hand cases") {
  std::vector<Tensor> pc{Tensor::vector({1, 0})}, pp{Tensor::vector({1, 0})}, pf{Tensor::vector({0, 1})};
  for (double tau : {1.0, 0.1, 3.0}) CHECK(std::abs(loss_cl(pc, pp, pf, tau, false).item()) < 1e-12);

  std::vector<Tensor> same{Tensor::vector({0.6, 0.8})};
  for (double tau : {1.0, 0.1, 0.5}) {
    // Two terms of log 2 each.
    CHECK(std::abs(loss_cl(same, same, same, tau, true).item() - 2 * std::log(2.0)) < 1e-12);
  }
}

TEST_CASE("inclusive contrastive loss is non-negative") {
  Rng rng(4);
  for (int t = 0; t < 30; ++t) {
    const std::size_t b = 1 + rng.below(4);
    std::vector<Tensor> pc, pp, pf;
    for (std::size_t i = 0; i < b; ++i) {
      pc.push_back(random_tensor({5}, rng));
      pp.push_back(random_tensor({5}, rng));
      pf.push_back(random_tensor({5}, rng));
    }
    for (Similarity s : {Similarity::cosine, Similarity::dot}) {
      CHECK(loss_cl(pc, pp, pf, 0.1, true, s).item() >= 0.0);
      CHECK(std::isfinite(loss_cl(pc, pp, pf, 0.1, false, s).item()));
    }
  }
  std::vector<Tensor> none;
  CHECK_THROWS_AS(loss_cl(none, none, none, 0.1, false), StructuralError);
}

TEST_CASE("contrastive keys carry no gradient") {
  Rng rng(5);
  Tape tape;
  std::vector<Tensor> pc, pp, pf;
  for (int i = 0; i < 3; ++i) {
    pc.push_back(tape.leaf(random_tensor({4}, rng)));
    pp.push_back(tape.leaf(random_tensor({4}, rng)));
    pf.push_back(tape.leaf(random_tensor({4}, rng)));
  }
  GradientMap g = tape.backward(loss_cl(pc, pp, pf, 0.1, false));
  for (int i = 0; i < 3; ++i) {
    for (double v : g.at(pp[i]).values()) CHECK(v == 0.0);
    for (double v : g.at(pf[i]).values()) CHECK(v == 0.0);
  }
}

TEST_CASE("weighted total") {
  LossComponents c{Tensor::scalar(2.0), Tensor::scalar(0.0), Tensor::scalar(0.0), Tensor::scalar(0.0),
                   Tensor::scalar(1.0), Tensor::scalar(0.5), Tensor()};
  WeightedLoss w = loss_total(c, LossWeights{});
  CHECK(std::abs(w.total.item() - 3.3) < 1e-12);
  CHECK(w.report.rec == 2.0);
  CHECK(w.report.align == 1.0);
  CHECK(w.report.cl == 0.5);

  LossComponents zero{Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0),
                      Tensor::scalar(0), Tensor::scalar(0), Tensor()};
  CHECK(loss_total(zero, LossWeights{}).total.item() == 0.0);

  LossWeights aux;
  aux.aux_mask = 0.5;
  c.aux_mask = Tensor::scalar(-0.4);
  WeightedLoss wa = loss_total(c, aux);
  CHECK(std::abs(wa.total.item() - (3.3 - 0.2)) < 1e-12);
  CHECK(std::abs(wa.report.total - (wa.report.rec + 0.8 * wa.report.align + wa.report.cl + 0.5 * wa.report.aux_mask)) <=
        1e-12);
}

TEST_CASE("zero alignment weight removes the teacher from the total") {
  Rng rng(6);
  LossWeights w;
  w.align = 0.0;
  Tensor zc = random_tensor({4, 3}, rng);
  double totals[2];
  for (int k = 0; k < 2; ++k) {
    Tensor zt = random_tensor({4, 3}, rng);
    AlignTerms a = loss_align(zc, zc, zt, {0, 1}, 20.0);
    LossComponents c{Tensor::scalar(1.0), a.pt, a.ft, a.pf, a.align, Tensor::scalar(0.25), Tensor()};
    totals[k] = loss_total(c, w).total.item();
  }
  CHECK(totals[0] == totals[1]);
}

TEST_CASE("weights are validated") {
  LossWeights w;
  w.tau = 0.0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w = LossWeights{};
  w.rec = -1.0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("auxiliary mask loss") {
  Tensor P = Tensor::full({8}, 0.125);
  Tensor err = Tensor::full({8}, 3.0);
  CHECK(std::abs(loss_aux_mask(P, err, {1, 2, 5}).item() - (-3.0 * 3 / 8)) < 1e-15);
  CHECK(loss_aux_mask(P, Tensor::zeros({8}), {1, 2, 5}).item() == 0.0);

  // More mass on the hardest masked token lowers the loss.
  Tensor e = Tensor::vector({0.1, 5.0, 0.3, 0.2});
  Tensor p1 = Tensor::vector({0.25, 0.25, 0.25, 0.25});
  Tensor p2 = Tensor::vector({0.2, 0.4, 0.2, 0.2});
  CHECK(loss_aux_mask(p2, e, {1, 2}).item() < loss_aux_mask(p1, e, {1, 2}).item());

  Tape tape;
  Tensor pl = tape.leaf(p1), el = tape.leaf(e);
  GradientMap g = tape.backward(loss_aux_mask(pl, el, {1, 2}));
  for (double v : g.at(el).values()) CHECK(v == 0.0);
  CHECK(g.at(pl)[1] == -5.0);
  CHECK(g.at(pl)[0] == 0.0);
}

TEST_CASE("no loss gradient reaches the teacher or the target head") {
  RunConfig c;
  c.window_len = 12;
  c.batch_size = 2;
  c.aux_mask_weight = 1.0;
  c.validate();
  Model m = Model::initialize(c);
  std::vector<synth::VideoClip> clips;
  for (std::uint64_t s = 0; s < 2; ++s) {
    synth::ClipSpec spec;
    spec.frames = 12;
    spec.seed = s;
    clips.push_back(synth::generate_clip(spec));
  }
  std::vector<const synth::VideoClip*> batch{&clips[0], &clips[1]};
  Tape tape;
  ParamStore bound = m.params.bind(tape, [](const std::string&) { return true; });
  Rng rng(3);
  BatchOutputs out = forward_batch(batch, bound, c, rng);
  GradientMap g = tape.backward(out.loss.total);
  std::size_t frozen = 0;
  bool student_moves = false;
  for (const auto& name : m.params.names()) {
    const bool is_frozen = name.starts_with("teacher.") || name.starts_with("agtp.target.");
    CHECK(is_frozen == !Model::trainable(name));
    for (double v : g.at(bound.at(name)).values()) {
      if (is_frozen) CHECK(v == 0.0);
      else student_moves |= v != 0.0;
    }
    frozen += is_frozen;
  }
  CHECK(frozen > 0);
  CHECK(student_moves);
}
