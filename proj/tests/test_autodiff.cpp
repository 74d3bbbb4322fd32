#include <cmath>

#include "doctest.h"
#include "fprl/error.hpp"
#include "fprl/ops.hpp"
#include "test_support.hpp"

using namespace fprl;
using fprl::testing::max_grad_error;
using fprl::testing::random_tensor;
using fprl::testing::random_uniform;

namespace {

constexpr double kFdTol = 1e-5;

// Runs the finite-difference check at 10 random points; `make` draws inputs.
template <class Make>
void check_op(const fprl::testing::MultiFn& f, Make make) {
  Rng rng(1234);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Tensor> inputs = make(rng);
    CHECK(max_grad_error(f, inputs, 1e-6, 7 + trial) < kFdTol);
  }
}

std::size_t dim(Rng& rng) { return 1 + rng.below(8); }

}  // namespace

TEST_CASE("tensor construction contracts") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor({0, 2}, {}), DimensionError);
  Tensor t = Tensor::matrix(2, 2, {1, 2, 3, 4});
  CHECK(t.at(1, 0) == 3);
  CHECK_FALSE(t.tracked());
}

TEST_CASE("matmul examples") {
  Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  CHECK(identical(matmul(a, Tensor::matrix(2, 2, {1, 0, 0, 1})), a));
  CHECK(matmul(a, Tensor::matrix(2, 1, {5, 6})).to_vector() == std::vector<double>{17, 39});
  Tensor z = matmul(Tensor::zeros({2, 2}), Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  for (double v : z.values()) CHECK(v == 0.0);
  try {
    matmul(a, Tensor::zeros({3, 1}));
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2x2]") != std::string::npos);
    CHECK(msg.find("[3x1]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  auto p = softmax(Tensor::vector({0, 0}), 0).to_vector();
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
  p = softmax(Tensor::vector({std::log(1.0), std::log(3.0)}), 0).to_vector();
  CHECK(std::abs(p[0] - 0.25) < 1e-15);
  CHECK(std::abs(p[1] - 0.75) < 1e-15);
  p = softmax(Tensor::vector({1000, 1000}), 0).to_vector();
  CHECK(p[0] == 0.5);
  CHECK(p[1] == 0.5);
}

TEST_CASE("softmax rows are nonnegative and sum to one") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t r = dim(rng), c = dim(rng);
    Tensor x = random_tensor({r, c}, rng, 10.0);
    Tensor p = softmax(x, 1);
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        CHECK(p.at(i, j) >= 0.0);
        s += p.at(i, j);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("cosine similarity examples") {
  Tensor u = Tensor::vector({0.3, -1.2, 2.0});
  CHECK(cosine_similarity(u, u).item() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(u, neg(u)).item() == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(cosine_similarity(Tensor::vector({1, 0}), Tensor::vector({0, 1})).item() == 0.0);
  CHECK_THROWS_AS(cosine_similarity(Tensor::vector({0, 0}), Tensor::vector({0, 1})), DegenerateInputError);
}

TEST_CASE("token norms examples") {
  auto n = token_l2_norms(Tensor::matrix(3, 2, {3, 4, 0, 0, 1, 0})).to_vector();
  CHECK(n[0] == 5.0);
  CHECK(n[1] == 0.0);
  CHECK(n[2] == 1.0);
}

TEST_CASE("backward examples") {
  Tape tape;
  Tensor x = tape.leaf(Tensor::vector({1, 2}));
  GradientMap g = tape.backward(sum_all(square(x)));
  CHECK(g.at(x).to_vector() == std::vector<double>{2, 4});
  CHECK(g.at(x).shape() == Shape{2});

  Tape tape2;
  Tensor y = tape2.leaf(Tensor::vector({0.3, -2, 5}));
  GradientMap g2 = tape2.backward(sum_all(softmax(y, 0)));
  for (double v : g2.at(y).values()) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("backward misuse is rejected") {
  Tape tape;
  Tensor x = tape.leaf(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(tape.backward(square(x)), DimensionError);
  CHECK_THROWS_AS(tape.backward(Tensor::scalar(1.0)), StructuralError);
  tape.backward(sum_all(x));
  CHECK_THROWS_AS(tape.backward(sum_all(x)), StructuralError);
}

TEST_CASE("gradient map covers tracked leaves only") {
  Tape tape;
  Tensor a = tape.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  Tensor unused = tape.leaf(Tensor::vector({1, 1, 1}));
  Tensor constant = Tensor::matrix(2, 2, {1, 1, 1, 1});
  GradientMap g = tape.backward(sum_all(mul(a, constant)));
  CHECK(g.contains(a));
  CHECK(g.at(a).shape() == a.shape());
  CHECK(g.contains(unused));
  for (double v : g.at(unused).values()) CHECK(v == 0.0);
  CHECK_FALSE(g.contains(constant));
}

TEST_CASE("shared subexpressions accumulate gradient") {
  Tape tape;
  Tensor x = tape.leaf(Tensor::vector({3.0}));
  Tensor y = mul(x, x);
  GradientMap g = tape.backward(sum_all(add(y, x)));
  CHECK(g.at(x)[0] == 7.0);
}

TEST_CASE("overflow is an error, not a value") {
  CHECK_THROWS_AS(exp(Tensor::vector({1000.0})), NumericError);
  CHECK_THROWS_AS(log(Tensor::vector({0.0})), DomainError);
}

TEST_CASE("elementwise example triples") {
  Tensor a = Tensor::vector({1, 2, 3});
  Tensor b = Tensor::vector({4, 5, 6});
  CHECK(identical(add(a, Tensor::zeros({3})), a));
  CHECK(add(a, b).to_vector() == std::vector<double>{5, 7, 9});
  CHECK(sub(b, a).to_vector() == std::vector<double>{3, 3, 3});
  CHECK(identical(mul(a, Tensor::full({3}, 1.0)), a));
  CHECK(mul(a, b).to_vector() == std::vector<double>{4, 10, 18});
  CHECK(div(b, Tensor::full({3}, 2.0)).to_vector() == std::vector<double>{2, 2.5, 3});
  CHECK(exp(Tensor::vector({0.0}))[0] == 1.0);
  CHECK(log(Tensor::vector({1.0}))[0] == 0.0);
  CHECK(std::abs(log(exp(Tensor::vector({2.5})))[0] - 2.5) < 1e-15);
  CHECK(sqrt(Tensor::vector({9.0, 0.25})).to_vector() == std::vector<double>{3.0, 0.5});
  CHECK(relu(Tensor::vector({-1, 0, 2})).to_vector() == std::vector<double>{0, 0, 2});
}

TEST_CASE("broadcast, transpose, concat, reductions") {
  Tensor row = Tensor::matrix(1, 3, {1, 2, 3});
  Tensor m = broadcast_to(row, {2, 3});
  CHECK(m.to_vector() == std::vector<double>{1, 2, 3, 1, 2, 3});
  CHECK(add(Tensor::matrix(2, 3, {0, 0, 0, 1, 1, 1}), Tensor::vector({1, 2, 3})).to_vector() ==
        std::vector<double>{1, 2, 3, 2, 3, 4});
  CHECK_THROWS_AS(add(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})), DimensionError);

  Tensor t = transpose(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  CHECK(t.shape() == Shape{3, 2});
  CHECK(t.to_vector() == std::vector<double>{1, 4, 2, 5, 3, 6});
  Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  CHECK(identical(transpose(transpose(a)), a));

  std::vector<Tensor> parts{Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(2, 2, {3, 4, 5, 6})};
  CHECK(concat(parts, 0).to_vector() == std::vector<double>{1, 2, 3, 4, 5, 6});
  std::vector<Tensor> cols{Tensor::matrix(2, 1, {1, 2}), Tensor::matrix(2, 1, {3, 4})};
  CHECK(concat(cols, 1).to_vector() == std::vector<double>{1, 3, 2, 4});

  Tensor x = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(sum(x, 0).to_vector() == std::vector<double>{5, 7, 9});
  CHECK(sum(x, 1).to_vector() == std::vector<double>{6, 15});
  CHECK(mean(x, 1).to_vector() == std::vector<double>{2, 5});
  CHECK(sum_all(x).item() == 21.0);
  CHECK(mean_all(x).item() == 3.5);
}

TEST_CASE("layer norm examples") {
  Tensor x = Tensor::matrix(1, 4, {1, 2, 3, 4});
  Tensor y = layer_norm(x, Tensor::full({4}, 1.0), Tensor::zeros({4}), 0.0);
  const double sd = std::sqrt(1.25);
  CHECK(std::abs(y[0] + 1.5 / sd) < 1e-15);
  CHECK(std::abs(y[3] - 1.5 / sd) < 1e-15);
  Tensor shifted = layer_norm(x, Tensor::full({4}, 2.0), Tensor::full({4}, 1.0), 0.0);
  CHECK(std::abs(shifted[0] - (1.0 - 3.0 / sd)) < 1e-14);
}

TEST_CASE("gather and scatter") {
  Tensor x = Tensor::matrix(4, 2, {0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(gather_rows(x, {2, 0}).to_vector() == std::vector<double>{4, 5, 0, 1});
  CHECK(identical(gather_rows(x, {0, 1, 2, 3}), x));
  Tensor base = Tensor::zeros({4, 2});
  Tensor s = scatter_rows(base, Tensor::matrix(1, 2, {9, 9}), {1});
  CHECK(s.to_vector() == std::vector<double>{0, 0, 9, 9, 0, 0, 0, 0});
  CHECK_THROWS_AS(scatter_rows(base, Tensor::zeros({2, 2}), {1, 1}), StructuralError);
  CHECK_THROWS_AS(gather_rows(x, {4}), StructuralError);
}

TEST_CASE("gather then scatter with complementary sets reconstructs the tensor") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 2 + rng.below(7), d = dim(rng);
    Tensor x = random_tensor({n, d}, rng);
    IndexList keep, rest;
    for (std::size_t i = 0; i < n; ++i) (rng.uniform() < 0.5 ? keep : rest).push_back(i);
    if (keep.empty()) keep.push_back(rest.back()), rest.pop_back();
    if (rest.empty()) rest.push_back(keep.back()), keep.pop_back();
    Tensor rebuilt = scatter_rows(scatter_rows(Tensor::zeros({n, d}), gather_rows(x, keep), keep),
                                  gather_rows(x, rest), rest);
    CHECK(identical(rebuilt, x));
  }
}

TEST_CASE("stop_gradient preserves values and blocks gradient") {
  Tape tape;
  Tensor x = tape.leaf(Tensor::vector({1.5, -2.0}));
  Tensor s = stop_gradient(x);
  CHECK(identical(s, x.detached()));
  CHECK_FALSE(s.tracked());
  GradientMap g = tape.backward(sum_all(add(mul(s, x), s)));
  CHECK(g.at(x).to_vector() == std::vector<double>{1.5, -2.0});
}

TEST_CASE("decision recorder logs relu signs") {
  DecisionRecorder rec;
  relu(Tensor::vector({-1, 2}));
  std::vector<std::uint8_t> first = rec.log();
  CHECK_FALSE(first.empty());
}

TEST_CASE("finite differences: elementwise ops") {
  auto two = [](Rng& rng) {
    std::size_t r = dim(rng), c = dim(rng);
    return std::vector<Tensor>{random_tensor({r, c}, rng), random_tensor({r, c}, rng)};
  };
  check_op([](const auto& in) { return add(in[0], in[1]); }, two);
  check_op([](const auto& in) { return sub(in[0], in[1]); }, two);
  check_op([](const auto& in) { return mul(in[0], in[1]); }, two);
  check_op([](const auto& in) { return div(in[0], in[1]); }, [](Rng& rng) {
    std::size_t r = dim(rng), c = dim(rng);
    return std::vector<Tensor>{random_tensor({r, c}, rng), random_uniform({r, c}, rng, 0.5, 2.0)};
  });
  auto one = [](Rng& rng) { return std::vector<Tensor>{random_tensor({dim(rng), dim(rng)}, rng)}; };
  auto positive = [](Rng& rng) { return std::vector<Tensor>{random_uniform({dim(rng), dim(rng)}, rng, 0.2, 3.0)}; };
  check_op([](const auto& in) { return exp(in[0]); }, one);
  check_op([](const auto& in) { return log(in[0]); }, positive);
  check_op([](const auto& in) { return sqrt(in[0]); }, positive);
  check_op([](const auto& in) { return softplus(in[0]); }, one);
  check_op([](const auto& in) { return square(in[0]); }, one);
  check_op([](const auto& in) { return neg(scale(add_scalar(in[0], 0.3), 1.7)); }, one);
  // Inputs bounded away from the kink.
  check_op([](const auto& in) { return relu(in[0]); }, [](Rng& rng) {
    Tensor t = random_tensor({dim(rng), dim(rng)}, rng);
    std::vector<double> v = t.to_vector();
    for (auto& x : v) x = x >= 0 ? x + 0.1 : x - 0.1;
    return std::vector<Tensor>{Tensor(t.shape(), v)};
  });
}

TEST_CASE("finite differences: broadcasting") {
  check_op([](const auto& in) { return add(in[0], in[1]); }, [](Rng& rng) {
    std::size_t r = dim(rng), c = dim(rng);
    return std::vector<Tensor>{random_tensor({r, c}, rng), random_tensor({c}, rng)};
  });
  check_op([](const auto& in) { return mul(in[0], in[1]); }, [](Rng& rng) {
    std::size_t r = dim(rng), c = dim(rng);
    return std::vector<Tensor>{random_tensor({r, 1}, rng), random_tensor({r, c}, rng)};
  });
  check_op([](const auto& in) { return div(in[0], in[1]); }, [](Rng& rng) {
    std::size_t r = dim(rng);
    return std::vector<Tensor>{random_tensor({r}, rng), random_uniform({}, rng, 0.5, 2.0)};
  });
  check_op([](const auto& in) { return broadcast_to(in[0], {3, in[0].dim(1)}); }, [](Rng& rng) {
    return std::vector<Tensor>{random_tensor({1, dim(rng)}, rng)};
  });
}

TEST_CASE("finite differences: matrix ops") {
  check_op([](const auto& in) { return matmul(in[0], in[1]); }, [](Rng& rng) {
    std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    return std::vector<Tensor>{random_tensor({m, k}, rng), random_tensor({k, n}, rng)};
  });
  check_op([](const auto& in) { return transpose(in[0]); },
           [](Rng& rng) { return std::vector<Tensor>{random_tensor({dim(rng), dim(rng)}, rng)}; });
  check_op([](const auto& in) { return reshape(in[0], {in[0].size()}); },
           [](Rng& rng) { return std::vector<Tensor>{random_tensor({dim(rng), dim(rng)}, rng)}; });
  check_op([](const auto& in) { return concat(in, 0); }, [](Rng& rng) {
    std::size_t c = dim(rng);
    return std::vector<Tensor>{random_tensor({dim(rng), c}, rng), random_tensor({dim(rng), c}, rng)};
  });
  check_op([](const auto& in) { return concat(in, 1); }, [](Rng& rng) {
    std::size_t r = dim(rng);
    return std::vector<Tensor>{random_tensor({r, dim(rng)}, rng), random_tensor({r, dim(rng)}, rng)};
  });
  check_op([](const auto& in) { return slice_cols(in[0], 1, in[0].dim(1)); }, [](Rng& rng) {
    return std::vector<Tensor>{random_tensor({dim(rng), 2 + rng.below(6)}, rng)};
  });
}

TEST_CASE("finite differences: reductions and normalizers") {
  auto one = [](Rng& rng) { return std::vector<Tensor>{random_tensor({dim(rng), dim(rng)}, rng)}; };
  check_op([](const auto& in) { return sum(in[0], 0); }, one);
  check_op([](const auto& in) { return sum(in[0], 1); }, one);
  check_op([](const auto& in) { return mean(in[0], 0); }, one);
  check_op([](const auto& in) { return mean(in[0], 1); }, one);
  check_op([](const auto& in) { return sum_all(in[0]); }, one);
  check_op([](const auto& in) { return mean_all(in[0]); }, one);
  check_op([](const auto& in) { return softmax(in[0], 0); }, one);
  check_op([](const auto& in) { return softmax(in[0], 1); }, one);
  check_op([](const auto& in) { return logsumexp(in[0], 0); }, one);
  check_op([](const auto& in) { return logsumexp(in[0], 1); }, one);
  check_op([](const auto& in) { return token_l2_norms(in[0]); }, one);
  check_op([](const auto& in) { return l2_normalize_rows(in[0]); }, one);
  check_op([](const auto& in) { return layer_norm(in[0], in[1], in[2]); }, [](Rng& rng) {
    std::size_t r = dim(rng), c = 2 + rng.below(7);
    return std::vector<Tensor>{random_tensor({r, c}, rng), random_tensor({c}, rng), random_tensor({c}, rng)};
  });
  check_op([](const auto& in) { return row_cosine(in[0], in[1]); }, [](Rng& rng) {
    std::size_t r = dim(rng), c = dim(rng) + 1;
    return std::vector<Tensor>{random_tensor({r, c}, rng), random_tensor({r, c}, rng)};
  });
  check_op([](const auto& in) { return cosine_similarity(in[0], in[1]); }, [](Rng& rng) {
    std::size_t c = dim(rng) + 1;
    return std::vector<Tensor>{random_tensor({c}, rng), random_tensor({c}, rng)};
  });
}

TEST_CASE("finite differences: index ops") {
  check_op([](const auto& in) { return gather_rows(in[0], {2, 0, 2}); },
           [](Rng& rng) { return std::vector<Tensor>{random_tensor({3 + rng.below(5), dim(rng)}, rng)}; });
  check_op([](const auto& in) { return scatter_rows(in[0], in[1], {2, 0}); }, [](Rng& rng) {
    std::size_t d = dim(rng);
    return std::vector<Tensor>{random_tensor({3 + rng.below(5), d}, rng), random_tensor({2, d}, rng)};
  });
}

TEST_CASE("finite differences: composite expression") {
  check_op(
      [](const auto& in) {
        Tensor h = layer_norm(matmul(in[0], in[1]), Tensor::full({in[1].dim(1)}, 1.0), Tensor::zeros({in[1].dim(1)}));
        return logsumexp(mul(softmax(h, 1), exp(scale(h, 0.5))), 1);
      },
      [](Rng& rng) {
        std::size_t m = dim(rng), k = dim(rng), n = 3 + rng.below(6);
        return std::vector<Tensor>{random_tensor({m, k}, rng), random_tensor({k, n}, rng)};
      });
}
