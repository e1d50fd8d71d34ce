#include <cmath>
#include <random>

#include "doctest.h"
#include "grad_check.hpp"
#include "primitive_checks.hpp"
#include "sgt/tensor.hpp"

using namespace sgt;
using sgt::testing::contract;
using sgt::testing::max_relative_error;
using sgt::testing::random_matrix;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

constexpr int kTrials = 100;
constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("softmax of [1,2,3]") {
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  const Matrix s = softmax_rows(Tensor::constant(row({1, 2, 3}))).value();
  CHECK(s(0, 0) == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
  CHECK(s(0, 1) == doctest::Approx(std::exp(2.0) / z).epsilon(1e-12));
  CHECK(s(0, 2) == doctest::Approx(std::exp(3.0) / z).epsilon(1e-12));
  CHECK(s(0, 0) == doctest::Approx(0.09003057).epsilon(1e-7));
  CHECK(s(0, 2) == doctest::Approx(0.66524096).epsilon(1e-7));
}

TEST_CASE("softmax is stable for large logits") {
  const Matrix s = softmax_rows(Tensor::constant(row({1000, 1001, 1002}))).value();
  CHECK(s.allFinite());
  CHECK(s.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s(0, 2) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0) + std::exp(-2.0))));
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 rng(3);
  const Matrix s = softmax_rows(Tensor::constant(random_matrix(7, 5, rng, 4.0))).value();
  for (Index i = 0; i < s.rows(); ++i) CHECK(std::abs(s.row(i).sum() - 1.0) < 1e-12);
}

TEST_CASE("sigmoid values") {
  CHECK(sigmoid(Tensor::scalar(1.0)).item() == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(sigmoid(Tensor::scalar(1.0)).item() == doctest::Approx(0.7310585786).epsilon(1e-10));
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  const double tiny = sigmoid(Tensor::scalar(-1e4)).item();
  CHECK(tiny > 0.0);
  CHECK(tiny == doctest::Approx(1.0 / (1.0 + std::exp(kLogitClamp))));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Tensor a = Tensor::constant(Matrix::Zero(2, 3));
  const Tensor b = Tensor::constant(Matrix::Zero(4, 2));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 2]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, b), DimensionError);
}

TEST_CASE("non-finite results raise") {
  const Tensor a = Tensor::constant(row({1.0, 2.0}));
  CHECK_THROWS_AS(scale(a, std::numeric_limits<double>::infinity()), NonFiniteError);
}

TEST_CASE("backward requires a scalar") {
  const Tensor a = Tensor::parameter(row({1.0, 2.0}));
  CHECK_THROWS_AS(backward(scale(a, 2.0)), std::logic_error);
}

TEST_CASE("gradients accumulate over shared inputs") {
  const Tensor x = Tensor::parameter(row({3.0}));
  const Gradients g = backward(sum(mul(x, x) + x));
  CHECK(g.of(x)(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("unreachable leaves have zero gradient") {
  const Tensor x = Tensor::parameter(row({1.0, 2.0}));
  const Tensor unused = Tensor::parameter(row({5.0}));
  const Gradients g = backward(sum(x));
  CHECK_FALSE(g.contains(unused));
  CHECK(g.of(unused).isZero());
  CHECK(g.of(unused).rows() == 1);
}

TEST_CASE("constants receive no gradient") {
  const Tensor c = Tensor::constant(row({1.0, 2.0}));
  const Tensor x = Tensor::parameter(row({1.0, 1.0}));
  const Gradients g = backward(sum(mul(c, x)));
  CHECK_FALSE(g.contains(c));
  CHECK(g.of(x)(0, 1) == doctest::Approx(2.0));
}

TEST_CASE("backward is deterministic") {
  std::mt19937_64 rng(9);
  const Tensor a = Tensor::parameter(random_matrix(6, 4, rng));
  const Tensor b = Tensor::parameter(random_matrix(4, 5, rng));
  auto run = [&] {
    const Tensor h = gelu(matmul(a, b));
    return backward(mean(mul(h, h)));
  };
  const Gradients g1 = run(), g2 = run();
  CHECK(g1.of(a) == g2.of(a));
  CHECK(g1.of(b) == g2.of(b));
}

TEST_CASE("binary cross-entropy examples") {
  const Tensor p = Tensor::parameter(row({0.5}));
  const Tensor loss = binary_cross_entropy(p, Tensor::constant(row({1.0})));
  CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(backward(loss).of(p)(0, 0) == doctest::Approx(-2.0).epsilon(1e-12));
  const double clamped = binary_cross_entropy(Tensor::constant(row({0.0})), Tensor::constant(row({1.0}))).item();
  CHECK(std::isfinite(clamped));
  CHECK(clamped == doctest::Approx(-std::log(kProbEps)));
}

TEST_CASE("layer norm output statistics") {
  std::mt19937_64 rng(4);
  const Matrix x = random_matrix(5, 16, rng, 3.0);
  const Tensor y = layer_norm(Tensor::constant(x), Tensor::constant(Matrix::Ones(1, 16)),
                              Tensor::constant(Matrix::Zero(1, 16)));
  for (Index i = 0; i < 5; ++i) {
    const auto r = y.value().row(i);
    CHECK(std::abs(r.mean()) < 1e-12);
    CHECK((r.array().square().mean()) == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("group_left_matmul applies W to each block") {
  std::mt19937_64 rng(5);
  const Matrix w = random_matrix(2, 3, rng);
  const Matrix x = random_matrix(9, 4, rng);
  const Matrix y = group_left_matmul(Tensor::constant(w), Tensor::constant(x), 3).value();
  REQUIRE(y.rows() == 6);
  for (Index g = 0; g < 3; ++g) {
    const Matrix expect = w * x.middleRows(3 * g, 3);
    CHECK((y.middleRows(2 * g, 2) - expect).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("multi-head attention matches a dense per-head oracle") {
  std::mt19937_64 rng(6);
  const Index groups = 2, nq = 3, nk = 4, d = 6, heads = 2, dh = d / heads;
  const Matrix q = random_matrix(groups * nq, d, rng), k = random_matrix(groups * nk, d, rng),
               v = random_matrix(groups * nk, d, rng);
  const Matrix out = multi_head_attention(Tensor::constant(q), Tensor::constant(k),
                                          Tensor::constant(v), groups, heads)
                         .value();
  for (Index g = 0; g < groups; ++g) {
    for (Index h = 0; h < heads; ++h) {
      for (Index i = 0; i < nq; ++i) {
        std::vector<double> s(static_cast<std::size_t>(nk));
        double z = 0.0;
        for (Index j = 0; j < nk; ++j) {
          double dot = 0.0;
          for (Index c = 0; c < dh; ++c) dot += q(g * nq + i, h * dh + c) * k(g * nk + j, h * dh + c);
          s[static_cast<std::size_t>(j)] = std::exp(dot / std::sqrt(static_cast<double>(dh)));
          z += s[static_cast<std::size_t>(j)];
        }
        for (Index c = 0; c < dh; ++c) {
          double acc = 0.0;
          for (Index j = 0; j < nk; ++j) acc += s[static_cast<std::size_t>(j)] / z * v(g * nk + j, h * dh + c);
          CHECK(std::abs(out(g * nq + i, h * dh + c) - acc) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("matmul MACs are counted under the active category") {
  MacCounter counter;
  {
    MacScope scope(&counter, "projection");
    matmul(Tensor::constant(Matrix::Ones(3, 4)), Tensor::constant(Matrix::Ones(4, 5)));
  }
  CHECK(counter.counts().at("projection") == 60);
  matmul(Tensor::constant(Matrix::Ones(3, 4)), Tensor::constant(Matrix::Ones(4, 5)));
  CHECK(counter.total() == 60);
}

// Finite-difference checks, 100 seeds per primitive ---------------------------

TEST_CASE("gradient checks of every primitive") {
  for (const auto& check : sgt::testing::primitive_checks()) {
    INFO(check.name);
    CHECK(sgt::testing::worst_over_seeds(check, kTrials) < kTol);
  }
}
