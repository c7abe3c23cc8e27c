#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "valsel/criteria.hpp"

namespace valsel {
namespace {

Matrix probs_of(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size(), c = rows.begin()->size();
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    std::size_t j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

TEST(Softmax, ZeroLogitsAreUniform) {
  const Matrix p = softmax(Matrix(1, 4));
  for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(p(0, k), 0.25);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const Matrix p = softmax(probs_of({{1000.0, 0.0}}));
  EXPECT_NEAR(p(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(p(0, 1), 0.0, 1e-15);
  EXPECT_TRUE(p.all_finite());
}

TEST(Softmax, MatchesNaiveOracle) {
  Rng rng(17);
  const Matrix z = oracle::random_matrix(rng, 50, 7, 3.0);
  const Matrix p = softmax(z);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto want = oracle::naive_softmax_row(z.row(i));
    double sum = 0.0;
    for (std::size_t k = 0; k < 7; ++k) {
      EXPECT_NEAR(p(i, k), want[k], 1e-12);
      EXPECT_GE(p(i, k), 0.0);
      sum += p(i, k);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Softmax, NonFiniteInputThrows) {
  EXPECT_THROW(softmax(probs_of({{NAN, 0.0}})), ContractError);
  EXPECT_THROW(softmax(probs_of({{INFINITY, 0.0}})), ContractError);
}

TEST(CrossEntropy, PerfectPredictionIsZero) {
  const auto r = ce_value_grad(probs_of({{1.0, 0.0}, {0.0, 1.0}}), std::vector<int>{0, 1});
  EXPECT_DOUBLE_EQ(r.value, 0.0);
}

TEST(CrossEntropy, QuarterProbability) {
  const auto r = ce_value_grad(probs_of({{0.25, 0.75}}), std::vector<int>{0});
  EXPECT_NEAR(r.value, 1.3863, 1e-4);
  EXPECT_NEAR(r.value, -std::log(0.25), 1e-15);
}

TEST(CrossEntropy, ZeroProbabilityIsFloored) {
  const auto r = ce_value_grad(probs_of({{0.0, 1.0}}), std::vector<int>{0});
  EXPECT_TRUE(std::isfinite(r.value));
  EXPECT_NEAR(r.value, -std::log(kProbFloor), 1e-9);
  EXPECT_TRUE(r.grad.all_finite());
}

TEST(CrossEntropy, GradientIsProbsMinusOneHotOverN) {
  const Matrix p = probs_of({{0.2, 0.8}, {0.6, 0.4}});
  const auto r = ce_value_grad(p, std::vector<int>{1, 0});
  EXPECT_DOUBLE_EQ(r.grad(0, 0), 0.1);
  EXPECT_DOUBLE_EQ(r.grad(0, 1), (0.8 - 1.0) / 2.0);
  EXPECT_DOUBLE_EQ(r.grad(1, 0), (0.6 - 1.0) / 2.0);
  EXPECT_DOUBLE_EQ(r.grad(1, 1), 0.2);
}

TEST(CrossEntropy, BadLabelsThrow) {
  EXPECT_THROW(ce_value_grad(probs_of({{0.5, 0.5}}), std::vector<int>{2}), ContractError);
  EXPECT_THROW(ce_value_grad(probs_of({{0.5, 0.5}}), std::vector<int>{0, 1}), ContractError);
}

TEST(Poly1, PerfectPredictionIsZero) {
  EXPECT_DOUBLE_EQ(poly1_value_grad(probs_of({{1.0, 0.0}}), std::vector<int>{0}, 1.0).value, 0.0);
}

TEST(Poly1, HalfProbabilityEpsilonOne) {
  const auto r = poly1_value_grad(probs_of({{0.5, 0.5}}), std::vector<int>{0}, 1.0);
  EXPECT_NEAR(r.value, 1.1931, 1e-4);
  EXPECT_NEAR(r.value, std::log(2.0) + 0.5, 1e-15);
}

TEST(Poly1, EpsilonZeroIsCrossEntropyBitForBit) {
  Rng rng(5);
  const Matrix p = softmax(oracle::random_matrix(rng, 20, 4, 3.0));
  std::vector<int> y(20);
  for (int& v : y) v = static_cast<int>(rng.below(4));
  const auto a = poly1_value_grad(p, y, 0.0);
  const auto b = ce_value_grad(p, y);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.grad, b.grad);
}

TEST(CLoss, PerfectPredictionIsZero) {
  EXPECT_DOUBLE_EQ(closs_value_grad(probs_of({{1.0, 0.0}}), std::vector<int>{0}, 0.5, 1.0).value, 0.0);
}

TEST(CLoss, MissedTargetTerm) {
  EXPECT_NEAR(1.0 - correntropy_kernel(1.0, 0.5), 0.8647, 1e-4);
  EXPECT_NEAR(1.0 - correntropy_kernel(1.0, 0.5), 1.0 - std::exp(-2.0), 1e-15);
  // target class at m = 0 and the other class at m = 1 contribute one term each
  const auto r = closs_value_grad(probs_of({{0.0, 1.0}}), std::vector<int>{0}, 0.5, 1.0);
  EXPECT_NEAR(r.value, 2.0 * (1.0 - std::exp(-2.0)), 1e-15);
}

TEST(CLoss, KernelIsEvenAndIncreasingInAbsU) {
  double prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double u = i / 50.0;
    const double v = 1.0 - correntropy_kernel(u, 0.5);
    EXPECT_DOUBLE_EQ(v, 1.0 - correntropy_kernel(-u, 0.5));
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(CLoss, ValueWithinBounds) {
  Rng rng(6);
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 2 + rng.below(9);
    const Matrix p = softmax(oracle::random_matrix(rng, 5, k, 5.0));
    std::vector<int> y(5);
    for (int& v : y) v = static_cast<int>(rng.below(k));
    const double beta = 0.5 + rng.uniform();
    const double value = closs_value_grad(p, y, 0.5, beta).value;
    EXPECT_GE(value, 0.0);
    EXPECT_LE(value, beta * static_cast<double>(k));
  }
}

TEST(LossSpec, Validation) {
  EXPECT_NO_THROW(LossSpec{}.validate());
  EXPECT_THROW((LossSpec{LossKind::CLoss, 0.0, 1.0, 1.0}.validate()), ContractError);
  EXPECT_THROW((LossSpec{LossKind::CLoss, 0.5, 0.0, 1.0}.validate()), ContractError);
  EXPECT_THROW((LossSpec{LossKind::Poly1, 0.5, 1.0, -0.1}.validate()), ContractError);
  EXPECT_EQ(loss_kind_from_string("c_loss"), LossKind::CLoss);
  EXPECT_EQ(to_string(LossKind::Poly1), "poly1");
}

// Gradient w.r.t. logits against central differences of the loss written
// directly from its definition.
TEST(Gradients, AllLossesMatchFiniteDifferencesOnLogits) {
  Rng rng(2024);
  const LossSpec specs[] = {{LossKind::CE}, {LossKind::Poly1, 0.5, 1.0, 1.0}, {LossKind::CLoss, 0.5, 1.0, 1.0}};
  for (const auto& spec : specs) {
    for (int trial = 0; trial < 60; ++trial) {
      const std::size_t k = 2 + rng.below(9), n = 1 + rng.below(6);
      Matrix z = oracle::random_matrix(rng, n, k, 3.0);
      std::vector<int> y(n);
      for (int& v : y) v = static_cast<int>(rng.below(k));
      const Matrix g = loss_value_grad(spec, softmax(z), y).grad;
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double saved = z.data()[i];
        z.data()[i] = saved + 1e-5;
        const double up = oracle::loss_from_logits(spec, z, y);
        z.data()[i] = saved - 1e-5;
        const double down = oracle::loss_from_logits(spec, z, y);
        z.data()[i] = saved;
        EXPECT_LE(oracle::rel_err(g.data()[i], (up - down) / 2e-5, 1e-8), 1e-4)
            << to_string(spec.kind) << " K=" << k;
      }
    }
  }
}

TEST(Accuracy, Counting) {
  EXPECT_DOUBLE_EQ(accuracy(probs_of({{0.9, 0.1}, {0.2, 0.8}}), std::vector<int>{0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(accuracy(probs_of({{0.9, 0.1}, {0.2, 0.8}}), std::vector<int>{0, 0}), 0.5);
  EXPECT_DOUBLE_EQ(accuracy(probs_of({{0.5, 0.5}}), std::vector<int>{0}), 1.0);
  EXPECT_DOUBLE_EQ(accuracy(probs_of({{0.5, 0.5}}), std::vector<int>{1}), 0.0);
  EXPECT_THROW(accuracy(Matrix(0, 2), std::vector<int>{}), ContractError);
}

TEST(Accuracy, InvariantUnderMonotoneRowTransforms) {
  Rng rng(9);
  for (int t = 0; t < 100; ++t) {
    const Matrix z = oracle::random_matrix(rng, 10, 5, 2.0);
    std::vector<int> y(10);
    for (int& v : y) v = static_cast<int>(rng.below(5));
    Matrix w = z;
    for (double& v : w.data()) v = std::exp(3.0 * v) + 7.0;
    EXPECT_EQ(accuracy(softmax(z), y), accuracy(w, y));
  }
}

TEST(EvaluateAll, PerfectOneHot) {
  const MetricVector m = evaluate_all(probs_of({{1.0, 0.0, 0.0}, {0.0, 0.0, 1.0}}), std::vector<int>{0, 2});
  EXPECT_EQ(m, (MetricVector{0.0, 0.0, 0.0, 1.0}));
}

TEST(EvaluateAll, ConsistentWithIndividualLosses) {
  Rng rng(10);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t k = 2 + rng.below(5), n = 1 + rng.below(20);
    const Matrix p = softmax(oracle::random_matrix(rng, n, k, 4.0));
    std::vector<int> y(n);
    for (int& v : y) v = static_cast<int>(rng.below(k));
    const MetricVector m = evaluate_all(p, y);
    ASSERT_EQ(m.ce, ce_value_grad(p, y).value);
    ASSERT_EQ(m.poly1, poly1_value_grad(p, y, 1.0).value);
    ASSERT_EQ(m.closs, closs_value_grad(p, y, 0.5, 1.0).value);
    ASSERT_EQ(m.acc, accuracy(p, y));
    ASSERT_GE(m.poly1, m.ce);
    ASSERT_GE(m.ce, 0.0);
  }
}

}  // namespace
}  // namespace valsel
