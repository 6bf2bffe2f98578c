#include <gtest/gtest.h>

#include <cmath>

#include "projsdpa/numerics/finite_difference.hpp"
#include "projsdpa/numerics/ops.hpp"
#include "projsdpa/numerics/rng.hpp"
#include "test_support.hpp"

using namespace projsdpa;

namespace {

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  return oracle::random_matrix(rng, r, c);
}

}  // namespace

TEST(Tensor, RejectsMismatchedDataLength) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor({1, 1, 1, 1}), ShapeError);
}

TEST(Parameter, GradMatchesValueShapeAndZeroes) {
  Parameter p(Tensor({3, 2}, 1.5));
  EXPECT_EQ(p.grad.shape(), p.value.shape());
  p.grad.fill(2.0);
  p.zero_grad();
  for (double g : p.grad.data()) EXPECT_EQ(g, 0.0);
}

// --- matmul ---------------------------------------------------------------

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor a = Tensor::from_rows({{1.5, -2.0}, {0.25, 7.0}});
  EXPECT_EQ(matmul(Tensor::identity(2), a), a);
}

TEST(Matmul, HandSum) {
  const Tensor c = matmul(Tensor::from_rows({{1, 2}, {3, 4}}),
                          Tensor::from_rows({{1}, {1}}));
  EXPECT_EQ(c, Tensor::from_rows({{3}, {7}}));
}

TEST(Matmul, MatchesScalarLoopOracle) {
  Rng rng(11);
  const Tensor a = random_matrix(rng, 5, 4);
  const Tensor b = random_matrix(rng, 4, 3);
  EXPECT_LT(max_abs_diff(matmul(a, b), oracle::matmul(a, b)), 1e-12);
}

TEST(Matmul, MatchesOracleOnRandomShapesUpTo16) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng.below(16), k = 1 + rng.below(16),
                      n = 1 + rng.below(16);
    const Tensor a = random_matrix(rng, m, k);
    const Tensor b = random_matrix(rng, k, n);
    ASSERT_LT(max_abs_diff(matmul(a, b), oracle::matmul(a, b)), 1e-12);
    ASSERT_LT(max_abs_diff(matmul_nt(a, transpose(b)), oracle::matmul(a, b)), 1e-12);
    ASSERT_LT(max_abs_diff(matmul_tn(transpose(a), b), oracle::matmul(a, b)), 1e-12);
  }
}

TEST(Matmul, BatchedAppliesPerLeadingIndex) {
  Rng rng(13);
  const Tensor a = rng_uniform(rng, {3, 2, 4}, -1, 1);
  const Tensor b = rng_uniform(rng, {3, 4, 5}, -1, 1);
  const Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{3, 2, 5}));
  for (std::size_t s = 0; s < 3; ++s)
    EXPECT_LT(max_abs_diff(c.slice(s), oracle::matmul(a.slice(s), b.slice(s))), 1e-12);
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({4, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[4x2]"), std::string::npos);
  }
}

TEST(Matmul, BackwardIsTextbookIdentity) {
  Rng rng(14);
  const Tensor a = random_matrix(rng, 3, 4);
  const Tensor b = random_matrix(rng, 4, 2);
  const Tensor g = random_matrix(rng, 3, 2);
  const auto grads = matmul_backward(a, b, g);
  EXPECT_LT(max_abs_diff(grads.da, oracle::matmul(g, transpose(b))), 1e-12);
  EXPECT_LT(max_abs_diff(grads.db, oracle::matmul(transpose(a), g)), 1e-12);
  EXPECT_THROW(matmul_backward(a, b, Tensor({2, 2})), ShapeError);
}

// --- softmax --------------------------------------------------------------

TEST(Softmax, SymmetricRow) {
  const Tensor y = softmax_rows(Tensor::from_rows({{0, 0}}));
  EXPECT_DOUBLE_EQ(y(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(y(0, 1), 0.5);
}

TEST(Softmax, LargeEqualLogitsDoNotOverflow) {
  const Tensor y = softmax_rows(Tensor::from_rows({{1000, 1000}}));
  EXPECT_DOUBLE_EQ(y(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(y(0, 1), 0.5);
}

TEST(Softmax, MatchesExtendedPrecisionOracle) {
  Rng rng(21);
  const Tensor x = random_matrix(rng, 3, 4);
  EXPECT_LT(max_abs_diff(softmax_rows(x), oracle::softmax_rows(x)), 1e-12);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + rng.below(8), n = 1 + rng.below(12);
    Tensor x = rng_uniform(rng, {m, n}, -30, 30);
    const Tensor y = softmax_rows(x);
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0;
      for (double v : y.row(i)) {
        ASSERT_GE(v, 0.0);
        s += v;
      }
      ASSERT_NEAR(s, 1.0, 1e-12);
      const double c = rng.uniform(-500, 500);
      for (double& v : x.row(i)) v += c;
    }
    ASSERT_LT(max_abs_diff(softmax_rows(x), y), 1e-12);
  }
}

TEST(Softmax, BackwardOfOnesIsZero) {
  Rng rng(23);
  const Tensor y = softmax_rows(random_matrix(rng, 4, 5));
  const Tensor dx = softmax_rows_backward(y, Tensor({4, 5}, 1.0));
  EXPECT_LT(max_abs(dx), 1e-15);
}

// --- L2 normalization -----------------------------------------------------

TEST(L2Normalize, ThreeFourFive) {
  const Tensor y = l2_normalize_rows(Tensor::from_rows({{3, 4}}));
  EXPECT_NEAR(y(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(y(0, 1), 0.8, 1e-15);
}

TEST(L2Normalize, UnitRowUnchanged) {
  const Tensor x = Tensor::from_rows({{0, 1, 0}});
  EXPECT_EQ(l2_normalize_rows(x), x);
}

TEST(L2Normalize, IdempotentAndUnitNorm) {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor y = l2_normalize_rows(rng_uniform(rng, {6, 1 + rng.below(10)}, -5, 5));
    ASSERT_LT(max_abs_diff(l2_normalize_rows(y), y), 1e-12);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double s = 0;
      for (double v : y.row(i)) s += v * v;
      ASSERT_NEAR(std::sqrt(s), 1.0, 1e-12);
    }
  }
}

TEST(L2Normalize, ZeroRowIsDegenerate) {
  EXPECT_THROW(l2_normalize_rows(Tensor::from_rows({{1, 1}, {0, 0}})),
               DegenerateRowError);
}

// --- layer norm -----------------------------------------------------------

TEST(LayerNorm, ConstantRowMapsToZero) {
  const Tensor y = layer_norm_rows(Tensor::from_rows({{3, 3, 3}}), Tensor({3}, 1.0),
                                   Tensor({3}, 0.0));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, AlreadyStandardizedRow) {
  const Tensor y = layer_norm_rows(Tensor::from_rows({{1, -1}}), Tensor({2}, 1.0),
                                   Tensor({2}, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(y(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(y(0, 1), -1.0);
}

TEST(LayerNorm, MatchesScalarOracle) {
  Rng rng(41);
  const Tensor x = random_matrix(rng, 1, 7);
  const Tensor gain = rng_uniform(rng, {7}, 0.5, 1.5);
  const Tensor bias = rng_uniform(rng, {7}, -0.5, 0.5);
  const Tensor y = layer_norm_rows(x, gain, bias, 1e-5);
  long double mean = 0, var = 0;
  for (double v : x.data()) mean += v;
  mean /= 7;
  for (double v : x.data()) var += (v - mean) * (v - mean);
  var /= 7;
  for (std::size_t j = 0; j < 7; ++j) {
    const double expect =
        static_cast<double>((x[j] - mean) / std::sqrt(var + 1e-5L) * gain[j] + bias[j]);
    EXPECT_NEAR(y(0, j), expect, 1e-12);
  }
}

TEST(LayerNorm, RejectsSingleColumn) {
  EXPECT_THROW(layer_norm_rows(Tensor({2, 1}), Tensor({1}), Tensor({1})),
               ShapeError);
}

// --- gradients vs finite differences ---------------------------------------

TEST(FiniteDifference, Quadratic) {
  const Tensor g = finite_difference_grad(
      [](const Tensor& x) { return x[0] * x[0] + x[1] * x[1]; },
      Tensor({2}, std::vector<double>{1, 2}), 1e-5);
  EXPECT_NEAR(g[0], 2.0, 1e-8);
  EXPECT_NEAR(g[1], 4.0, 1e-8);
}

TEST(FiniteDifference, ConstantHasZeroGradient) {
  const Tensor g = finite_difference_grad([](const Tensor&) { return 3.0; },
                                          Tensor({4}, 0.3));
  for (double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDifference, NonFiniteEvaluationPropagates) {
  EXPECT_THROW(finite_difference_grad(
                   [](const Tensor& x) { return std::log(x[0]); },
                   Tensor({1}, 0.0)),
               NumericError);
  EXPECT_THROW(finite_difference_grad([](const Tensor&) { return 0.0; },
                                      Tensor({1}), 0.0),
               ConfigError);
}

class OpGradients : public ::testing::Test {
 protected:
  Rng rng{51};
  static constexpr double kH = 1e-5;
  static constexpr double kTol = 1e-4;
};

TEST_F(OpGradients, Matmul) {
  const Tensor a = random_matrix(rng, 3, 4), b = random_matrix(rng, 4, 2),
               w = random_matrix(rng, 3, 2);
  const auto g = matmul_backward(a, b, w);
  const Tensor fa = finite_difference_grad(
      [&](const Tensor& x) { return weighted_sum(matmul(x, b), w); }, a, kH);
  const Tensor fb = finite_difference_grad(
      [&](const Tensor& x) { return weighted_sum(matmul(a, x), w); }, b, kH);
  EXPECT_LT(relative_error(g.da, fa), kTol);
  EXPECT_LT(relative_error(g.db, fb), kTol);
}

TEST_F(OpGradients, Softmax) {
  const Tensor x = random_matrix(rng, 3, 5), w = random_matrix(rng, 3, 5);
  const Tensor g = softmax_rows_backward(softmax_rows(x), w);
  const Tensor f = finite_difference_grad(
      [&](const Tensor& t) { return weighted_sum(softmax_rows(t), w); }, x, kH);
  EXPECT_LT(relative_error(g, f), kTol);
}

TEST_F(OpGradients, L2Normalize) {
  const Tensor x = random_matrix(rng, 4, 3), w = random_matrix(rng, 4, 3);
  const auto r = l2_normalize_rows_with_norms(x);
  const Tensor g = l2_normalize_rows_backward(r.y, r.norms, w);
  const Tensor f = finite_difference_grad(
      [&](const Tensor& t) { return weighted_sum(l2_normalize_rows(t), w); }, x, kH);
  EXPECT_LT(relative_error(g, f), kTol);
}

TEST_F(OpGradients, LayerNorm) {
  const Tensor x = random_matrix(rng, 3, 6), w = random_matrix(rng, 3, 6);
  const Tensor gain = rng_uniform(rng, {6}, 0.5, 1.5);
  const Tensor bias = rng_uniform(rng, {6}, -0.5, 0.5);
  const auto r = layer_norm_rows_with_cache(x, gain, bias);
  const auto g = layer_norm_rows_backward(r.cache, gain, w);
  EXPECT_LT(relative_error(g.dx, finite_difference_grad(
                                     [&](const Tensor& t) {
                                       return weighted_sum(layer_norm_rows(t, gain, bias), w);
                                     },
                                     x, kH)),
            kTol);
  EXPECT_LT(relative_error(g.dgain, finite_difference_grad(
                                        [&](const Tensor& t) {
                                          return weighted_sum(layer_norm_rows(x, t, bias), w);
                                        },
                                        gain, kH)),
            kTol);
  EXPECT_LT(relative_error(g.dbias, finite_difference_grad(
                                        [&](const Tensor& t) {
                                          return weighted_sum(layer_norm_rows(x, gain, t), w);
                                        },
                                        bias, kH)),
            kTol);
}

TEST_F(OpGradients, Relu) {
  // Keep inputs away from the kink.
  Tensor x = random_matrix(rng, 3, 4);
  for (double& v : x.data()) v += v > 0 ? 0.1 : -0.1;
  const Tensor w = random_matrix(rng, 3, 4);
  const Tensor g = relu_backward(relu(x), w);
  const Tensor f = finite_difference_grad(
      [&](const Tensor& t) { return weighted_sum(relu(t), w); }, x, kH);
  EXPECT_LT(relative_error(g, f), kTol);
}

TEST_F(OpGradients, BackwardRejectsMismatchedUpstream) {
  const Tensor y = softmax_rows(random_matrix(rng, 2, 3));
  EXPECT_THROW(softmax_rows_backward(y, Tensor({3, 2})), ShapeError);
}

// --- rng ------------------------------------------------------------------

TEST(RngTest, SameSeedIsBitIdentical) {
  Rng a(99), b(99);
  EXPECT_EQ(rng_normal(a, {50, 3}), rng_normal(b, {50, 3}));
  EXPECT_EQ(rng_uniform(a, {7}), rng_uniform(b, {7}));
}

TEST(RngTest, NormalMeanNearZero) {
  Rng rng(5);
  const Tensor t = rng_normal(rng, {100000});
  double mean = 0;
  for (double v : t.data()) mean += v;
  mean /= 1e5;
  EXPECT_LT(std::abs(mean), 0.02);
}

TEST(RngTest, UniformInUnitInterval) {
  Rng rng(6);
  const Tensor t = rng_uniform(rng, {100000});
  for (double v : t.data()) {
    ASSERT_GE(v, 0.0);
    ASSERT_LT(v, 1.0);
  }
}
