#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "bias/numkit.hpp"

using namespace bias;

namespace {

Dense<double> random_dense(Index r, Index c, std::mt19937_64& rng, double scale = 3.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Dense<double> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.reshaped<Eigen::AutoOrder>()(i) = u(rng);
  return m;
}

}  // namespace

TEST(Matmul, ShapeMismatchThrows) {
  Dense<double> a = Dense<double>::Ones(2, 3);
  Dense<double> b = Dense<double>::Ones(2, 3);
  EXPECT_THROW(matmul(a, b), DimensionError);
  EXPECT_EQ(matmul(a, b.transpose()).rows(), 2);
}

TEST(Matmul, MatchesLoopProduct) {
  std::mt19937_64 rng(3);
  const auto a = random_dense(4, 5, rng);
  const auto b = random_dense(5, 3, rng);
  const auto c = matmul(a, b);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 3; ++j) {
      double s = 0;
      for (Index k = 0; k < 5; ++k) s += a(i, k) * b(k, j);
      EXPECT_NEAR(c(i, j), s, 1e-12);
    }
}

TEST(Softmax, RowsAreDistributions) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto logits = random_dense(6, 1 + trial % 9, rng, 40.0);
    const auto p = softmax_rows(logits);
    for (Index r = 0; r < p.rows(); ++r) {
      EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
      EXPECT_GE(p.row(r).minCoeff(), 0.0);
    }
  }
}

TEST(Softmax, ShiftInvariantAndStableForLargeLogits) {
  Dense<double> logits(1, 3);
  logits << 1000.0, 1001.0, 1002.0;
  const auto p = softmax_rows(logits);
  Dense<double> shifted(1, 3);
  shifted << 0.0, 1.0, 2.0;
  const auto q = softmax_rows(shifted);
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR((p - q).cwiseAbs().maxCoeff(), 0.0, 1e-12);
  const double z = 1 + std::exp(1.0) + std::exp(2.0);
  EXPECT_NEAR(q(0, 2), std::exp(2.0) / z, 1e-12);
}

TEST(CrossEntropy, UniformGivesLogK) {
  Dense<double> p = Dense<double>::Constant(3, 4, 0.25);
  const std::vector<int> t{0, 1, 3};
  EXPECT_NEAR(cross_entropy(p, t), std::log(4.0), 1e-12);
}

TEST(CrossEntropy, SkipsNegativeTargetsAndFloorsZeros) {
  Dense<double> p(3, 2);
  p << 0.5, 0.5, 1.0, 0.0, 0.2, 0.8;
  const std::vector<int> t{-1, 1, 1};
  EXPECT_NEAR(cross_entropy(p, t), (-std::log(kProbFloor) - std::log(0.8)) / 2.0, 1e-9);
  const std::vector<int> bad{0, 2, 0};
  EXPECT_THROW(cross_entropy(p, bad), IndexError);
  const std::vector<int> short_t{0};
  EXPECT_THROW(cross_entropy(p, short_t), DimensionError);
}

TEST(Adam, MatchesScalarReference) {
  std::mt19937_64 rng(5);
  Parameter<double> p("w", 3, 4);
  p.value = random_dense(3, 4, rng);
  Dense<double> value = p.value, m = Dense<double>::Zero(3, 4), v = m;
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  for (int step = 1; step <= 25; ++step) {
    p.grad = random_dense(3, 4, rng);
    adam_step(p, cfg);
    for (Index i = 0; i < value.size(); ++i) {
      const double g = p.grad.reshaped<Eigen::AutoOrder>()(i);
      double& mi = m.reshaped<Eigen::AutoOrder>()(i);
      double& vi = v.reshaped<Eigen::AutoOrder>()(i);
      mi = 0.9 * mi + 0.1 * g;
      vi = 0.999 * vi + 0.001 * g * g;
      const double mh = mi / (1 - std::pow(0.9, step));
      const double vh = vi / (1 - std::pow(0.999, step));
      value.reshaped<Eigen::AutoOrder>()(i) -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  EXPECT_LT((p.value - value).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(p.step_count, 25);
}

TEST(Adam, ZeroGradientLeavesValuesUnchanged) {
  std::mt19937_64 rng(9);
  Parameter<float> p("w", 5, 5);
  p.value = random_dense(5, 5, rng).cast<float>();
  p.grad = random_dense(5, 5, rng).cast<float>();
  adam_step(p, AdamConfig{});
  const Dense<float> before = p.value;
  p.zero_grad();
  for (int i = 0; i < 10; ++i) adam_step(p, AdamConfig{});
  EXPECT_EQ(p.value, before);
}

TEST(Adam, RejectsBadConfig) {
  AdamConfig cfg;
  cfg.beta1 = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(ClipGradNorm, RescalesToMaximum) {
  Parameter<double> a("a", 1, 2), b("b", 1, 1);
  a.grad << 3.0, 0.0;
  b.grad << 4.0;
  std::vector<Parameter<double>*> ps{&a, &b};
  EXPECT_NEAR(clip_grad_norm<double>(ps, 1.0), 5.0, 1e-12);
  EXPECT_NEAR(a.grad(0, 0), 0.6, 1e-12);
  EXPECT_NEAR(b.grad(0, 0), 0.8, 1e-12);
  EXPECT_NEAR(clip_grad_norm<double>(ps, 0.0), 1.0, 1e-12);
  EXPECT_NEAR(a.grad(0, 0), 0.6, 1e-12);
}

TEST(FiniteDiff, QuadraticHasExactGradient) {
  // f(w) = sum(c .* w.^2) / 2 has gradient c .* w
  std::mt19937_64 rng(21);
  Parameter<double> w("w", 4, 3);
  w.value = random_dense(4, 3, rng);
  const Dense<double> c = random_dense(4, 3, rng).cwiseAbs();
  auto loss = [&] { return 0.5 * (c.array() * w.value.array().square()).sum(); };
  w.grad = (c.array() * w.value.array()).matrix();
  std::vector<Parameter<double>*> ps{&w};
  const auto res = finite_diff_check<double>(loss, ps, 1e-5);
  EXPECT_EQ(res.coords_checked, 12u);
  EXPECT_LT(res.max_rel_error, 1e-8);
}

TEST(FiniteDiff, FlippedGradientIsDetected) {
  std::mt19937_64 rng(22);
  Parameter<double> w("w", 3, 3);
  w.value = random_dense(3, 3, rng);
  auto loss = [&] { return w.value.array().cube().sum() / 3.0; };
  w.grad = w.value.array().square().matrix();
  w.grad(1, 2) = -w.grad(1, 2);
  std::vector<Parameter<double>*> ps{&w};
  const auto res = finite_diff_check<double>(loss, ps);
  EXPECT_GT(res.max_rel_error, 0.5);
  EXPECT_EQ(res.worst_index, 1 * 3 + 2);  // storage (row-major) order
}

TEST(FiniteDiff, RestoresValues) {
  Parameter<double> w("w", 2, 2);
  w.value << 1, 2, 3, 4;
  const Dense<double> before = w.value;
  std::vector<Parameter<double>*> ps{&w};
  finite_diff_check<double>([&] { return w.value.sum(); }, ps);
  EXPECT_EQ(w.value, before);
}

TEST(FiniteDiff, NondeterministicLossThrows) {
  Parameter<double> w("w", 1, 1);
  std::vector<Parameter<double>*> ps{&w};
  int calls = 0;
  EXPECT_THROW(finite_diff_check<double>([&] { return static_cast<double>(++calls); }, ps),
               DeterminismError);
}

TEST(FiniteDiff, SamplesLargeParameterSets) {
  Parameter<double> w("w", 100, 100);
  w.grad.setOnes();
  std::vector<Parameter<double>*> ps{&w};
  const auto res = finite_diff_check<double>([&] { return w.value.sum(); }, ps, 1e-4, 300, 7);
  EXPECT_EQ(res.coords_checked, 300u);
  EXPECT_LT(res.max_rel_error, 1e-8);
}
