#include <gtest/gtest.h>

#include <cmath>

#include "dsml/common.hpp"
#include "dsml/ops.hpp"
#include "dsml/tensor.hpp"

using namespace dsml;

namespace {

// Independent naive triple-loop oracle for the linear layer.
Tensor linear_oracle(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor out({x.rows(), w.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < w.rows(); ++j) {
      double acc = b(j);
      for (std::size_t k = 0; k < x.cols(); ++k) acc += w(j, k) * x(i, k);
      out(i, j) = acc;
    }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_TRUE(a.same_shape(b));
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a(i) - b(i)));
  return m;
}

}  // namespace

TEST(Tensor, ShapeAndData) {
  Tensor t({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  t(1, 2) = 4.5;
  EXPECT_DOUBLE_EQ(t(5), 4.5);
  EXPECT_THROW(Tensor({2, 2}, {1.0}), ShapeError);
}

TEST(Tensor, FiniteCheck) {
  Tensor t({3});
  t(1) = std::nan("");
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(t.require_finite("test"), NumericError);
}

TEST(SeededRng, DeterministicStreams) {
  SeededRng a(123), b(123), c(124);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.next_u64(), b.next_u64());
  }
  EXPECT_NE(a.next_u64(), c.next_u64());

  SeededRng d(7);
  const std::string state = d.state();
  const double v1 = d.uniform();
  SeededRng e(0);
  e.restore(state);
  EXPECT_DOUBLE_EQ(e.uniform(), v1);
}

TEST(SeededRng, UniformRangeAndIndex) {
  SeededRng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(rng.index(7), 7u);
  }
}

TEST(Linear, IdentityCase) {
  SeededRng rng(1);
  Linear lin(2, 2, true, rng);
  lin.weight().value = Tensor({2, 2}, {1, 0, 0, 1});
  lin.bias().value = Tensor({2}, {0, 0});
  const Tensor out = lin.forward(Tensor::row({1, 2}));
  EXPECT_DOUBLE_EQ(out(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(out(0, 1), 2.0);
}

TEST(Linear, DirectEvaluation) {
  SeededRng rng(1);
  Linear lin(2, 1, true, rng);
  lin.weight().value = Tensor({1, 2}, {2, 3});
  lin.bias().value = Tensor({1}, {1});
  const Tensor out = lin.forward(Tensor::row({1, 1}));
  EXPECT_DOUBLE_EQ(out(0, 0), 6.0);
}

TEST(Linear, MatchesNaiveOracle) {
  SeededRng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t B = 1 + rng.index(6);
    const std::size_t din = 1 + rng.index(6);
    const std::size_t dout = 1 + rng.index(6);
    Linear lin(din, dout, true, rng);
    for (double& v : lin.bias().value.flat()) v = rng.uniform(-1, 1);
    Tensor x({B, din});
    for (double& v : x.flat()) v = rng.uniform(-2, 2);
    const Tensor got = lin.forward(x);
    const Tensor want = linear_oracle(x, lin.weight().value, lin.bias().value);
    for (std::size_t i = 0; i < got.numel(); ++i) {
      const double denom = std::max(1.0, std::abs(want(i)));
      EXPECT_LT(std::abs(got(i) - want(i)) / denom, 1e-12);
    }
  }
}

TEST(Linear, RejectsShapeMismatch) {
  SeededRng rng(1);
  Linear lin(3, 2, true, rng);
  EXPECT_THROW(lin.forward(Tensor({2, 4})), ShapeError);
}

TEST(Relu, Definition) {
  Relu relu;
  const Tensor out = relu.forward(Tensor::vec({-1, 0, 2}));
  EXPECT_DOUBLE_EQ(out(0), 0.0);
  EXPECT_DOUBLE_EQ(out(1), 0.0);
  EXPECT_DOUBLE_EQ(out(2), 2.0);
}

TEST(Relu, GradientGate) {
  Relu relu;
  relu.forward(Tensor::vec({-3, 3}));
  const Tensor g = relu.backward(Tensor::vec({5, 5}));
  EXPECT_DOUBLE_EQ(g(0), 0.0);
  EXPECT_DOUBLE_EQ(g(1), 5.0);
}

TEST(Relu, FiniteDifferenceAwayFromKink) {
  SeededRng rng(3);
  Relu relu;
  Tensor x({10});
  for (double& v : x.flat()) {
    const double mag = rng.uniform(0.1, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  Tensor coeff({10});
  for (double& v : coeff.flat()) v = rng.uniform(-1, 1);
  relu.forward(x);
  const Tensor grad = relu.backward(coeff);
  auto f = [&]() {
    double s = 0.0;
    const Tensor out = relu.forward(x);
    for (std::size_t i = 0; i < out.numel(); ++i) s += out(i) * coeff(i);
    return s;
  };
  EXPECT_LT(finite_diff_gradcheck(f, {{&x, &grad}}, 1e-5), 1e-4);
}

TEST(SoftmaxCe, UniformLogits) {
  const Tensor logits = Tensor::zeros({2, 4});
  const CeResult r = softmax_cross_entropy(logits, {1, 3});
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-12);
}

TEST(SoftmaxCe, ConfidentLimit) {
  Tensor logits = Tensor::zeros({1, 5});
  logits(0, 2) = 50.0;
  const CeResult r = softmax_cross_entropy(logits, {2});
  EXPECT_LT(r.loss, 1e-9);
}

TEST(SoftmaxCe, RejectsOutOfRangeLabel) {
  EXPECT_THROW(softmax_cross_entropy(Tensor::zeros({1, 3}), {3}), ValueError);
  EXPECT_THROW(softmax_cross_entropy(Tensor::zeros({1, 3}), {-1}), ValueError);
}

TEST(SoftmaxCe, FiniteDifference) {
  SeededRng rng(11);
  Tensor logits({4, 6});
  for (double& v : logits.flat()) v = rng.uniform(-2, 2);
  std::vector<int> labels = {0, 5, 2, 2};
  const CeResult r = softmax_cross_entropy(logits, labels);
  auto f = [&]() { return softmax_cross_entropy(logits, labels).loss; };
  EXPECT_LT(finite_diff_gradcheck(f, {{&logits, &r.grad_logits}}, 1e-5), 1e-4);
}

TEST(BatchNorm, ConstantColumnGivesBeta) {
  BatchNorm1d bn(2);
  bn.beta().value = Tensor({2}, {0.7, -0.3});
  Tensor x({4, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    x(i, 0) = 5.0;  // constant column
    x(i, 1) = static_cast<double>(i);
  }
  const Tensor out = bn.forward(x, Mode::kTrain);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out(i, 0), 0.7, 1e-12);
}

TEST(BatchNorm, NormalizedInputPassesThrough) {
  BatchNorm1d bn(1);
  // batch mean 0, variance 1
  Tensor x({2, 1}, {-1.0, 1.0});
  const Tensor out = bn.forward(x, Mode::kTrain);
  EXPECT_NEAR(out(0, 0), -1.0, 1e-4);  // eps shrinks slightly
  EXPECT_NEAR(out(1, 0), 1.0, 1e-4);
}

TEST(BatchNorm, RejectsTinyTrainBatch) {
  BatchNorm1d bn(3);
  EXPECT_THROW(bn.forward(Tensor({1, 3}), Mode::kTrain), ValueError);
  EXPECT_NO_THROW(bn.forward(Tensor({1, 3}), Mode::kEval));
}

TEST(BatchNorm, EvalUsesRunningStats) {
  BatchNorm1d bn(1);
  SeededRng rng(5);
  for (int step = 0; step < 50; ++step) {
    Tensor x({8, 1});
    for (double& v : x.flat()) v = 3.0 + 2.0 * rng.normal();
    bn.forward(x, Mode::kTrain);
  }
  Tensor probe({2, 1}, {3.0, 5.0});
  const Tensor out = bn.forward(probe, Mode::kEval);
  EXPECT_NEAR(out(0, 0), 0.0, 0.3);
  EXPECT_NEAR(out(1, 0), 1.0, 0.4);
}

TEST(BatchNorm, FiniteDifference) {
  SeededRng rng(17);
  BatchNorm1d bn(4);
  Tensor x({6, 4});
  for (double& v : x.flat()) v = rng.uniform(-2, 2);
  Tensor coeff({6, 4});
  for (double& v : coeff.flat()) v = rng.uniform(-1, 1);
  bn.forward(x, Mode::kTrain);
  const Tensor grad_x = bn.backward(coeff);
  auto f = [&]() {
    double s = 0.0;
    const Tensor out = bn.forward(x, Mode::kTrain);
    for (std::size_t i = 0; i < out.numel(); ++i) s += out(i) * coeff(i);
    return s;
  };
  EXPECT_LT(finite_diff_gradcheck(f, {{&x, &grad_x}}, 1e-5), 1e-3);
}

TEST(Dropout, ZeroPIsIdentity) {
  Dropout drop(0.0);
  SeededRng rng(1);
  Tensor x = Tensor::vec({1, 2, 3});
  EXPECT_TRUE(bit_equal(drop.forward(x, Mode::kTrain, rng), x));
}

TEST(Dropout, EvalIsIdentity) {
  Dropout drop(0.9);
  SeededRng rng(1);
  Tensor x = Tensor::vec({1, 2, 3});
  EXPECT_TRUE(bit_equal(drop.forward(x, Mode::kEval, rng), x));
}

TEST(Dropout, RejectsPOfOne) { EXPECT_THROW(Dropout(1.0), ValueError); }

TEST(Dropout, MonteCarloSurvivorStats) {
  const std::size_t n = 100000;
  Dropout drop(0.5);
  SeededRng rng(99);
  Tensor x = Tensor::full({n}, 1.0);
  const Tensor out = drop.forward(x, Mode::kTrain, rng);
  std::size_t survivors = 0;
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (out(i) != 0.0) ++survivors;
    mean += out(i);
  }
  mean /= static_cast<double>(n);
  const double survivor_frac = static_cast<double>(survivors) /
                               static_cast<double>(n);
  EXPECT_NEAR(survivor_frac, 0.5, 0.01);
  EXPECT_NEAR(mean, 1.0, 0.02);  // inverted scaling preserves the mean
}

TEST(Sgd, VanillaStep) {
  ParamSlot p(Tensor::vec({1.0, 2.0}));
  p.grad = Tensor::vec({0.5, -0.5});
  sgd_momentum_step(p, 0.1, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(p.value(0), 0.95);
  EXPECT_DOUBLE_EQ(p.value(1), 2.05);
}

TEST(Sgd, ZeroGradLeavesValue) {
  ParamSlot p(Tensor::vec({1.0}));
  sgd_momentum_step(p, 0.1, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(p.value(0), 1.0);
}

TEST(Sgd, MomentumRecurrence) {
  // two steps on constant grad g: updates lr*g then lr*1.9g
  ParamSlot p(Tensor::vec({0.0}));
  const double g = 2.0, lr = 0.1;
  p.grad(0) = g;
  sgd_momentum_step(p, lr, 0.9, 0.0);
  p.grad(0) = g;
  sgd_momentum_step(p, lr, 0.9, 0.0);
  EXPECT_NEAR(p.value(0), -lr * (g + 1.9 * g), 1e-12);
}

TEST(Sgd, WeightDecayPullsTowardZero) {
  ParamSlot p(Tensor::vec({1.0}));
  sgd_momentum_step(p, 0.1, 0.0, 0.5);
  EXPECT_DOUBLE_EQ(p.value(0), 1.0 - 0.1 * 0.5);
}

TEST(GradCheck, ConstantFunctionIsExact) {
  Tensor w = Tensor::vec({1.0, 2.0});
  Tensor zero_grad = Tensor::zeros({2});
  auto f = [&]() { return 7.0; };
  EXPECT_DOUBLE_EQ(finite_diff_gradcheck(f, {{&w, &zero_grad}}, 1e-5), 0.0);
}

TEST(GradCheck, QuadraticIsNearExact) {
  Tensor w = Tensor::vec({0.3, -1.2, 2.0});
  Tensor grad = w;  // d/dw of 0.5||w||^2
  auto f = [&]() {
    double s = 0.0;
    for (double v : w.flat()) s += v * v;
    return 0.5 * s;
  };
  EXPECT_LT(finite_diff_gradcheck(f, {{&w, &grad}}, 1e-5), 1e-6);
}

TEST(GradCheck, RejectsNonFiniteObjective) {
  Tensor w = Tensor::vec({1.0});
  Tensor grad = Tensor::vec({1.0});
  auto f = [&]() { return std::nan(""); };
  EXPECT_THROW(finite_diff_gradcheck(f, {{&w, &grad}}, 1e-5), NumericError);
}
