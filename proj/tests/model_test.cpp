#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "vflkit/model.hpp"

using namespace vflkit;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

// Central differences of sum(w .* f(x)) with respect to each input entry.
Matrix numeric_input_grad(const LocalModel& model, const Matrix& x, const Matrix& w, double h) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      Matrix xp = x, xm = x;
      xp(i, j) += h;
      xm(i, j) -= h;
      g(i, j) = ((forward(model, xp).cwiseProduct(w)).sum() - (forward(model, xm).cwiseProduct(w)).sum()) / (2 * h);
    }
  return g;
}

}  // namespace

TEST(Forward, IdentityLinearReturnsInput) {
  LocalModel m({Layer::linear(Matrix::Identity(3, 3), Vector::Zero(3))});
  Matrix x = make_matrix({{1.5, -2.0, 0.25}, {0.0, 4.0, -1.0}});
  EXPECT_EQ(forward(m, x), x);
}

TEST(Forward, SigmoidOfZeroIsHalf) {
  LocalModel m({Layer::activation(LayerKind::sigmoid, 4)});
  Matrix out = forward(m, Matrix::Zero(2, 4));
  for (Eigen::Index i = 0; i < out.size(); ++i) EXPECT_DOUBLE_EQ(out.data()[i], 0.5);
}

TEST(Forward, HandArithmeticLinear) {
  LocalModel m({Layer::linear(make_matrix({{1.0, -1.0}}), Vector::Zero(1))});
  EXPECT_DOUBLE_EQ(forward(m, make_matrix({{2.0, 3.0}}))(0, 0), -1.0);
}

TEST(Forward, LinearMatchesLoopOracle) {
  std::mt19937_64 rng(3);
  Matrix w = random_matrix(4, 5, rng);
  Vector b = random_matrix(4, 1, rng);
  Matrix x = random_matrix(6, 5, rng);
  Matrix y = forward(LocalModel({Layer::linear(w, b)}), x);
  for (int i = 0; i < 6; ++i)
    for (int o = 0; o < 4; ++o) {
      double acc = b[o];
      for (int k = 0; k < 5; ++k) acc += x(i, k) * w(o, k);
      EXPECT_NEAR(y(i, o), acc, 1e-12);
    }
}

TEST(Forward, SoftmaxRowsAreDistributions) {
  LocalModel m({Layer::activation(LayerKind::softmax, 3)});
  Matrix x = make_matrix({{30.0, 29.0, -30.0}, {0.1, 0.2, 0.3}, {-5.0, -5.0, -5.0}});
  Matrix y = forward(m, x);
  Matrix big = forward(m, make_matrix({{1000.0, 999.0, -1000.0}}));
  EXPECT_TRUE(big.allFinite());
  EXPECT_NEAR(big.sum(), 1.0, 1e-12);
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    EXPECT_NEAR(y.row(i).sum(), 1.0, 1e-12);
    for (Eigen::Index j = 0; j < 3; ++j) {
      EXPECT_GT(y(i, j), 0.0);
      EXPECT_LT(y(i, j), 1.0);
    }
  }
  double e1 = std::exp(0.1), e2 = std::exp(0.2), e3 = std::exp(0.3);
  EXPECT_NEAR(y(1, 2), e3 / (e1 + e2 + e3), 1e-15);
}

TEST(Forward, PureFunction) {
  std::mt19937_64 rng(5);
  LocalModel m = make_mlp({6, 8, 3}, rng);
  Matrix x = random_matrix(4, 6, rng);
  Matrix a = forward(m, x), b = forward(m, x);
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(double) * a.size()));
}

TEST(Forward, TraceReplayIsBitExact) {
  std::mt19937_64 rng(6);
  LocalModel m = make_mlp({5, 7, 4}, rng, LayerKind::relu, true, LayerKind::softmax);
  ForwardTrace tr;
  forward(m, random_matrix(3, 5, rng), tr);
  ASSERT_EQ(tr.size(), m.num_layers());
  for (size_t i = 0; i < tr.size(); ++i) EXPECT_EQ(apply_layer(m.layer(i), tr.inputs[i]), tr.outputs[i]);
}

TEST(Forward, RejectsBadInput) {
  LocalModel m({Layer::linear(Matrix::Identity(2, 2), Vector::Zero(2))});
  EXPECT_THROW(forward(m, Matrix::Zero(1, 3)), std::invalid_argument);
  Matrix bad = Matrix::Zero(1, 2);
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(forward(m, bad), std::invalid_argument);
  bad(0, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(forward(m, bad), std::invalid_argument);
}

TEST(Model, ValidateRejectsBrokenChains) {
  EXPECT_THROW(LocalModel({Layer::linear(Matrix::Zero(3, 2), Vector::Zero(3)), Layer::activation(LayerKind::relu, 4)}),
               std::invalid_argument);
  EXPECT_THROW(Layer::linear(Matrix::Zero(3, 2), Vector::Zero(2)), std::invalid_argument);
  Matrix nan_w = Matrix::Zero(1, 1);
  nan_w(0, 0) = std::nan("");
  EXPECT_THROW(Layer::linear(nan_w, Vector::Zero(1)), std::invalid_argument);
}

TEST(Backward, LinearInputGradIsWTransposeTimesGrad) {
  std::mt19937_64 rng(7);
  Matrix w = random_matrix(3, 4, rng);
  LocalModel m({Layer::linear(w, Vector::Zero(3))});
  Matrix x = random_matrix(2, 4, rng);
  ForwardTrace tr;
  forward(m, x, tr);
  Matrix g = random_matrix(2, 3, rng);
  BackwardResult br = backward(m, tr, g);
  EXPECT_TRUE(br.input_grad.isApprox(g * w, 1e-14));
  EXPECT_TRUE(br.params.weights[0].isApprox(g.transpose() * x, 1e-14));
  EXPECT_TRUE(br.params.bias[0].isApprox(g.colwise().sum().transpose(), 1e-14));
}

TEST(Backward, ReluBlocksNegativePreactivation) {
  LocalModel m({Layer::activation(LayerKind::relu, 3)});
  ForwardTrace tr;
  forward(m, make_matrix({{-1.0, 2.0, -0.5}}), tr);
  Matrix g = backward(m, tr, make_matrix({{1.0, 1.0, 1.0}})).input_grad;
  EXPECT_EQ(g(0, 0), 0.0);
  EXPECT_EQ(g(0, 1), 1.0);
  EXPECT_EQ(g(0, 2), 0.0);
}

TEST(Backward, TwoLayerNetMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    LocalModel m = make_mlp({4, 6, 3}, rng, LayerKind::sigmoid, true, LayerKind::softmax);
    Matrix x = random_matrix(3, 4, rng);
    Matrix w = random_matrix(3, 3, rng);
    ForwardTrace tr;
    forward(m, x, tr);
    Matrix an = backward(m, tr, w).input_grad;
    Matrix num = numeric_input_grad(m, x, w, 1e-5);
    for (Eigen::Index i = 0; i < an.size(); ++i) {
      double denom = std::max({std::abs(an.data()[i]), std::abs(num.data()[i]), 1e-8});
      EXPECT_LT(std::abs(an.data()[i] - num.data()[i]) / denom, 1e-4);
    }
  }
}

TEST(Backward, ShapeMismatchThrows) {
  LocalModel m({Layer::linear(Matrix::Identity(2, 2), Vector::Zero(2))});
  ForwardTrace tr;
  forward(m, Matrix::Zero(1, 2), tr);
  EXPECT_THROW(backward(m, tr, Matrix::Zero(1, 3)), std::invalid_argument);
}

TEST(Backward, UptoStopsBeforeFinalActivation) {
  LocalModel m({Layer::linear(make_matrix({{2.0}}), Vector::Zero(1)), Layer::activation(LayerKind::sigmoid, 1)});
  ForwardTrace tr;
  forward(m, make_matrix({{0.3}}), tr);
  // Gradient seeded at the sigmoid's input: only the linear layer's factor 2 remains.
  EXPECT_DOUBLE_EQ(backward(m, tr, make_matrix({{1.0}}), false, 1).input_grad(0, 0), 2.0);
}

TEST(GradCheck, LinearModelExact) {
  std::mt19937_64 rng(13);
  LocalModel m({xavier_linear(5, 3, rng)});
  for (double step : {1e-2, 1e-4, 1e-6}) {
    GradCheckReport r = grad_check(m, random_matrix(2, 5, rng), step, 1e-6);
    EXPECT_TRUE(r.pass) << "step " << step << " err " << r.max_rel_error;
  }
}

TEST(GradCheck, SigmoidMlpWithinTolerance) {
  std::mt19937_64 rng(17);
  LocalModel m = make_mlp({6, 10, 8, 2}, rng, LayerKind::sigmoid, true, LayerKind::sigmoid);
  GradCheckReport r = grad_check(m, random_matrix(4, 6, rng), 1e-4, 1e-3);
  EXPECT_TRUE(r.pass);
  EXPECT_LT(r.max_rel_error, 1e-3);
  EXPECT_GT(r.checked, 100);
}

TEST(GradCheck, ReluKinkIsIndeterminate) {
  LocalModel m({Layer::linear(make_matrix({{1.0, 0.0}, {0.0, 1.0}}), Vector::Zero(2)), Layer::activation(LayerKind::relu, 2)});
  GradCheckReport r = grad_check(m, make_matrix({{0.0, 1.0}}), 1e-4, 1e-3);
  EXPECT_GT(r.indeterminate, 0);
  EXPECT_EQ(r.failures, 0);
  EXPECT_TRUE(r.pass);
}

TEST(GradCheck, RejectsNonPositiveStep) {
  LocalModel m({Layer::activation(LayerKind::relu, 1)});
  EXPECT_THROW(grad_check(m, Matrix::Zero(1, 1), 0.0, 1e-3), std::invalid_argument);
}

TEST(Sgd, ZeroGradientLeavesParameters) {
  std::mt19937_64 rng(19);
  LocalModel m({xavier_linear(3, 2, rng)});
  LocalModel before = m;
  SgdOptimizer opt(0.1, 0.9);
  opt.step(m, ParamGrads::zeros_like(m));
  EXPECT_EQ(m.layer(0).weights, before.layer(0).weights);
  EXPECT_EQ(m.layer(0).bias, before.layer(0).bias);
}

TEST(Sgd, PlainStepAndMomentumRecursion) {
  LocalModel m({Layer::linear(make_matrix({{1.0}}), Vector::Zero(1))});
  ParamGrads g = ParamGrads::zeros_like(m);
  g.weights[0](0, 0) = 2.0;
  SgdOptimizer plain(0.1, 0.0);
  LocalModel a = m;
  plain.step(a, g);
  EXPECT_NEAR(a.layer(0).weights(0, 0), 1.0 - 0.1 * 2.0, 1e-15);

  SgdOptimizer mom(0.1, 0.9);
  LocalModel b = m;
  mom.step(b, g);
  double after_first = b.layer(0).weights(0, 0);
  mom.step(b, g);
  // v1 = g, v2 = 0.9 g + g: second update is 0.1 * 1.9 * g.
  EXPECT_NEAR(after_first - b.layer(0).weights(0, 0), 0.1 * 1.9 * 2.0, 1e-14);
}

TEST(Sgd, RejectsInvalidHyperparameters) {
  EXPECT_THROW(SgdOptimizer(0.0, 0.5), std::invalid_argument);
  EXPECT_THROW(SgdOptimizer(0.1, 1.0), std::invalid_argument);
  EXPECT_THROW(SgdOptimizer(0.1, -0.1), std::invalid_argument);
  LocalModel m({Layer::linear(make_matrix({{1.0}}), Vector::Zero(1))});
  ParamGrads wrong;
  SgdOptimizer opt(0.1, 0.0);
  EXPECT_THROW(opt.step(m, wrong), std::invalid_argument);
}

TEST(Init, XavierBoundsAndSeeding) {
  std::mt19937_64 a(23), b(23);
  Layer la = xavier_linear(30, 20, a), lb = xavier_linear(30, 20, b);
  EXPECT_EQ(la.weights, lb.weights);
  double limit = std::sqrt(6.0 / 50.0);
  EXPECT_LE(la.weights.cwiseAbs().maxCoeff(), limit);
  EXPECT_TRUE(la.bias.isZero());
}

TEST(Init, MakeMlpShapes) {
  std::mt19937_64 rng(29);
  LocalModel m = make_mlp({10, 8, 4}, rng, LayerKind::relu, true, LayerKind::relu);
  EXPECT_EQ(m.input_dim(), 10);
  EXPECT_EQ(m.output_dim(), 4);
  ASSERT_EQ(m.num_layers(), 4u);
  EXPECT_EQ(m.layer(1).kind, LayerKind::relu);
  EXPECT_EQ(m.layer(3).kind, LayerKind::relu);
  EXPECT_EQ(layer_kind_from_string(to_string(LayerKind::softmax)), LayerKind::softmax);
  EXPECT_THROW(layer_kind_from_string("conv"), std::invalid_argument);
}
