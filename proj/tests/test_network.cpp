#include <gtest/gtest.h>

#include <cmath>

#include "tastekit/error.hpp"
#include "tastekit/network.hpp"

using namespace tastekit;

namespace {

Network make_net(Activation act, std::uint64_t seed = 1) {
  Rng rng(seed);
  return Network({3, 8, 5, 2}, act, rng);
}

Vec point(Rng& rng, std::size_t d) {
  Vec x(d);
  for (auto& v : x) v = rng.normal();
  return x;
}

Vec shifted(const Vec& x, const Vec& v, double t) {
  Vec y = x;
  axpy(t, v, y);
  return y;
}

}  // namespace

TEST(Network, ShapesAndActivationNames) {
  const Network net = make_net(Activation::tanh);
  EXPECT_EQ(net.input_dim(), 3u);
  EXPECT_EQ(net.output_dim(), 2u);
  EXPECT_EQ(net.widths(), (std::vector<std::size_t>{3, 8, 5, 2}));
  EXPECT_EQ(net.hidden_layers(), 2u);
  EXPECT_EQ(net.parameter_count(), 3u * 8 + 8 + 8 * 5 + 5 + 5 * 2 + 2);
  for (auto a : {Activation::relu, Activation::tanh, Activation::softplus})
    EXPECT_EQ(activation_from_string(to_string(a)), a);
  EXPECT_THROW(activation_from_string("gelu"), Error);
  EXPECT_THROW(net.forward(Vec{1, 2}), Error);
}

TEST(Network, GlorotInitIsBoundedAndSeeded) {
  const Network a = make_net(Activation::relu, 9), b = make_net(Activation::relu, 9);
  EXPECT_EQ(a.parameters(), b.parameters());
  const double limit = std::sqrt(6.0 / (3 + 8));
  for (double w : a.layers()[0].weight.data) EXPECT_LE(std::abs(w), limit);
  for (double bias : a.layers()[0].bias) EXPECT_EQ(bias, 0.0);
}

TEST(Network, ParametersRoundTrip) {
  Network net = make_net(Activation::softplus);
  Vec p = net.parameters();
  for (auto& v : p) v *= 0.5;
  net.set_parameters(p);
  EXPECT_EQ(net.parameters(), p);
  EXPECT_THROW(net.set_parameters(Vec(3)), Error);
}

TEST(Network, HandBuiltForward) {
  DenseLayer l1{Mat(2, 2), Vec{0.0, -1.0}};
  l1.weight(0, 0) = 1, l1.weight(0, 1) = 2, l1.weight(1, 0) = -1, l1.weight(1, 1) = 1;
  DenseLayer l2{Mat(1, 2), Vec{0.5}};
  l2.weight(0, 0) = 1, l2.weight(0, 1) = 3;
  const Network net({l1, l2}, Activation::relu);
  // hidden = relu(1+4, -1+2-1) = (5, 0); out = 5 + 0 + 0.5
  EXPECT_DOUBLE_EQ(net.forward(Vec{1, 2})[0], 5.5);
}

// Finite-difference oracles for the first and second directional derivatives.
class JetTest : public ::testing::TestWithParam<Activation> {};

TEST_P(JetTest, MatchesFiniteDifferences) {
  const Network net = make_net(GetParam(), 3);
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec x = point(rng, 3), v = point(rng, 3);
    const Jet j = net.jet(x, v);
    const double h = 1e-4;
    const Vec fp = net.forward(shifted(x, v, h)), fm = net.forward(shifted(x, v, -h)),
              f0 = net.forward(x);
    for (std::size_t k = 0; k < 2; ++k) {
      EXPECT_DOUBLE_EQ(j.value[k], f0[k]);
      EXPECT_NEAR(j.first[k], (fp[k] - fm[k]) / (2 * h), 1e-6);
      if (GetParam() != Activation::relu)
        EXPECT_NEAR(j.second[k], (fp[k] - 2 * f0[k] + fm[k]) / (h * h), 1e-4);
      else
        EXPECT_EQ(j.second[k], 0.0);
    }
  }
}

TEST_P(JetTest, JacobianAndVjpAgree) {
  const Network net = make_net(GetParam(), 5);
  Rng rng(23);
  const Vec x = point(rng, 3);
  const Mat jac = net.input_jacobian(x);
  ASSERT_EQ(jac.rows, 2u);
  ASSERT_EQ(jac.cols, 3u);
  const Vec up{0.7, -1.3};
  const Vec g = net.input_vjp(net.record(x), up);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_NEAR(g[i], up[0] * jac(0, i) + up[1] * jac(1, i), 1e-12);
}

TEST_P(JetTest, BackwardMatchesFiniteDifferenceOnParameters) {
  Network net = make_net(GetParam(), 7);
  Rng rng(29);
  const Vec x = point(rng, 3);
  const Vec up{1.0, -0.5};
  Vec grad(net.parameter_count(), 0.0);
  net.backward(net.record(x), up, grad);
  const Vec p0 = net.parameters();
  auto loss = [&](const Vec& p) {
    net.set_parameters(p);
    const Vec y = net.forward(x);
    return up[0] * y[0] + up[1] * y[1];
  };
  for (std::size_t i = 0; i < p0.size(); i += 3) {
    Vec pp = p0, pm = p0;
    pp[i] += 1e-6;
    pm[i] -= 1e-6;
    EXPECT_NEAR(grad[i], (loss(pp) - loss(pm)) / 2e-6, 1e-5) << i;
  }
  net.set_parameters(p0);
}

INSTANTIATE_TEST_SUITE_P(Activations, JetTest,
                         ::testing::Values(Activation::relu, Activation::tanh, Activation::softplus));

TEST(Network, RepeatCallsIdenticalBits) {
  const Network net = make_net(Activation::tanh);
  const Vec x{0.3, -0.2, 1.1};
  EXPECT_EQ(net.forward(x), net.forward(x));
}

TEST(Optimizer, AdamFirstStepIsLearningRateTimesSign) {
  Optimizer opt(OptimizerConfig{OptimizerConfig::Kind::adam, 0.1}, 2);
  Vec p{1.0, 1.0};
  opt.step(p, Vec{3.0, -0.01});
  // bias-corrected m/sqrt(v) equals sign(g) on the first step
  EXPECT_NEAR(p[0], 0.9, 1e-6);
  EXPECT_NEAR(p[1], 1.1, 1e-4);
}

TEST(Optimizer, SgdStep) {
  Optimizer opt(OptimizerConfig{OptimizerConfig::Kind::sgd, 0.5}, 1);
  Vec p{2.0};
  opt.step(p, Vec{1.0});
  EXPECT_DOUBLE_EQ(p[0], 1.5);
}

TEST(Optimizer, AdamMinimisesQuadratic) {
  Optimizer opt(OptimizerConfig{OptimizerConfig::Kind::adam, 0.05}, 2);
  Vec p{3.0, -2.0};
  for (int i = 0; i < 2000; ++i) opt.step(p, Vec{2 * p[0], 2 * p[1]});
  EXPECT_NEAR(p[0], 0.0, 1e-2);
  EXPECT_NEAR(p[1], 0.0, 1e-2);
}
