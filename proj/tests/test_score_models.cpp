#include <gtest/gtest.h>

#include <cmath>

#include "tastekit/error.hpp"
#include "tastekit/score_models.hpp"

using namespace tastekit;

namespace {

// Central-difference gradient of a log density: the score oracle.
Vec fd_score(const ScoreModel& m, const Vec& x) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Vec a = x, b = x;
    a[i] += 1e-5;
    b[i] -= 1e-5;
    g[i] = (log_density_up_to_constant(m, a) - log_density_up_to_constant(m, b)) / 2e-5;
  }
  return g;
}

void expect_vec_near(const Vec& a, const Vec& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "component " << i;
}

}  // namespace

TEST(Score, Examples) {
  expect_vec_near(score(ScoreModel::standard_normal(2), {1, 2}), {-1, -2}, 0);
  expect_vec_near(score(ScoreModel::isotropic_gaussian({3, 0}, 1.0), {3, 0}), {0, 0}, 0);
  const auto tilt = ScoreModel::tilted(ScoreModel::standard_normal(2), Potential::linear({1, 0}), 0.5);
  expect_vec_near(score(tilt, {0, 0}), {0.5, 0}, 1e-15);
  EXPECT_THROW(score(ScoreModel::standard_normal(2), {1, 2, 3}), Error);
}

TEST(Score, AnalyticScoresMatchLogDensityGradient) {
  const auto base = ScoreModel::isotropic_gaussian({0.5, -1}, 2.0);
  Mat a(2, 2);
  a(0, 0) = -0.3, a(0, 1) = 0.1, a(1, 0) = 0.1, a(1, 1) = -0.2;
  const std::vector<ScoreModel> models{
      base,
      ScoreModel::gaussian_mixture({0.3, 0.7}, {{-2, 0}, {1, 1}}, {0.5, 1.5}),
      ScoreModel::tilted(base, Potential::linear({1, -2}), 0.3),
      ScoreModel::tilted(base, Potential::quadratic(a), 0.5),
  };
  Rng rng(2);
  for (const auto& m : models)
    for (int t = 0; t < 10; ++t) {
      const Vec x{rng.normal(), rng.normal()};
      expect_vec_near(m.score(x), fd_score(m, x), 1e-6);
    }
}

TEST(Score, PerturbedAddsAffineTerm) {
  Mat slope(2, 2);
  slope(0, 1) = 1.0;
  const auto m = ScoreModel::perturbed(ScoreModel::standard_normal(2), {0.5, -1}, slope);
  expect_vec_near(m.score({1, 2}), {-1 + 2 + 0.5, -2 - 1}, 1e-15);
  EXPECT_FALSE(m.has_log_density());
  EXPECT_THROW(log_density_up_to_constant(m, {0, 0}), Error);
}

TEST(Potential, ValuesAndValidation) {
  const auto h = Potential::linear({2, -1});
  EXPECT_DOUBLE_EQ(h.value({1, 1}), 1.0);
  expect_vec_near(h.gradient({5, 5}), {2, -1}, 0);
  Mat a(2, 2);
  a(0, 0) = 1, a(1, 1) = 3;
  const auto q = Potential::quadratic(a);
  EXPECT_DOUBLE_EQ(q.value({1, 2}), 13.0);
  expect_vec_near(q.gradient({1, 2}), {2, 12}, 0);
  Mat asym(2, 2);
  asym(0, 1) = 1.0;
  EXPECT_THROW(Potential::quadratic(asym), Error);
}

TEST(ShiftScoreField, Examples) {
  const auto p = ScoreModel::standard_normal(2);
  const auto q = ScoreModel::isotropic_gaussian({1.5, -2}, 1.0);
  const auto t = ScoreModel::tilted(p, Potential::linear({1, 3}), 0.2);
  Rng rng(3);
  for (int i = 0; i < 5; ++i) {
    const Vec x{3 * rng.normal(), 3 * rng.normal()};
    expect_vec_near(shift_score_field(p, q, x), {1.5, -2}, 1e-12);
    expect_vec_near(shift_score_field(p, p, x), {0, 0}, 0);
    expect_vec_near(shift_score_field(p, t, x), {0.2, 0.6}, 1e-12);
  }
  EXPECT_THROW(shift_score_field(p, ScoreModel::standard_normal(3), {0, 0}), Error);
}

TEST(LogDensity, ModeIsMaximalOverGrid) {
  const std::vector<std::pair<ScoreModel, Vec>> cases{
      {ScoreModel::isotropic_gaussian({1, -1}, 0.5), {1, -1}},
      {ScoreModel::tilted(ScoreModel::standard_normal(2), Potential::linear({1, 0}), 0.5), {0.5, 0}},
  };
  for (const auto& [m, mode] : cases) {
    const double top = log_density_up_to_constant(m, mode);
    for (double dx = -2; dx <= 2; dx += 0.25)
      for (double dy = -2; dy <= 2; dy += 0.25)
        EXPECT_LE(log_density_up_to_constant(m, {mode[0] + dx, mode[1] + dy}), top + 1e-12);
  }
}

TEST(LogDensity, LearnedModelHasNone) {
  Rng rng(1);
  const auto m = ScoreModel::learned(Network({2, 4, 2}, Activation::tanh, rng), 0.1);
  try {
    log_density_up_to_constant(m, {0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "density unavailable");
  }
}

TEST(Samplable, TiltOfGaussianIsShiftedGaussian) {
  const auto t = ScoreModel::tilted(ScoreModel::isotropic_gaussian({0, 0}, 2.0), Potential::linear({1, 0}), 0.5);
  const SamplableDistribution d(t);
  ASSERT_EQ(d.mixture().means.size(), 1u);
  expect_vec_near(d.mixture().means[0], {1.0, 0.0}, 1e-15);  // m + eps v c
  Rng rng(8);
  const Points xs = d.sample(50000, rng);
  Vec x0, x1;
  for (const auto& x : xs) x0.push_back(x[0]), x1.push_back(x[1]);
  const auto m0 = mean_and_stderr(x0), m1 = mean_and_stderr(x1);
  EXPECT_LT(std::abs(m0.value - 1.0), 4 * m0.std_error);
  EXPECT_LT(std::abs(m1.value), 4 * m1.std_error);
  EXPECT_NEAR(variance(x0), 2.0, 0.06);
}

TEST(Samplable, TiltedMixtureDensityIsBasePlusPotential) {
  const auto base = ScoreModel::gaussian_mixture({0.5, 0.5}, {{-1, 0}, {2, 1}}, {1.0, 0.5});
  const auto h = Potential::linear({0.7, -0.4});
  const double eps = 0.8;
  const SamplableDistribution d(ScoreModel::tilted(base, h, eps));
  const SamplableDistribution b(base);
  // log q(x) - log q(y) = log p(x) - log p(y) + eps (h(x) - h(y))
  const Vec x{0.3, -0.2}, y{-1.5, 2.0};
  const double lhs = d.log_density(x) - d.log_density(y);
  const double rhs = b.log_density(x) - b.log_density(y) + eps * (h.value(x) - h.value(y));
  EXPECT_NEAR(lhs, rhs, 1e-12);
  double wsum = 0;
  for (double w : d.mixture().weights) wsum += w;
  EXPECT_NEAR(wsum, 1.0, 1e-15);
}

TEST(Samplable, MixtureWeightsNormalisedAndSampled) {
  const auto m = ScoreModel::gaussian_mixture({1, 3}, {{-5, 0}, {5, 0}}, {0.1, 0.1});
  const SamplableDistribution d(m);
  EXPECT_NEAR(d.mixture().weights[1], 0.75, 1e-15);
  Rng rng(4);
  int right = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) right += d.sample(rng)[0] > 0;
  EXPECT_NEAR(right / double(n), 0.75, 4 * std::sqrt(0.75 * 0.25 / n));
}

TEST(Samplable, RejectsModelsWithoutClosedForm) {
  Rng rng(1);
  EXPECT_THROW(SamplableDistribution(ScoreModel::learned(Network({2, 3, 2}, Activation::tanh, rng), 0.1)), Error);
  Mat a = Mat::identity(2);
  EXPECT_THROW(SamplableDistribution(ScoreModel::tilted(ScoreModel::standard_normal(2), Potential::quadratic(a), -0.1)),
               Error);
}

TEST(FisherDivergence, ClosedForms) {
  const SamplableDistribution p(ScoreModel::standard_normal(1));
  Rng rng(5);
  const auto shifted = ScoreModel::perturbed(ScoreModel::standard_normal(1), {0.5}, {});
  const auto e1 = fisher_divergence(p, shifted, 1000, rng);
  EXPECT_NEAR(e1.value, 0.25, 1e-12);  // constant integrand
  const auto e0 = fisher_divergence(p, ScoreModel::standard_normal(1), 1000, rng);
  EXPECT_EQ(e0.value, 0.0);
  Mat one(1, 1, 1.0);
  const auto zero_field = ScoreModel::perturbed(ScoreModel::standard_normal(1), {0.0}, one);
  const auto e2 = fisher_divergence(p, zero_field, 20000, rng);
  EXPECT_LT(std::abs(e2.value - 1.0), 3 * e2.std_error);
  EXPECT_THROW(fisher_divergence(p, shifted, 50, rng), Error);
}

TEST(ImportanceWeights, UniformForZeroStrength) {
  const Points xs{{0, 0}, {1, 2}, {-1, 3}, {2, 2}};
  const auto w = tilt_importance_weights(Potential::linear({1, 1}), 0.0, xs);
  for (double v : w.weights) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_DOUBLE_EQ(w.effective_sample_size, 4.0);
  const auto w2 = tilt_importance_weights(Potential::linear({1, 0}), 1.0, xs);
  EXPECT_NEAR(w2.weights[3] / w2.weights[0], std::exp(2.0), 1e-12);
  EXPECT_LT(w2.effective_sample_size, 4.0);
}

TEST(Dsm, LearnsGaussianScore) {
  const SamplableDistribution p(ScoreModel::standard_normal(2));
  Rng rng(1);
  const Points xs = p.sample(10000, rng);
  DsmConfig c;  // tanh 64-64, sigma 0.1, Adam 1e-3, batch 128
  c.epochs = 20;
  const DsmResult r = train_dsm_score(xs, c);
  EXPECT_LE(r.loss_history.back(), r.loss_history.front());
  EXPECT_EQ(r.loss_history.size(), 21u);
  Rng eval(5);
  const auto fd = fisher_divergence(p, r.model, 20000, eval);
  // Pilot: about 0.013 at 20 epochs.
  EXPECT_LT(fd.value, 0.05);
  const auto& learned = std::get<LearnedModel>(r.model.kind());
  EXPECT_DOUBLE_EQ(learned.noise_std, 0.1);
  EXPECT_EQ(learned.metadata.at("epochs"), 20.0);
}

TEST(Dsm, Preconditions) {
  DsmConfig c;
  EXPECT_THROW(train_dsm_score({}, c), Error);
  Points few(99, Vec{0.0, 0.0});
  EXPECT_THROW(train_dsm_score(few, c), Error);
  Points ok(100, Vec{0.1, 0.2});
  c.noise_std = 0.0;
  EXPECT_THROW(train_dsm_score(ok, c), Error);
  c.noise_std = -1.0;
  EXPECT_THROW(train_dsm_score(ok, c), Error);
}

TEST(Dsm, DegenerateDataWarns) {
  Points same(200, Vec{1.0, -1.0});
  DsmConfig c;
  c.hidden = {8};
  c.epochs = 2;
  const DsmResult r = train_dsm_score(same, c);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(r.warnings[0], "degenerate data");
}

TEST(Dsm, DivergenceIsReported) {
  const SamplableDistribution p(ScoreModel::standard_normal(2));
  Rng rng(1);
  DsmConfig c;
  c.hidden = {8};
  c.epochs = 3;
  c.optimizer.kind = OptimizerConfig::Kind::sgd;
  c.optimizer.learning_rate = 1e300;
  try {
    train_dsm_score(p.sample(200, rng), c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numerical);
    EXPECT_STREQ(e.what(), "training diverged");
  }
}

TEST(Dsm, SameSeedSameWeights) {
  const SamplableDistribution p(ScoreModel::standard_normal(2));
  Rng rng(1);
  const Points xs = p.sample(300, rng);
  DsmConfig c;
  c.hidden = {8};
  c.epochs = 2;
  const auto a = train_dsm_score(xs, c), b = train_dsm_score(xs, c);
  EXPECT_EQ(std::get<LearnedModel>(a.model.kind()).net.parameters(),
            std::get<LearnedModel>(b.model.kind()).net.parameters());
}
