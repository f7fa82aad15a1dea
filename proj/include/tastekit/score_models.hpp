#pragma once

// Score fields s(x) = grad log p(x): closed-form Gaussian families,
// exponential tilts, perturbed (deliberately biased) scores and learned
// networks trained by denoising score matching.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tastekit/network.hpp"
#include "tastekit/numkit.hpp"

namespace tastekit {

// Shift potential h. Linear: h(x) = c.x. Quadratic: h(x) = x^T A x, A symmetric.
class Potential {
 public:
  enum class Kind { linear, quadratic };

  static Potential linear(Vec c);
  static Potential quadratic(Mat a);

  Kind kind() const noexcept { return kind_; }
  std::size_t dimension() const noexcept { return dim_; }
  const Vec& coefficients() const noexcept { return c_; }
  const Mat& matrix() const noexcept { return a_; }

  double value(const Vec& x) const;
  Vec gradient(const Vec& x) const;

 private:
  Kind kind_ = Kind::linear;
  std::size_t dim_ = 0;
  Vec c_;
  Mat a_;
};

class ScoreModel;

struct IsotropicGaussian {
  Vec mean;
  double variance = 1.0;
};

// Component k is N(means[k], variances[k] * I).
struct GaussianMixture {
  Vec weights;
  Points means;
  Vec variances;
};

// q(x) proportional to base(x) * exp(strength * h(x)). The normalizer is
// never evaluated; only its gradient (zero) enters the score.
struct TiltedModel {
  std::shared_ptr<const ScoreModel> base;
  Potential potential;
  double strength = 0.0;
};

// base score + slope * x + offset. Stands in for an imperfect score model.
struct PerturbedModel {
  std::shared_ptr<const ScoreModel> base;
  Vec offset;
  Mat slope;
};

struct LearnedModel {
  Network net;
  double noise_std = 0.0;
  std::map<std::string, double> metadata;
};

class ScoreModel {
 public:
  using Kind = std::variant<IsotropicGaussian, GaussianMixture, TiltedModel, PerturbedModel,
                            LearnedModel>;

  static ScoreModel isotropic_gaussian(Vec mean, double variance);
  static ScoreModel standard_normal(std::size_t d);
  static ScoreModel gaussian_mixture(Vec weights, Points means, Vec variances);
  static ScoreModel tilted(const ScoreModel& base, Potential h, double strength);
  static ScoreModel perturbed(const ScoreModel& base, Vec offset, Mat slope);
  static ScoreModel learned(Network net, double noise_std,
                            std::map<std::string, double> metadata = {});

  const Kind& kind() const noexcept { return kind_; }
  std::size_t dimension() const noexcept { return dim_; }
  std::string id() const;

  Vec score(const Vec& x) const;

  bool has_log_density() const;
  // log p(x) up to an additive constant. Throws "density unavailable" for
  // perturbed and learned kinds.
  double log_density_up_to_constant(const Vec& x) const;

  // Exact Gaussian-mixture representation, when one exists: Gaussian kinds
  // and linear tilts of them.
  std::optional<GaussianMixture> closed_form() const;

 private:
  ScoreModel(Kind kind, std::size_t dim) : kind_(std::move(kind)), dim_(dim) {}

  Kind kind_;
  std::size_t dim_ = 0;
};

// A score model that can also be sampled and has a normalized log-density.
class SamplableDistribution {
 public:
  explicit SamplableDistribution(ScoreModel model);

  const ScoreModel& model() const noexcept { return model_; }
  const GaussianMixture& mixture() const noexcept { return mixture_; }
  std::size_t dimension() const noexcept { return model_.dimension(); }

  Vec score(const Vec& x) const { return model_.score(x); }
  double log_density(const Vec& x) const;

  Vec sample(Rng& rng) const;
  Points sample(std::size_t n, Rng& rng) const;

 private:
  ScoreModel model_;
  GaussianMixture mixture_;
  Vec cumulative_;
};

Vec score(const ScoreModel& model, const Vec& x);

// u_{p->q}(x) = s_q(x) - s_p(x).
Vec shift_score_field(const ScoreModel& p, const ScoreModel& q, const Vec& x);

double log_density_up_to_constant(const ScoreModel& model, const Vec& x);

// Monte-Carlo estimate of E_p ||s_approx(X) - s_p(X)||^2.
Estimate fisher_divergence(const SamplableDistribution& p, const ScoreModel& approx,
                           std::size_t n, Rng& rng);

// Self-normalized importance weights for expectations under the tilt
// q ~ p exp(eps h) from samples of p.
struct ImportanceWeights {
  Vec weights;  // sums to one
  double effective_sample_size = 0.0;
};
ImportanceWeights tilt_importance_weights(const Potential& h, double strength,
                                          const Points& base_samples);

struct DsmConfig {
  std::vector<std::size_t> hidden = {64, 64};
  Activation activation = Activation::tanh;
  double noise_std = 0.1;
  OptimizerConfig optimizer{OptimizerConfig::Kind::adam, 1e-3};
  std::size_t epochs = 50;
  std::size_t batch_size = 128;
  bool antithetic = true;  // pair each noise draw with its negation
  std::uint64_t seed = 0;
};

struct DsmResult {
  ScoreModel model;
  std::vector<double> loss_history;  // entry 0 is the loss before training
  std::vector<std::string> warnings;
};

/// Fits a score network by minimizing E ||net(x + sigma z) + z / sigma||^2
/// with a fresh noise draw per sample and epoch.
DsmResult train_dsm_score(const Points& samples, const DsmConfig& config);

}  // namespace tastekit
