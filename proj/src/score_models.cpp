#include "tastekit/score_models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "tastekit/error.hpp"

namespace tastekit {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_dim(std::size_t expected, const Vec& x) {
  require(x.size() == expected, "dimension mismatch");
}

double log_sum_exp(const Vec& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Normalized per-component log terms log w_k + log N(x; m_k, v_k I).
Vec component_log_terms(const GaussianMixture& gm, const Vec& x) {
  const double d = static_cast<double>(x.size());
  Vec terms(gm.weights.size());
  for (std::size_t k = 0; k < terms.size(); ++k) {
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) sq += (x[i] - gm.means[k][i]) * (x[i] - gm.means[k][i]);
    terms[k] = std::log(gm.weights[k]) - 0.5 * d * std::log(2.0 * std::numbers::pi * gm.variances[k]) -
               0.5 * sq / gm.variances[k];
  }
  return terms;
}

Vec mixture_score(const GaussianMixture& gm, const Vec& x) {
  const Vec terms = component_log_terms(gm, x);
  const double lse = log_sum_exp(terms);
  Vec s(x.size(), 0.0);
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const double r = std::exp(terms[k] - lse);
    for (std::size_t i = 0; i < x.size(); ++i) s[i] -= r * (x[i] - gm.means[k][i]) / gm.variances[k];
  }
  return s;
}

double mixture_log_density(const GaussianMixture& gm, const Vec& x) {
  return log_sum_exp(component_log_terms(gm, x));
}

}  // namespace

Potential Potential::linear(Vec c) {
  require(!c.empty(), "potential needs a non-empty coefficient vector");
  Potential p;
  p.kind_ = Kind::linear;
  p.dim_ = c.size();
  p.c_ = std::move(c);
  return p;
}

Potential Potential::quadratic(Mat a) {
  require(a.rows == a.cols && a.rows > 0, "quadratic potential needs a square matrix");
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < i; ++j)
      require(std::abs(a(i, j) - a(j, i)) <= 1e-12 * (1.0 + std::abs(a(i, j))),
              "quadratic potential matrix must be symmetric");
  Potential p;
  p.kind_ = Kind::quadratic;
  p.dim_ = a.rows;
  p.a_ = std::move(a);
  return p;
}

double Potential::value(const Vec& x) const {
  check_dim(dim_, x);
  if (kind_ == Kind::linear) return dot(c_, x);
  return dot(x, matvec(a_, x));
}

Vec Potential::gradient(const Vec& x) const {
  check_dim(dim_, x);
  if (kind_ == Kind::linear) return c_;
  return scaled(matvec(a_, x), 2.0);
}

ScoreModel ScoreModel::isotropic_gaussian(Vec mean, double variance) {
  require(!mean.empty(), "gaussian needs a non-empty mean");
  require(variance > 0.0 && std::isfinite(variance), "variance must be positive");
  const std::size_t d = mean.size();
  return ScoreModel(IsotropicGaussian{std::move(mean), variance}, d);
}

ScoreModel ScoreModel::standard_normal(std::size_t d) {
  return isotropic_gaussian(Vec(d, 0.0), 1.0);
}

ScoreModel ScoreModel::gaussian_mixture(Vec weights, Points means, Vec variances) {
  require(!weights.empty(), "mixture needs at least one component");
  require(weights.size() == means.size() && weights.size() == variances.size(),
          "mixture component count mismatch");
  const std::size_t d = means.front().size();
  require(d > 0, "mixture dimension must be positive");
  double total = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    require(weights[k] > 0.0, "mixture weights must be positive");
    require(variances[k] > 0.0, "variance must be positive");
    require(means[k].size() == d, "dimension mismatch");
    total += weights[k];
  }
  for (auto& w : weights) w /= total;
  return ScoreModel(GaussianMixture{std::move(weights), std::move(means), std::move(variances)}, d);
}

ScoreModel ScoreModel::tilted(const ScoreModel& base, Potential h, double strength) {
  require(h.dimension() == base.dimension(), "dimension mismatch");
  require(std::isfinite(strength), "tilt strength must be finite");
  const std::size_t d = base.dimension();
  return ScoreModel(TiltedModel{std::make_shared<const ScoreModel>(base), std::move(h), strength}, d);
}

ScoreModel ScoreModel::perturbed(const ScoreModel& base, Vec offset, Mat slope) {
  const std::size_t d = base.dimension();
  require(offset.size() == d, "dimension mismatch");
  if (slope.data.empty()) slope = Mat(d, d);
  require(slope.rows == d && slope.cols == d, "dimension mismatch");
  return ScoreModel(PerturbedModel{std::make_shared<const ScoreModel>(base), std::move(offset),
                                   std::move(slope)},
                    d);
}

ScoreModel ScoreModel::learned(Network net, double noise_std,
                               std::map<std::string, double> metadata) {
  require(net.input_dim() == net.output_dim() && net.input_dim() > 0,
          "score network must map R^d to R^d");
  const std::size_t d = net.input_dim();
  return ScoreModel(LearnedModel{std::move(net), noise_std, std::move(metadata)}, d);
}

std::string ScoreModel::id() const {
  std::ostringstream os;
  std::visit(Overloaded{
                 [&](const IsotropicGaussian& g) { os << "isotropic-gaussian(var=" << g.variance << ")"; },
                 [&](const GaussianMixture& g) { os << "gaussian-mixture(k=" << g.weights.size() << ")"; },
                 [&](const TiltedModel& t) {
                   os << "tilted(" << t.base->id() << ","
                      << (t.potential.kind() == Potential::Kind::linear ? "linear" : "quadratic")
                      << ",eps=" << t.strength << ")";
                 },
                 [&](const PerturbedModel& p) { os << "perturbed(" << p.base->id() << ")"; },
                 [&](const LearnedModel& l) { os << "learned-mlp(sigma=" << l.noise_std << ")"; },
             },
             kind_);
  os << "[d=" << dim_ << "]";
  return os.str();
}

Vec ScoreModel::score(const Vec& x) const {
  check_dim(dim_, x);
  return std::visit(
      Overloaded{
          [&](const IsotropicGaussian& g) {
            Vec s(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) s[i] = -(x[i] - g.mean[i]) / g.variance;
            return s;
          },
          [&](const GaussianMixture& g) { return mixture_score(g, x); },
          [&](const TiltedModel& t) {
            Vec s = t.base->score(x);
            axpy(t.strength, t.potential.gradient(x), s);
            return s;
          },
          [&](const PerturbedModel& p) {
            Vec s = p.base->score(x);
            axpy(1.0, matvec(p.slope, x), s);
            axpy(1.0, p.offset, s);
            return s;
          },
          [&](const LearnedModel& l) { return l.net.forward(x); },
      },
      kind_);
}

bool ScoreModel::has_log_density() const {
  return std::visit(Overloaded{
                        [](const IsotropicGaussian&) { return true; },
                        [](const GaussianMixture&) { return true; },
                        [](const TiltedModel& t) { return t.base->has_log_density(); },
                        [](const PerturbedModel&) { return false; },
                        [](const LearnedModel&) { return false; },
                    },
                    kind_);
}

double ScoreModel::log_density_up_to_constant(const Vec& x) const {
  check_dim(dim_, x);
  require(has_log_density(), "density unavailable");
  return std::visit(Overloaded{
                        [&](const IsotropicGaussian& g) {
                          double sq = 0.0;
                          for (std::size_t i = 0; i < x.size(); ++i)
                            sq += (x[i] - g.mean[i]) * (x[i] - g.mean[i]);
                          return -0.5 * sq / g.variance;
                        },
                        [&](const GaussianMixture& g) { return mixture_log_density(g, x); },
                        [&](const TiltedModel& t) {
                          return t.base->log_density_up_to_constant(x) +
                                 t.strength * t.potential.value(x);
                        },
                        [](const PerturbedModel&) { return 0.0; },
                        [](const LearnedModel&) { return 0.0; },
                    },
                    kind_);
}

std::optional<GaussianMixture> ScoreModel::closed_form() const {
  return std::visit(
      Overloaded{
          [](const IsotropicGaussian& g) -> std::optional<GaussianMixture> {
            return GaussianMixture{{1.0}, {g.mean}, {g.variance}};
          },
          [](const GaussianMixture& g) -> std::optional<GaussianMixture> { return g; },
          [](const TiltedModel& t) -> std::optional<GaussianMixture> {
            if (t.potential.kind() != Potential::Kind::linear) return std::nullopt;
            auto base = t.base->closed_form();
            if (!base) return std::nullopt;
            // N(m, vI) e^{eps c.x} is proportional to N(m + eps v c, vI) with
            // mass exp(eps c.m + eps^2 v |c|^2 / 2).
            const Vec& c = t.potential.coefficients();
            const double eps = t.strength;
            const double cc = dot(c, c);
            Vec log_w(base->weights.size());
            for (std::size_t k = 0; k < log_w.size(); ++k) {
              log_w[k] = std::log(base->weights[k]) + eps * dot(c, base->means[k]) +
                         0.5 * eps * eps * base->variances[k] * cc;
              axpy(eps * base->variances[k], c, base->means[k]);
            }
            const double lse = log_sum_exp(log_w);
            for (std::size_t k = 0; k < log_w.size(); ++k) base->weights[k] = std::exp(log_w[k] - lse);
            return base;
          },
          [](const PerturbedModel&) -> std::optional<GaussianMixture> { return std::nullopt; },
          [](const LearnedModel&) -> std::optional<GaussianMixture> { return std::nullopt; },
      },
      kind_);
}

SamplableDistribution::SamplableDistribution(ScoreModel model) : model_(std::move(model)) {
  auto gm = model_.closed_form();
  require(gm.has_value(), "distribution is not samplable: " + model_.id());
  mixture_ = std::move(*gm);
  double acc = 0.0;
  for (double w : mixture_.weights) cumulative_.push_back(acc += w);
}

double SamplableDistribution::log_density(const Vec& x) const {
  check_dim(dimension(), x);
  return mixture_log_density(mixture_, x);
}

Vec SamplableDistribution::sample(Rng& rng) const {
  std::size_t k = 0;
  if (cumulative_.size() > 1) {
    const double u = rng.uniform() * cumulative_.back();
    while (k + 1 < cumulative_.size() && u >= cumulative_[k]) ++k;
  }
  const double sd = std::sqrt(mixture_.variances[k]);
  Vec x = mixture_.means[k];
  for (auto& xi : x) xi += sd * rng.normal();
  return x;
}

Points SamplableDistribution::sample(std::size_t n, Rng& rng) const {
  Points out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample(rng));
  return out;
}

Vec score(const ScoreModel& model, const Vec& x) { return model.score(x); }

Vec shift_score_field(const ScoreModel& p, const ScoreModel& q, const Vec& x) {
  require(p.dimension() == q.dimension(), "dimension mismatch");
  return sub(q.score(x), p.score(x));
}

double log_density_up_to_constant(const ScoreModel& model, const Vec& x) {
  return model.log_density_up_to_constant(x);
}

Estimate fisher_divergence(const SamplableDistribution& p, const ScoreModel& approx,
                           std::size_t n, Rng& rng) {
  require(n >= 100, "fisher divergence needs at least 100 samples");
  require(approx.dimension() == p.dimension(), "dimension mismatch");
  Vec values(n);
  for (auto& v : values) {
    const Vec x = p.sample(rng);
    const Vec diff = sub(approx.score(x), p.score(x));
    v = dot(diff, diff);
  }
  return mean_and_stderr(values);
}

ImportanceWeights tilt_importance_weights(const Potential& h, double strength,
                                          const Points& base_samples) {
  require(!base_samples.empty(), "insufficient samples");
  Vec log_w(base_samples.size());
  for (std::size_t i = 0; i < log_w.size(); ++i) log_w[i] = strength * h.value(base_samples[i]);
  const double lse = log_sum_exp(log_w);
  ImportanceWeights out;
  out.weights.resize(log_w.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < log_w.size(); ++i) {
    out.weights[i] = std::exp(log_w[i] - lse);
    sq += out.weights[i] * out.weights[i];
  }
  out.effective_sample_size = 1.0 / sq;
  return out;
}

}  // namespace tastekit
