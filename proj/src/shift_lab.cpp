#include "tastekit/shift_lab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "tastekit/error.hpp"

namespace tastekit {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Estimate estimate_of(const Vec& values) { return mean_and_stderr(values); }

// Standard error of the sample covariance via its influence function.
Estimate covariance_estimate(const Vec& a, const Vec& b) {
  const double ma = mean(a);
  const double mb = mean(b);
  Vec products(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) products[i] = (a[i] - ma) * (b[i] - mb);
  const Estimate e = mean_and_stderr(products);
  const double n = static_cast<double>(a.size());
  return {e.value * n / (n - 1.0), e.std_error};
}

Vec stein_on(const Points& pts, const Predictor& f, const ScoreModel& s) {
  return stein_values(pts, f, s, LaplacianRoute::exact(), 0, 0);
}

ScoreModel gaussian_mixture_model(const GaussianMixture& gm) {
  return ScoreModel::gaussian_mixture(gm.weights, gm.means, gm.variances);
}

bool is_single_isotropic_gaussian(const SamplableDistribution& p) {
  return std::holds_alternative<IsotropicGaussian>(p.model().kind());
}

}  // namespace

ShiftFamily ShiftFamily::rotation(double magnitude, Vec base_direction, double angle) {
  require(base_direction.size() == 2, "rotation shifts are two-dimensional");
  require(std::abs(norm2(base_direction) - 1.0) < 1e-9, "rotation base direction must be a unit vector");
  return ShiftFamily(RotationShift{magnitude, std::move(base_direction), angle});
}

ShiftFamily ShiftFamily::mean_shift(Vec offset) { return ShiftFamily(MeanShift{std::move(offset)}); }

ShiftFamily ShiftFamily::tilt(Potential h, double strength) {
  return ShiftFamily(TiltShift{std::move(h), strength});
}

ShiftFamily ShiftFamily::mixture(SamplableDistribution in_dist, SamplableDistribution out_dist,
                                 double out_fraction) {
  require(out_fraction >= 0.0 && out_fraction <= 1.0, "out fraction must lie in [0,1]");
  require(in_dist.dimension() == out_dist.dimension(), "dimension mismatch");
  return ShiftFamily(MixtureShift{std::make_shared<const SamplableDistribution>(std::move(in_dist)),
                                  std::make_shared<const SamplableDistribution>(std::move(out_dist)),
                                  out_fraction});
}

SamplableDistribution translated(const SamplableDistribution& base, const Vec& offset) {
  require(offset.size() == base.dimension(), "dimension mismatch");
  if (const auto* g = std::get_if<IsotropicGaussian>(&base.model().kind()))
    return SamplableDistribution(ScoreModel::isotropic_gaussian(add(g->mean, offset), g->variance));
  GaussianMixture gm = base.mixture();
  for (auto& m : gm.means) m = add(m, offset);
  return SamplableDistribution(gaussian_mixture_model(gm));
}

SamplableDistribution ShiftFamily::resolve(const SamplableDistribution& base) const {
  return std::visit(
      Overloaded{
          [&](const RotationShift& r) {
            require(base.dimension() == 2, "rotation shifts are two-dimensional");
            return translated(base, scaled(rotate2d(r.base_direction, r.angle), r.magnitude));
          },
          [&](const MeanShift& m) { return translated(base, m.offset); },
          [&](const TiltShift& t) {
            return SamplableDistribution(ScoreModel::tilted(base.model(), t.potential, t.strength));
          },
          [&](const MixtureShift& m) {
            if (m.out_fraction <= 0.0) return *m.in_dist;
            if (m.out_fraction >= 1.0) return *m.out_dist;
            GaussianMixture gm;
            for (std::size_t k = 0; k < m.in_dist->mixture().weights.size(); ++k) {
              gm.weights.push_back((1.0 - m.out_fraction) * m.in_dist->mixture().weights[k]);
              gm.means.push_back(m.in_dist->mixture().means[k]);
              gm.variances.push_back(m.in_dist->mixture().variances[k]);
            }
            for (std::size_t k = 0; k < m.out_dist->mixture().weights.size(); ++k) {
              gm.weights.push_back(m.out_fraction * m.out_dist->mixture().weights[k]);
              gm.means.push_back(m.out_dist->mixture().means[k]);
              gm.variances.push_back(m.out_dist->mixture().variances[k]);
            }
            return SamplableDistribution(gaussian_mixture_model(gm));
          },
      },
      kind_);
}

double IdentityCheckReport::combined_std_error() const {
  return std::hypot(lhs_std_error, rhs_std_error);
}

bool IdentityCheckReport::passes(double sigmas) const {
  const double gap = lhs - rhs;
  if (relation == Relation::upper_bound) return discrepancy < sigmas || gap <= 0.0;
  if (relative_tolerance > 0.0 && std::abs(gap) <= relative_tolerance * std::abs(rhs)) return true;
  return std::abs(discrepancy) < sigmas;
}

IdentityCheckReport make_report(std::string name, Estimate lhs, Estimate rhs, std::size_t n,
                                std::uint64_t seed, IdentityCheckReport::Relation relation) {
  IdentityCheckReport r;
  r.name = std::move(name);
  r.relation = relation;
  r.lhs = lhs.value;
  r.lhs_std_error = lhs.std_error;
  r.rhs = rhs.value;
  r.rhs_std_error = rhs.std_error;
  r.n_samples = n;
  r.seed = seed;
  const double se = r.combined_std_error();
  const double gap = r.lhs - r.rhs;
  if (se > 0.0)
    r.discrepancy = gap / se;
  else
    r.discrepancy = std::abs(gap) <= 1e-12 * (1.0 + std::abs(r.rhs))
                        ? 0.0
                        : std::copysign(std::numeric_limits<double>::infinity(), gap);
  return r;
}

IdentityCheckReport projection_identity_check(const Predictor& f, const ScoreModel& p,
                                              const SamplableDistribution& q, std::size_t n,
                                              Rng& rng) {
  require(n >= 2, "insufficient samples");
  require(p.dimension() == q.dimension() && f.dimension() == p.dimension(), "dimension mismatch");
  const std::uint64_t seed = rng.seed();
  const Points xs = q.sample(n, rng);
  const Vec lhs = stein_on(xs, f, p);
  Vec rhs(n);
  parallel_for(n, [&](std::size_t i) {
    rhs[i] = -dot(f.gradient(xs[i]), shift_score_field(p, q.model(), xs[i]));
  });
  return make_report("projection_identity", estimate_of(lhs), estimate_of(rhs), n, seed);
}

std::vector<double> angle_grid(std::size_t count) {
  require(count >= 1, "angle grid must be non-empty");
  std::vector<double> grid(count);
  for (std::size_t i = 0; i < count; ++i)
    grid[i] = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(count);
  return grid;
}

std::vector<SweepRow> rotation_sweep(const Predictor& f, const ScoreModel& score, double magnitude,
                                     const std::vector<double>& angles, std::size_t n, Rng& rng,
                                     const RotationSweepOptions& options) {
  require(!angles.empty(), "angle grid must be non-empty");
  require(n >= 2, "insufficient samples");
  require(f.dimension() == 2 && score.dimension() == 2, "rotation sweep is two-dimensional");
  const SamplableDistribution p(ScoreModel::standard_normal(2));
  const auto target = options.target ? options.target
                                     : std::function<double(const Vec&)>(
                                           [](const Vec& x) { return x[1] - x[0]; });

  // Antithetic base cloud: z and -z, so every translated test set has the
  // same empirical mean offset.
  Points cloud;
  cloud.reserve(n);
  while (cloud.size() < n) {
    const Vec z = rng.normal_vec(2);
    cloud.push_back(z);
    if (cloud.size() < n) cloud.push_back(scaled(z, -1.0));
  }
  const std::size_t n_cal = options.calibration_samples ? options.calibration_samples : n;
  const Points calibration = p.sample(n_cal, rng);
  const std::uint64_t seed = rng.next();

  ResidualOptions ropts;
  ropts.route = options.route;
  std::vector<SweepRow> rows;
  for (std::size_t a = 0; a < angles.size(); ++a) {
    const Vec mu = scaled(rotate2d(options.base_direction, angles[a]), magnitude);
    Points test = cloud;
    for (auto& x : test) x = add(x, mu);
    const auto [batch, base] =
        batch_adjusted_residuals(test, calibration, f, score, ropts, derive_seed(seed, a, 0));
    const TasteEstimate taste = taste_functional_estimate(batch);

    Vec sq(n), ll(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double e = f.value(test[i]) - target(test[i]);
      sq[i] = e * e;
      ll[i] = p.log_density(test[i]);
    }
    const Estimate mse = mean_and_stderr(sq);
    const Estimate loglik = mean_and_stderr(ll);
    rows.push_back({angles[a], taste.value, std::hypot(taste.std_error, base.baseline_std_error),
                    mse.value, mse.std_error, loglik.value, loglik.std_error});
  }
  return rows;
}

namespace {

struct TiltSamples {
  Vec stein_p;   // L_p f at p-samples
  Vec h;         // h at p-samples
  std::vector<Vec> stein_q;  // translation mode: L_p f at shifted samples
  std::vector<Vec> weights;  // importance mode: normalized weights
  std::vector<double> ess;
  bool translation = false;
};

TiltSamples draw_tilt_samples(const Predictor& f, const SamplableDistribution& p,
                              const Potential& h, const std::vector<double>& strengths,
                              std::size_t n, Rng& rng) {
  require(n >= 2, "insufficient samples");
  require(h.dimension() == p.dimension() && f.dimension() == p.dimension(), "dimension mismatch");
  TiltSamples s;
  const Points xs = p.sample(n, rng);
  s.stein_p = stein_on(xs, f, p.model());
  s.h.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.h[i] = h.value(xs[i]);
  s.translation = h.kind() == Potential::Kind::linear && is_single_isotropic_gaussian(p);
  for (double eps : strengths) {
    if (s.translation) {
      // q_eps = N(m + eps v c, v I): same noise, shifted mean.
      const double var = std::get<IsotropicGaussian>(p.model().kind()).variance;
      const Vec shift = scaled(h.coefficients(), eps * var);
      Points shifted = xs;
      for (auto& x : shifted) x = add(x, shift);
      s.stein_q.push_back(stein_on(shifted, f, p.model()));
      s.ess.push_back(static_cast<double>(n));
    } else {
      auto w = tilt_importance_weights(h, eps, xs);
      if (w.effective_sample_size < 0.1 * static_cast<double>(n))
        throw Error(ErrorKind::numerical, "effective sample size below threshold");
      s.ess.push_back(w.effective_sample_size);
      s.weights.push_back(std::move(w.weights));
    }
  }
  return s;
}

// Estimate of E_q[g] - E_p[g] on shared samples, with a linearized stderr.
Estimate tilt_difference(const TiltSamples& s, std::size_t k, const Vec& g_p, const Vec* g_q) {
  const std::size_t n = g_p.size();
  if (s.translation) {
    Vec d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = (*g_q)[i] - g_p[i];
    return mean_and_stderr(d);
  }
  const Vec& w = s.weights[k];
  const double plain = mean(g_p);
  double weighted = 0.0;
  for (std::size_t i = 0; i < n; ++i) weighted += w[i] * g_p[i];
  const double nn = static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double psi = nn * w[i] * (g_p[i] - weighted) - (g_p[i] - plain);
    ss += psi * psi;
  }
  return {weighted - plain, std::sqrt(ss) / nn};
}

}  // namespace

TiltSlopeResult tilt_slope_check(const Predictor& f, const SamplableDistribution& p,
                                 const Potential& h, const std::vector<double>& strengths,
                                 std::size_t n, Rng& rng, double relative_tolerance) {
  require(!strengths.empty(), "strength grid must be non-empty");
  const std::uint64_t seed = rng.seed();
  const TiltSamples s = draw_tilt_samples(f, p, h, strengths, n, rng);
  const Estimate cov = covariance_estimate(s.stein_p, s.h);

  TiltSlopeResult out;
  out.mode = s.translation ? "translation" : "importance";
  out.min_effective_sample_size = *std::min_element(s.ess.begin(), s.ess.end());
  for (std::size_t k = 0; k < strengths.size(); ++k) {
    const double eps = strengths[k];
    // E_p[L_p f] = 0, so E_q - E_p on shared samples estimates S_f(p, q_eps).
    const Estimate diff =
        tilt_difference(s, k, s.stein_p, s.translation ? &s.stein_q[k] : nullptr);
    out.curve.push_back({eps, diff.value, diff.std_error});
    if (eps == 0.0) continue;
    auto report = make_report("tilt_slope", {diff.value / eps, diff.std_error / std::abs(eps)}, cov,
                              n, seed);
    report.relative_tolerance = relative_tolerance;
    report.terms = {{"strength", eps}, {"taste", diff.value}, {"ess", s.ess[k]}};
    out.slope_checks.push_back(std::move(report));
  }
  return out;
}

IdentityCheckReport tilt_variance_check(const Predictor& f, const SamplableDistribution& p,
                                        const Potential& h, double strength, std::size_t n,
                                        Rng& rng) {
  const std::uint64_t seed = rng.seed();
  const TiltSamples s = draw_tilt_samples(f, p, h, {strength}, n, rng);
  const std::size_t m = s.stein_p.size();
  const double var_p = variance(s.stein_p);
  Vec sq_p(m);
  for (std::size_t i = 0; i < m; ++i) sq_p[i] = s.stein_p[i] * s.stein_p[i];
  const Estimate cov_sq = covariance_estimate(sq_p, s.h);

  // Var_q - Var_p on shared samples, from first and second moment differences.
  const double mean_p = mean(s.stein_p);
  double var_q = 0.0;
  Estimate d1, d2;
  if (s.translation) {
    const Vec& lq = s.stein_q.front();
    Vec sq_q(m);
    for (std::size_t i = 0; i < m; ++i) sq_q[i] = lq[i] * lq[i];
    d1 = tilt_difference(s, 0, s.stein_p, &lq);
    d2 = tilt_difference(s, 0, sq_p, &sq_q);
    var_q = variance(lq);
  } else {
    d1 = tilt_difference(s, 0, s.stein_p, nullptr);
    d2 = tilt_difference(s, 0, sq_p, nullptr);
    const Vec& w = s.weights.front();
    double mw = 0.0, m2w = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      mw += w[i] * s.stein_p[i];
      m2w += w[i] * sq_p[i];
    }
    var_q = m2w - mw * mw;
  }
  // Var_q - Var_p = d2 - (2 mean_p d1 + d1^2): dominant noise from d2.
  const double var_gap = var_q - var_p;
  const double gap_se = std::hypot(d2.std_error, 2.0 * std::abs(mean_p) * d1.std_error);
  const double predicted_gap = strength * cov_sq.value;

  auto report = make_report("tilt_variance", {var_p + var_gap, gap_se},
                            {var_p + predicted_gap, std::abs(strength) * cov_sq.std_error}, n, seed);
  report.terms = {{"strength", strength},
                  {"var_q", var_q},
                  {"var_p", var_p},
                  {"cov_sq_h", cov_sq.value},
                  {"remainder", var_gap - predicted_gap},
                  {"ess", s.ess.front()}};
  return report;
}

IdentityCheckReport directional_decomposition_check(const Predictor& f,
                                                    const SamplableDistribution& p,
                                                    const SamplableDistribution& q,
                                                    const ScoreModel& approx, std::size_t n,
                                                    Rng& rng) {
  require(n >= 2, "insufficient samples");
  require(p.dimension() == q.dimension() && approx.dimension() == p.dimension() &&
              f.dimension() == p.dimension(),
          "dimension mismatch");
  const std::uint64_t seed = rng.seed();
  const Points xq = q.sample(n, rng);
  const Points xp = p.sample(n, rng);
  const Points xq2 = q.sample(n, rng);
  const Points xp2 = p.sample(n, rng);

  const Estimate approx_q = estimate_of(stein_on(xq, f, approx));
  const Estimate approx_p = estimate_of(stein_on(xp, f, approx));
  const Estimate exact_q = estimate_of(stein_on(xq2, f, p.model()));
  Vec cross(n);
  parallel_for(n, [&](std::size_t i) {
    const Vec& x = xp2[i];
    const double g = dot(sub(approx.score(x), p.score(x)), f.gradient(x));
    const double l = std::exp(q.log_density(x) - p.log_density(x));
    cross[i] = g * (l - 1.0);
  });
  const Estimate inner = estimate_of(cross);

  const double rhs = approx_p.value + exact_q.value + inner.value;
  const double rhs_se = std::sqrt(approx_p.std_error * approx_p.std_error +
                                  exact_q.std_error * exact_q.std_error +
                                  inner.std_error * inner.std_error);
  auto report = make_report("directional_decomposition", approx_q, {rhs, rhs_se}, n, seed);
  report.terms = {{"approx_q", approx_q.value},   {"approx_q_se", approx_q.std_error},
                  {"approx_p", approx_p.value},   {"approx_p_se", approx_p.std_error},
                  {"taste", exact_q.value},       {"taste_se", exact_q.std_error},
                  {"score_error", inner.value},   {"score_error_se", inner.std_error},
                  {"adjusted", approx_q.value - approx_p.value},
                  {"adjusted_se", std::hypot(approx_q.std_error, approx_p.std_error)}};
  return report;
}

IdentityCheckReport fisher_bound_check(const Predictor& f, const SamplableDistribution& p,
                                       const SamplableDistribution& q, const ScoreModel& approx,
                                       std::size_t n, Rng& rng) {
  require(n >= 2, "insufficient samples");
  require(p.dimension() == q.dimension() && approx.dimension() == p.dimension() &&
              f.dimension() == p.dimension(),
          "dimension mismatch");
  const std::uint64_t seed = rng.seed();
  const Points xs = p.sample(n, rng);
  Vec cross(n), fisher(n), grad4(n), ratio4(n);
  parallel_for(n, [&](std::size_t i) {
    const Vec& x = xs[i];
    const Vec err = sub(approx.score(x), p.score(x));
    const Vec grad = f.gradient(x);
    const double l1 = std::exp(q.log_density(x) - p.log_density(x)) - 1.0;
    const double gg = dot(grad, grad);
    cross[i] = dot(err, grad) * l1;
    fisher[i] = dot(err, err);
    grad4[i] = gg * gg;
    ratio4[i] = l1 * l1 * l1 * l1;
  });
  const Estimate c = estimate_of(cross);
  const Estimate j = estimate_of(fisher);
  const Estimate g4 = estimate_of(grad4);
  const Estimate r4 = estimate_of(ratio4);

  const double rhs = std::sqrt(j.value) * std::pow(g4.value, 0.25) * std::pow(r4.value, 0.25);
  // Delta method on sqrt(J) * G^(1/4) * R^(1/4), factors treated as independent.
  auto rel = [](const Estimate& e, double power) {
    return e.value > 0.0 ? power * e.std_error / e.value : 0.0;
  };
  const double rhs_se = rhs * std::sqrt(std::pow(rel(j, 0.5), 2) + std::pow(rel(g4, 0.25), 2) +
                                        std::pow(rel(r4, 0.25), 2));
  auto report = make_report("fisher_bound", {std::abs(c.value), c.std_error}, {rhs, rhs_se}, n, seed,
                            IdentityCheckReport::Relation::upper_bound);
  report.terms = {{"score_error", c.value},
                  {"fisher_divergence", j.value},
                  {"grad_l4", std::pow(g4.value, 0.25)},
                  {"ratio_l4", std::pow(r4.value, 0.25)}};
  return report;
}

LabeledSamples mixture_build(const SamplableDistribution& in_dist,
                             const SamplableDistribution& out_dist, double out_fraction,
                             std::size_t n, Rng& rng) {
  require(out_fraction >= 0.0 && out_fraction <= 1.0, "out fraction must lie in [0,1]");
  require(in_dist.dimension() == out_dist.dimension(), "dimension mismatch");
  const auto n_out = static_cast<std::size_t>(std::llround(out_fraction * static_cast<double>(n)));
  LabeledSamples s;
  s.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool out = i < n_out;
    s.points.push_back(out ? out_dist.sample(rng) : in_dist.sample(rng));
    s.labels.push_back(out ? 1 : 0);
  }
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(s.points[i - 1], s.points[j]);
    std::swap(s.labels[i - 1], s.labels[j]);
  }
  return s;
}

std::vector<BlindSpotRow> blind_spot_sweep(const Predictor& f, double magnitude,
                                           const std::vector<double>& thetas, const Vec& v,
                                           std::size_t n, Rng& rng) {
  require(!thetas.empty(), "angle grid must be non-empty");
  require(f.dimension() == 2 && v.size() == 2, "blind-spot sweep is two-dimensional");
  require(norm_inf(v) > 0.0, "projection direction must be non-zero");
  const SamplableDistribution p(ScoreModel::standard_normal(2));
  const Points calibration = p.sample(n, rng);
  const std::uint64_t seed = rng.next();

  std::vector<BlindSpotRow> rows;
  for (std::size_t a = 0; a < thetas.size(); ++a) {
    const double t = thetas[a];
    const Vec mu{magnitude * std::cos(t), magnitude * std::sin(t)};
    const SamplableDistribution q = translated(p, mu);
    Rng local(derive_seed(seed, a, 0));
    const Points xs = q.sample(n, local);
    Vec first(n);
    for (std::size_t i = 0; i < n; ++i) first[i] = first_order_projected(f, p.model(), xs[i], v);
    const Estimate fo = mean_and_stderr(first);
    const Estimate lv = mean_and_stderr(stein_on(xs, f, p.model()));
    const Estimate l2 = first_order_l2_corrected(xs, calibration, f, p.model());
    const double closed = magnitude * magnitude * (v[0] * std::cos(t) + v[1] * std::sin(t)) *
                          (std::cos(t) - std::sin(t));
    rows.push_back({t, fo.value, fo.std_error, closed, lv.value, lv.std_error, l2.value, l2.std_error});
  }
  return rows;
}

}  // namespace tastekit
