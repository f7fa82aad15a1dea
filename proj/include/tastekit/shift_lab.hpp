#pragma once

// Shift families and Monte-Carlo checks of the identities that tie the
// Stein functional to the shift: projection identity, tilt expansions,
// score-error decomposition and its Fisher bound, plus the rotation and
// first-order blind-spot sweeps.

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "tastekit/numkit.hpp"
#include "tastekit/predictors.hpp"
#include "tastekit/score_models.hpp"
#include "tastekit/stein_core.hpp"

namespace tastekit {

struct RotationShift {
  double magnitude = 10.0;
  Vec base_direction;  // unit 2-vector
  double angle = 0.0;
};

struct MeanShift {
  Vec offset;
};

struct TiltShift {
  Potential potential;
  double strength = 0.0;
};

struct MixtureShift {
  std::shared_ptr<const SamplableDistribution> in_dist;
  std::shared_ptr<const SamplableDistribution> out_dist;
  double out_fraction = 0.0;
};

class ShiftFamily {
 public:
  using Kind = std::variant<RotationShift, MeanShift, TiltShift, MixtureShift>;

  static ShiftFamily rotation(double magnitude, Vec base_direction, double angle);
  static ShiftFamily mean_shift(Vec offset);
  static ShiftFamily tilt(Potential h, double strength);
  static ShiftFamily mixture(SamplableDistribution in_dist, SamplableDistribution out_dist,
                             double out_fraction);

  const Kind& kind() const noexcept { return kind_; }

  // The shifted test distribution q. Rotation and mean shifts translate
  // `base`; tilts reweight it; mixtures ignore it.
  SamplableDistribution resolve(const SamplableDistribution& base) const;

 private:
  explicit ShiftFamily(Kind k) : kind_(std::move(k)) {}
  Kind kind_;
};

// Translates every mixture component of a closed-form distribution.
SamplableDistribution translated(const SamplableDistribution& base, const Vec& offset);

struct IdentityCheckReport {
  enum class Relation { equality, upper_bound };

  std::string name;
  Relation relation = Relation::equality;
  double lhs = 0.0;
  double lhs_std_error = 0.0;
  double rhs = 0.0;
  double rhs_std_error = 0.0;
  // (lhs - rhs) / sqrt(lhs_se^2 + rhs_se^2); 0 when both sides are exact and equal.
  double discrepancy = 0.0;
  // Optional relative slack: the check also passes when |lhs - rhs| <= tol * |rhs|.
  double relative_tolerance = 0.0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  std::map<std::string, double> terms;

  double combined_std_error() const;
  // Equality: |discrepancy| < sigmas (or within relative tolerance).
  // Upper bound: discrepancy < sigmas.
  bool passes(double sigmas = 3.0) const;
};

IdentityCheckReport make_report(std::string name, Estimate lhs, Estimate rhs, std::size_t n,
                                std::uint64_t seed,
                                IdentityCheckReport::Relation relation =
                                    IdentityCheckReport::Relation::equality);

/// S_f(p,q) two ways on the same q-samples: the mean of L_p f and
/// -mean grad f . (s_q - s_p).
IdentityCheckReport projection_identity_check(const Predictor& f, const ScoreModel& p,
                                              const SamplableDistribution& q, std::size_t n,
                                              Rng& rng);

struct SweepRow {
  double phi = 0.0;
  double taste = 0.0;
  double taste_std_error = 0.0;
  double mse = 0.0;
  double mse_std_error = 0.0;
  double loglik = 0.0;
  double loglik_std_error = 0.0;
};

struct RotationSweepOptions {
  Vec base_direction = {0.7071067811865476, 0.7071067811865476};
  std::size_t calibration_samples = 0;  // 0: same as the per-angle count
  // Regression target for the task error; defaults to x2 - x1.
  std::function<double(const Vec&)> target;
  LaplacianRoute route = LaplacianRoute::exact();
};

/// Translates one antithetic standard-normal cloud by magnitude * R_phi u
/// for each angle and reports the baseline-corrected functional, task MSE
/// and mean log-likelihood under p = N(0, I_2).
std::vector<SweepRow> rotation_sweep(const Predictor& f, const ScoreModel& score,
                                     double magnitude, const std::vector<double>& angles,
                                     std::size_t n, Rng& rng,
                                     const RotationSweepOptions& options = {});

std::vector<double> angle_grid(std::size_t count);  // count angles on [0, 2 pi)

struct TiltPoint {
  double strength = 0.0;
  double taste = 0.0;
  double taste_std_error = 0.0;
};

struct TiltSlopeResult {
  std::string mode;  // "translation" or "importance"
  double min_effective_sample_size = 0.0;
  std::vector<TiltPoint> curve;
  // One report per non-zero strength: finite-difference slope vs Cov_p(L_p f, h).
  std::vector<IdentityCheckReport> slope_checks;
};

/// First-order tilt response. Linear tilts of a single isotropic Gaussian
/// are sampled by translating p-samples (common random numbers); other
/// tilts reweight p-samples by exp(eps h) and fail when the effective
/// sample size drops below 0.1 n.
TiltSlopeResult tilt_slope_check(const Predictor& f, const SamplableDistribution& p,
                                 const Potential& h, const std::vector<double>& strengths,
                                 std::size_t n, Rng& rng, double relative_tolerance = 0.05);

// Var_{q_eps}[L_p f] against Var_p[L_p f] + eps Cov_p((L_p f)^2, h).
IdentityCheckReport tilt_variance_check(const Predictor& f, const SamplableDistribution& p,
                                        const Potential& h, double strength, std::size_t n,
                                        Rng& rng);

/// E_q[L~ f] = E_p[L~ f] + S_f(p,q) + <g, l - 1>_{L2(p)}, every term
/// estimated from its own sample, g = (s~ - s_p) . grad f, l = q/p.
IdentityCheckReport directional_decomposition_check(const Predictor& f,
                                                    const SamplableDistribution& p,
                                                    const SamplableDistribution& q,
                                                    const ScoreModel& approx, std::size_t n,
                                                    Rng& rng);

/// |<g, l - 1>| <= sqrt(J) ||grad f||_L4(p) ||l - 1||_L4(p), all factors by
/// Monte Carlo under p.
IdentityCheckReport fisher_bound_check(const Predictor& f, const SamplableDistribution& p,
                                       const SamplableDistribution& q, const ScoreModel& approx,
                                       std::size_t n, Rng& rng);

struct LabeledSamples {
  Points points;
  std::vector<int> labels;  // 1 = out-of-distribution
};

// Exactly round(out_fraction * n) out-of-distribution points, shuffled.
LabeledSamples mixture_build(const SamplableDistribution& in_dist,
                             const SamplableDistribution& out_dist, double out_fraction,
                             std::size_t n, Rng& rng);

struct BlindSpotRow {
  double theta = 0.0;
  double first_order = 0.0;
  double first_order_std_error = 0.0;
  double closed_form = 0.0;  // eps^2 (v1 cos + v2 sin)(cos - sin)
  double langevin = 0.0;
  double langevin_std_error = 0.0;
  double l2_corrected = 0.0;
  double l2_corrected_std_error = 0.0;
};

/// q_theta = N(eps (cos theta, sin theta), I_2) against p = N(0, I_2):
/// projected first-order functional along v, the Langevin functional and
/// the baseline-corrected squared-norm statistic at each angle. The closed
/// form column is exact for f(x) = x2 - x1.
std::vector<BlindSpotRow> blind_spot_sweep(const Predictor& f, double magnitude,
                                           const std::vector<double>& thetas, const Vec& v,
                                           std::size_t n, Rng& rng);

}  // namespace tastekit
