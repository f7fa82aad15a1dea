#pragma once

// Langevin Stein operator applied to a fixed predictor:
//   L_p f(x) = lap f(x) + s_p(x) . grad f(x)
// plus Hutchinson trace estimation, batched adjusted residuals,
// per-dimension residual maps and first-order operator variants.

#include <optional>
#include <span>
#include <string>
#include <utility>

#include "tastekit/numkit.hpp"
#include "tastekit/predictors.hpp"
#include "tastekit/score_models.hpp"

namespace tastekit {

struct LaplacianRoute {
  enum class Kind { exact, softmax_shortcut, hutchinson, omitted };

  Kind kind = Kind::exact;
  std::size_t probes = 1;            // hutchinson only
  std::optional<std::size_t> top_k;  // softmax shortcut only

  static LaplacianRoute exact() { return {}; }
  static LaplacianRoute shortcut(std::optional<std::size_t> top_k = std::nullopt) {
    return {Kind::softmax_shortcut, 1, top_k};
  }
  static LaplacianRoute hutchinson(std::size_t probes) { return {Kind::hutchinson, probes, {}}; }
  static LaplacianRoute omitted() { return {Kind::omitted, 1, {}}; }

  // "exact", "shortcut", "shortcut:K", "hutchinson:K", "omit"
  static LaplacianRoute parse(const std::string& text);
  std::string to_string() const;
};

struct HutchinsonOptions {
  enum class Hvp { finite_difference, exact };
  Hvp hvp = Hvp::finite_difference;
  // Central-difference step; default 1e-4 * (1 + ||x||_inf).
  std::optional<double> step;
};

struct HutchinsonResult {
  double estimate = 0.0;
  Vec probe_values;  // v^T H v for each Rademacher probe
};

HutchinsonResult hutchinson_laplacian(const Predictor& f, const Vec& x, std::size_t probes,
                                      Rng& rng, const HutchinsonOptions& options = {});

// Laplacian term by route; the omitted route returns 0. Hutchinson needs rng.
double laplacian_term(const Predictor& f, const Vec& x, const LaplacianRoute& route,
                      Rng* rng = nullptr);

double langevin_apply(const Predictor& f, const ScoreModel& score, const Vec& x,
                      const LaplacianRoute& route = LaplacianRoute::exact(), Rng* rng = nullptr);

// r_i(x) = d_ii f(x) + s_i(x) d_i f(x); sums to the exact-route residual.
Vec per_dimension_residuals(const Predictor& f, const ScoreModel& score, const Vec& x);

enum class ResidualMode { absolute, signed_upper, signed_lower };

std::string to_string(ResidualMode m);
ResidualMode residual_mode_from_string(const std::string& name);
// Detection statistic for a residual under the mode: |r|, r or -r.
double mode_statistic(double residual, ResidualMode mode);

struct Provenance {
  std::string predictor_id;
  std::string score_id;
  std::uint64_t seed = 0;
  std::string class_convention;
};

struct ResidualBatch {
  Vec raw;
  double baseline = 0.0;
  Vec adjusted;
  std::optional<Mat> per_dimension_raw;       // n x d
  std::optional<Mat> per_dimension_adjusted;  // n x d
  LaplacianRoute route;
  Provenance provenance;
};

struct CalibrationBaseline {
  double baseline = 0.0;  // D_f
  double baseline_std_error = 0.0;
  std::optional<Vec> per_dimension;
  std::optional<double> threshold;  // tau_alpha, set by calibrate()
  double alpha = 0.05;
  ResidualMode mode = ResidualMode::absolute;
  std::size_t n_calibration = 0;
};

struct ResidualOptions {
  bool compute_baseline = true;
  LaplacianRoute route = LaplacianRoute::exact();
  HutchinsonOptions hutchinson;
  bool per_dimension = false;
};

// Raw Stein values for a point set. Hutchinson probes for point i are drawn
// from derive_seed(seed, stream, i), so values do not depend on batching or
// thread count.
Vec stein_values(std::span<const Vec> points, const Predictor& f, const ScoreModel& score,
                 const LaplacianRoute& route, std::uint64_t seed, std::uint64_t stream,
                 const HutchinsonOptions& hutchinson = {});

/// Batched adjusted residuals. D_f is the calibration mean of raw values
/// when options.compute_baseline is set (calibration must then be non-empty),
/// otherwise 0. Residuals are raw - D_f; in per-dimension mode each column
/// also has its own calibration mean subtracted.
std::pair<ResidualBatch, CalibrationBaseline> batch_adjusted_residuals(
    std::span<const Vec> test, std::span<const Vec> calibration, const Predictor& f,
    const ScoreModel& score, const ResidualOptions& options, std::uint64_t seed);

struct TasteEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
  bool std_error_defined = false;  // false for a single-sample batch
};

// Mean of the adjusted residuals: the empirical adjusted functional.
TasteEstimate taste_functional_estimate(const ResidualBatch& batch);

// A_p f(x) = grad f(x) + f(x) s_p(x).
Vec first_order_apply(const Predictor& f, const ScoreModel& score, const Vec& x);

// v . A_p f(x). v must be non-zero.
double first_order_projected(const Predictor& f, const ScoreModel& score, const Vec& x,
                             const Vec& v);

// mean_test ||A_p f||^2 - mean_calibration ||A_p f||^2, with the combined
// standard error of the two independent means.
Estimate first_order_l2_corrected(std::span<const Vec> test, std::span<const Vec> calibration,
                                  const Predictor& f, const ScoreModel& score);

}  // namespace tastekit
