#pragma once

// Calibrated OOD decisions on residuals and the usual evaluation metrics.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tastekit/numkit.hpp"
#include "tastekit/score_models.hpp"
#include "tastekit/stein_core.hpp"

namespace tastekit {

inline constexpr std::size_t kMinCalibrationResiduals = 20;
inline constexpr std::size_t kMinOutScoresForFpr95 = 20;

/// tau_alpha: empirical (1 - alpha)-quantile of the mode statistic of the
/// calibration residuals (|r|, r or -r).
double calibrate(std::span<const double> residuals, double alpha, ResidualMode mode,
                 std::size_t min_samples = kMinCalibrationResiduals);

// Flags x when the mode statistic strictly exceeds tau.
bool decide(double residual, double threshold, ResidualMode mode);

/// P(out > in) + P(out == in) / 2 over all pairs (Mann-Whitney).
double auroc(std::span<const double> in_scores, std::span<const double> out_scores);

/// Fraction of in-scores at or above t, where t is the largest out-score
/// such that at least 95% of out-scores are >= t (t = o_(floor(0.05 n)) in
/// ascending order). Larger scores mean more OOD.
double fpr_at_95_tpr(std::span<const double> in_scores, std::span<const double> out_scores);

struct DetectionReport {
  Vec scores;  // mode statistic per sample
  std::vector<int> labels;
  std::vector<int> decisions;
  double alpha = 0.05;
  double threshold = 0.0;
  ResidualMode mode = ResidualMode::absolute;
  double fpr = 0.0;
  double tpr = 0.0;
  double auroc = 0.5;
  double fpr95 = 0.0;
  std::uint64_t seed = 0;
  Provenance provenance;
};

// Scores, decisions and metrics for labeled residuals (1 = OOD). Metrics
// that need both classes are NaN when one is absent.
DetectionReport evaluate_detection(std::span<const double> residuals, std::span<const int> labels,
                                   const CalibrationBaseline& baseline);

// Maps a point to its adjusted residual; paired with a calibrated baseline.
struct ScoringPipeline {
  std::function<double(const Vec&)> residual;
  CalibrationBaseline baseline;
};

struct PowerRow {
  double corruption = 0.0;
  double power = 0.0;           // flagged fraction of OOD members; NaN without any
  double fpr = 0.0;             // flagged fraction of in-distribution members
  double rejection_rate = 0.0;  // flagged fraction overall
  double accuracy = 0.0;        // decisions matching labels
  std::size_t n = 0;
  std::size_t n_out = 0;
};

std::vector<PowerRow> power_curve(const SamplableDistribution& in_dist,
                                  const SamplableDistribution& out_dist,
                                  const std::vector<double>& corruption, std::size_t n,
                                  const ScoringPipeline& pipeline, Rng& rng);

}  // namespace tastekit
