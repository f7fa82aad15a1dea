#include "tastekit/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tastekit/error.hpp"
#include "tastekit/shift_lab.hpp"

namespace tastekit {

double calibrate(std::span<const double> residuals, double alpha, ResidualMode mode,
                 std::size_t min_samples) {
  require(residuals.size() >= min_samples, "insufficient calibration residuals");
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
  Vec stats(residuals.size());
  for (std::size_t i = 0; i < stats.size(); ++i) stats[i] = mode_statistic(residuals[i], mode);
  return empirical_quantile(stats, 1.0 - alpha);
}

bool decide(double residual, double threshold, ResidualMode mode) {
  return mode_statistic(residual, mode) > threshold;
}

double auroc(std::span<const double> in_scores, std::span<const double> out_scores) {
  require(!in_scores.empty() && !out_scores.empty(), "auroc needs non-empty score lists");
  // Rank-sum form of the Mann-Whitney statistic with mid-ranks for ties.
  struct Item {
    double score;
    bool out;
  };
  std::vector<Item> all;
  all.reserve(in_scores.size() + out_scores.size());
  for (double s : in_scores) all.push_back({s, false});
  for (double s : out_scores) all.push_back({s, true});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
  double out_rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (all[k].out) out_rank_sum += mid_rank;
    i = j;
  }
  const double n_out = static_cast<double>(out_scores.size());
  const double n_in = static_cast<double>(in_scores.size());
  return (out_rank_sum - n_out * (n_out + 1.0) / 2.0) / (n_out * n_in);
}

double fpr_at_95_tpr(std::span<const double> in_scores, std::span<const double> out_scores) {
  require(out_scores.size() >= kMinOutScoresForFpr95, "fpr95 needs at least 20 out-scores");
  require(!in_scores.empty(), "fpr95 needs in-scores");
  std::vector<double> sorted(out_scores.begin(), out_scores.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  // Largest k with n - k >= 0.95 n, guarded against 0.05 * n rounding.
  auto k = static_cast<std::size_t>(std::floor(0.05 * n + 1e-9));
  const double threshold = sorted[std::min(k, sorted.size() - 1)];
  const auto above = std::count_if(in_scores.begin(), in_scores.end(),
                                   [&](double s) { return s >= threshold; });
  return static_cast<double>(above) / static_cast<double>(in_scores.size());
}

DetectionReport evaluate_detection(std::span<const double> residuals, std::span<const int> labels,
                                   const CalibrationBaseline& baseline) {
  require(residuals.size() == labels.size(), "residuals and labels differ in length");
  require(baseline.threshold.has_value(), "baseline has no calibrated threshold");
  DetectionReport r;
  r.alpha = baseline.alpha;
  r.threshold = *baseline.threshold;
  r.mode = baseline.mode;
  r.labels.assign(labels.begin(), labels.end());
  Vec in_scores, out_scores;
  std::size_t fp = 0, tp = 0;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    const double s = mode_statistic(residuals[i], r.mode);
    const bool flag = s > r.threshold;
    r.scores.push_back(s);
    r.decisions.push_back(flag ? 1 : 0);
    if (labels[i]) {
      out_scores.push_back(s);
      tp += flag;
    } else {
      in_scores.push_back(s);
      fp += flag;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.fpr = in_scores.empty() ? nan : static_cast<double>(fp) / static_cast<double>(in_scores.size());
  r.tpr = out_scores.empty() ? nan : static_cast<double>(tp) / static_cast<double>(out_scores.size());
  r.auroc = (in_scores.empty() || out_scores.empty()) ? nan : auroc(in_scores, out_scores);
  r.fpr95 = (in_scores.empty() || out_scores.size() < kMinOutScoresForFpr95)
                ? nan
                : fpr_at_95_tpr(in_scores, out_scores);
  return r;
}

std::vector<PowerRow> power_curve(const SamplableDistribution& in_dist,
                                  const SamplableDistribution& out_dist,
                                  const std::vector<double>& corruption, std::size_t n,
                                  const ScoringPipeline& pipeline, Rng& rng) {
  require(pipeline.baseline.threshold.has_value(), "power curve needs a calibrated threshold");
  require(static_cast<bool>(pipeline.residual), "power curve needs a residual function");
  require(n >= 1, "power curve needs at least one sample per level");
  const double tau = *pipeline.baseline.threshold;
  const ResidualMode mode = pipeline.baseline.mode;
  std::vector<PowerRow> rows;
  for (double level : corruption) {
    const LabeledSamples s = mixture_build(in_dist, out_dist, level, n, rng);
    Vec residuals(n);
    parallel_for(n, [&](std::size_t i) { residuals[i] = pipeline.residual(s.points[i]); });
    std::size_t flagged_out = 0, flagged_in = 0, n_out = 0, correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool flag = decide(residuals[i], tau, mode);
      const bool out = s.labels[i] == 1;
      n_out += out;
      (out ? flagged_out : flagged_in) += flag;
      correct += (flag == out);
    }
    const std::size_t n_in = n - n_out;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    PowerRow row;
    row.corruption = level;
    row.n = n;
    row.n_out = n_out;
    row.power = n_out ? static_cast<double>(flagged_out) / static_cast<double>(n_out) : nan;
    row.fpr = n_in ? static_cast<double>(flagged_in) / static_cast<double>(n_in) : nan;
    row.rejection_rate = static_cast<double>(flagged_out + flagged_in) / static_cast<double>(n);
    row.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace tastekit
