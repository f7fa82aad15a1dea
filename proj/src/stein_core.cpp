#include "tastekit/stein_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tastekit/error.hpp"

namespace tastekit {

LaplacianRoute LaplacianRoute::parse(const std::string& text) {
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  std::optional<std::size_t> arg;
  if (colon != std::string::npos) {
    const std::string tail = text.substr(colon + 1);
    std::size_t used = 0;
    long v = -1;
    try {
      v = std::stol(tail, &used);
    } catch (const std::exception&) {
    }
    require(v >= 1 && used == tail.size(), "invalid route argument in '" + text + "'");
    arg = static_cast<std::size_t>(v);
  }
  if (head == "exact" && !arg) return exact();
  if (head == "omit" && !arg) return omitted();
  if (head == "shortcut") return shortcut(arg);
  if (head == "hutchinson") {
    require(arg.has_value(), "hutchinson route needs a probe count, e.g. hutchinson:16");
    return hutchinson(*arg);
  }
  throw Error(ErrorKind::invalid_argument, "unknown laplacian route '" + text + "'");
}

std::string LaplacianRoute::to_string() const {
  switch (kind) {
    case Kind::exact: return "exact";
    case Kind::omitted: return "omit";
    case Kind::hutchinson: return "hutchinson:" + std::to_string(probes);
    case Kind::softmax_shortcut:
      return top_k ? "shortcut:" + std::to_string(*top_k) : std::string("shortcut");
  }
  return "unknown";
}

HutchinsonResult hutchinson_laplacian(const Predictor& f, const Vec& x, std::size_t probes,
                                      Rng& rng, const HutchinsonOptions& options) {
  require(probes >= 1, "hutchinson needs at least one probe");
  require(x.size() == f.dimension(), "dimension mismatch");
  const double eta = options.step.value_or(1e-4 * (1.0 + norm_inf(x)));
  require(eta > 0.0, "finite-difference step must be positive");
  HutchinsonResult out;
  out.probe_values.reserve(probes);
  for (std::size_t k = 0; k < probes; ++k) {
    const Vec v = rng.rademacher_vec(x.size());
    double quad = 0.0;
    if (options.hvp == HutchinsonOptions::Hvp::exact) {
      quad = f.curvature_along(x, v);
    } else {
      Vec plus = x, minus = x;
      axpy(eta, v, plus);
      axpy(-eta, v, minus);
      const Vec hv = scaled(sub(f.gradient(plus), f.gradient(minus)), 0.5 / eta);
      quad = dot(v, hv);
    }
    out.probe_values.push_back(quad);
  }
  out.estimate = mean(out.probe_values);
  return out;
}

double laplacian_term(const Predictor& f, const Vec& x, const LaplacianRoute& route, Rng* rng) {
  switch (route.kind) {
    case LaplacianRoute::Kind::exact:
      return input_laplacian_exact(f, x);
    case LaplacianRoute::Kind::omitted:
      return 0.0;
    case LaplacianRoute::Kind::hutchinson:
      require(rng != nullptr, "hutchinson route needs a random stream");
      return hutchinson_laplacian(f, x, route.probes, *rng).estimate;
    case LaplacianRoute::Kind::softmax_shortcut: {
      const auto* mlp = dynamic_cast<const MlpPredictor*>(&f);
      require(mlp != nullptr, "shortcut requires piecewise-affine backbone");
      return input_laplacian_softmax_shortcut(*mlp, x, mlp->selected_class(mlp->logits(x)),
                                              route.top_k);
    }
  }
  return 0.0;
}

double langevin_apply(const Predictor& f, const ScoreModel& score, const Vec& x,
                      const LaplacianRoute& route, Rng* rng) {
  require(x.size() == f.dimension() && score.dimension() == f.dimension(), "dimension mismatch");
  return laplacian_term(f, x, route, rng) + dot(score.score(x), f.gradient(x));
}

Vec per_dimension_residuals(const Predictor& f, const ScoreModel& score, const Vec& x) {
  require(x.size() == f.dimension() && score.dimension() == f.dimension(), "dimension mismatch");
  require(f.dimension() <= kExactLaplacianMaxDim, "use hutchinson route");
  Vec r = f.hessian_diagonal(x);
  const Vec s = score.score(x);
  const Vec g = f.gradient(x);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] += s[i] * g[i];
  return r;
}

std::string to_string(ResidualMode m) {
  switch (m) {
    case ResidualMode::absolute: return "absolute";
    case ResidualMode::signed_upper: return "signed-upper";
    case ResidualMode::signed_lower: return "signed-lower";
  }
  return "unknown";
}

ResidualMode residual_mode_from_string(const std::string& name) {
  if (name == "absolute") return ResidualMode::absolute;
  if (name == "signed-upper") return ResidualMode::signed_upper;
  if (name == "signed-lower") return ResidualMode::signed_lower;
  throw Error(ErrorKind::invalid_argument, "unknown residual mode '" + name + "'");
}

double mode_statistic(double residual, ResidualMode mode) {
  switch (mode) {
    case ResidualMode::absolute: return std::abs(residual);
    case ResidualMode::signed_upper: return residual;
    case ResidualMode::signed_lower: return -residual;
  }
  return residual;
}

Vec stein_values(std::span<const Vec> points, const Predictor& f, const ScoreModel& score,
                 const LaplacianRoute& route, std::uint64_t seed, std::uint64_t stream,
                 const HutchinsonOptions& hutchinson) {
  Vec out(points.size());
  parallel_for(points.size(), [&](std::size_t i) {
    const Vec& x = points[i];
    double lap = 0.0;
    if (route.kind == LaplacianRoute::Kind::hutchinson) {
      Rng rng(derive_seed(seed, stream, i));
      lap = hutchinson_laplacian(f, x, route.probes, rng, hutchinson).estimate;
    } else {
      lap = laplacian_term(f, x, route);
    }
    out[i] = lap + dot(score.score(x), f.gradient(x));
  });
  if (!all_finite(out)) throw Error(ErrorKind::numerical, "non-finite Stein value");
  return out;
}

namespace {

Mat per_dimension_matrix(std::span<const Vec> points, const Predictor& f, const ScoreModel& score) {
  const std::size_t d = f.dimension();
  Mat m(points.size(), d);
  parallel_for(points.size(), [&](std::size_t i) {
    const Vec r = per_dimension_residuals(f, score, points[i]);
    std::copy(r.begin(), r.end(), m.data.begin() + static_cast<std::ptrdiff_t>(i * d));
  });
  return m;
}

std::string class_convention(const Predictor& f) {
  const auto* mlp = dynamic_cast<const MlpPredictor*>(&f);
  if (mlp == nullptr || mlp->head() != Head::softmax) return "scalar-output";
  return mlp->selection().use_argmax ? "argmax" : "pinned:" + std::to_string(mlp->selection().pinned);
}

}  // namespace

std::pair<ResidualBatch, CalibrationBaseline> batch_adjusted_residuals(
    std::span<const Vec> test, std::span<const Vec> calibration, const Predictor& f,
    const ScoreModel& score, const ResidualOptions& options, std::uint64_t seed) {
  require(!test.empty(), "test set is empty");
  require(!options.compute_baseline || !calibration.empty(),
          "baseline computation needs a calibration set");
  require(!options.per_dimension || options.route.kind == LaplacianRoute::Kind::exact,
          "per-dimension residuals need the exact laplacian route");
  for (const auto& x : test) require(x.size() == f.dimension(), "dimension mismatch", ErrorKind::data);
  for (const auto& x : calibration)
    require(x.size() == f.dimension(), "dimension mismatch", ErrorKind::data);

  CalibrationBaseline base;
  ResidualBatch batch;
  batch.route = options.route;
  batch.provenance = {f.id(), score.id(), seed, class_convention(f)};

  if (options.compute_baseline) {
    const Vec cal = stein_values(calibration, f, score, options.route, seed, 0, options.hutchinson);
    base.baseline = mean(cal);
    base.baseline_std_error = cal.size() >= 2 ? mean_and_stderr(cal).std_error : 0.0;
    base.n_calibration = cal.size();
    if (options.per_dimension) {
      const Mat m = per_dimension_matrix(calibration, f, score);
      Vec col(m.cols, 0.0);
      for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) col[j] += m(i, j);
      for (auto& c : col) c /= static_cast<double>(m.rows);
      base.per_dimension = std::move(col);
    }
  } else if (options.per_dimension) {
    base.per_dimension = Vec(f.dimension(), 0.0);
  }

  batch.raw = stein_values(test, f, score, options.route, seed, 1, options.hutchinson);
  batch.baseline = base.baseline;
  batch.adjusted = batch.raw;
  for (auto& r : batch.adjusted) r -= base.baseline;

  if (options.per_dimension) {
    Mat raw = per_dimension_matrix(test, f, score);
    Mat adjusted = raw;
    for (std::size_t i = 0; i < adjusted.rows; ++i)
      for (std::size_t j = 0; j < adjusted.cols; ++j) adjusted(i, j) -= (*base.per_dimension)[j];
    batch.per_dimension_raw = std::move(raw);
    batch.per_dimension_adjusted = std::move(adjusted);
  }
  return {std::move(batch), std::move(base)};
}

TasteEstimate taste_functional_estimate(const ResidualBatch& batch) {
  require(!batch.adjusted.empty(), "residual batch is empty");
  TasteEstimate out;
  out.n = batch.adjusted.size();
  if (out.n == 1) {
    out.value = batch.adjusted.front();
    out.std_error = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  const auto e = mean_and_stderr(batch.adjusted);
  out.value = e.value;
  out.std_error = e.std_error;
  out.std_error_defined = true;
  return out;
}

Vec first_order_apply(const Predictor& f, const ScoreModel& score, const Vec& x) {
  require(x.size() == f.dimension() && score.dimension() == f.dimension(), "dimension mismatch");
  Vec out = f.gradient(x);
  axpy(f.value(x), score.score(x), out);
  return out;
}

double first_order_projected(const Predictor& f, const ScoreModel& score, const Vec& x,
                             const Vec& v) {
  require(v.size() == f.dimension(), "dimension mismatch");
  require(norm_inf(v) > 0.0, "projection direction must be non-zero");
  return dot(v, first_order_apply(f, score, x));
}

Estimate first_order_l2_corrected(std::span<const Vec> test, std::span<const Vec> calibration,
                                  const Predictor& f, const ScoreModel& score) {
  require(test.size() >= 2 && calibration.size() >= 2, "insufficient samples");
  auto squared_norms = [&](std::span<const Vec> pts) {
    Vec out(pts.size());
    parallel_for(pts.size(), [&](std::size_t i) {
      const Vec a = first_order_apply(f, score, pts[i]);
      out[i] = dot(a, a);
    });
    return mean_and_stderr(out);
  };
  const Estimate t = squared_norms(test);
  const Estimate c = squared_norms(calibration);
  return {t.value - c.value, std::hypot(t.std_error, c.std_error)};
}

}  // namespace tastekit
