#include "tastekit/cli.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iostream>
#include <numbers>
#include <sstream>

#include "CLI11.hpp"
#include "tastekit/detector.hpp"
#include "tastekit/shift_lab.hpp"
#include "tastekit/stein_core.hpp"

namespace tastekit::cli {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

// ---- config access ----

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorKind::invalid_argument, msg); }

void check_keys(const Json& j, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) config_error("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      config_error("unknown config key \"" + key + "\"");
  }
}

const Json& at(const Json& j, const char* key) {
  if (!j.contains(key)) config_error(std::string("missing config key \"") + key + "\"");
  return j.at(key);
}

std::uint64_t get_u64(const Json& j, const char* key) {
  const Json& v = at(j, key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    config_error(std::string("\"") + key + "\" must be a non-negative integer");
  return v.get<std::uint64_t>();
}

double get_double(const Json& j, const char* key) {
  const Json& v = at(j, key);
  if (!v.is_number()) config_error(std::string("\"") + key + "\" must be a number");
  return v.get<double>();
}

std::string get_string(const Json& j, const char* key) {
  const Json& v = at(j, key);
  if (!v.is_string()) config_error(std::string("\"") + key + "\" must be a string");
  return v.get<std::string>();
}

bool get_bool(const Json& j, const char* key) {
  const Json& v = at(j, key);
  if (!v.is_boolean()) config_error(std::string("\"") + key + "\" must be true or false");
  return v.get<bool>();
}

Vec get_vec(const Json& j, const char* key) {
  const Json& v = at(j, key);
  if (!v.is_array() || v.empty()) config_error(std::string("\"") + key + "\" must be a non-empty array");
  Vec out;
  for (const auto& e : v) {
    if (!e.is_number()) config_error(std::string("\"") + key + "\" must hold numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

std::vector<std::size_t> get_sizes(const Json& j, const char* key) {
  const Json& v = at(j, key);
  if (!v.is_array()) config_error(std::string("\"") + key + "\" must be an array");
  std::vector<std::size_t> out;
  for (const auto& e : v) {
    if (!e.is_number_integer() || e.get<std::int64_t>() <= 0)
      config_error(std::string("\"") + key + "\" must hold positive integers");
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

std::size_t get_positive(const Json& j, const char* key) {
  const std::uint64_t v = get_u64(j, key);
  if (v == 0) config_error(std::string("\"") + key + "\" must be positive");
  return static_cast<std::size_t>(v);
}

Json vec_json(const Vec& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(x);
  return a;
}

fs::path out_dir(const Json& config) {
  const std::string out = get_string(config, "out");
  if (out.empty()) config_error("output directory must not be empty");
  fs::create_directories(out);
  return out;
}

struct Outputs {
  fs::path dir;
  std::vector<fs::path> written;

  void text(const std::string& name, const std::string& body) {
    write_text(dir / name, body);
    written.push_back(dir / name);
  }
  void json(const std::string& name, const Json& j) {
    write_json(dir / name, j);
    written.push_back(dir / name);
  }
};

OptimizerConfig adam(double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) config_error("learning rate must be positive");
  return OptimizerConfig{OptimizerConfig::Kind::adam, lr};
}

bool is_path_spec(const std::string& spec) {
  return spec.find('/') != std::string::npos || spec.ends_with(".json");
}

Json checkpoint_metadata(const TrainedPredictor& t) { return t.metadata; }

}  // namespace

// ---- names ----

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::rotate: return "rotate";
    case ExperimentKind::tilt: return "tilt";
    case ExperimentKind::mixed: return "mixed";
    case ExperimentKind::blindspot: return "blindspot";
    case ExperimentKind::identities: return "identities";
  }
  return "rotate";
}

ExperimentKind experiment_kind_from_string(const std::string& name) {
  for (auto k : {ExperimentKind::rotate, ExperimentKind::tilt, ExperimentKind::mixed,
                 ExperimentKind::blindspot, ExperimentKind::identities})
    if (to_string(k) == name) return k;
  config_error("unknown experiment kind \"" + name + "\"");
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::numerical: return 4;
  }
  return 4;
}

// ---- presets ----

Json train_predictor_preset(const std::string& name) {
  if (name != "linear-task-2d") config_error("unknown predictor preset \"" + name + "\"");
  // f regresses x2 - x1 on N(0, I2) with one hidden relu layer of width 64.
  return Json{{"preset", name},       {"seed", 0},           {"samples", 1000},
              {"hidden", {64}},       {"activation", "relu"}, {"epochs", 100},
              {"batch_size", 1000},   {"learning_rate", 1e-3}, {"out", "out/linear-task-2d"}};
}

Json train_score_preset(const std::string& name) {
  if (name != "dsm-gauss2d") config_error("unknown score preset \"" + name + "\"");
  return Json{{"preset", name},         {"seed", 0},
              {"samples", 10000},       {"data", nullptr},
              {"noise_std", 0.1},       {"hidden", {64, 64}},
              {"activation", "tanh"},   {"epochs", 20},
              {"batch_size", 128},      {"learning_rate", 1e-3},
              {"antithetic", true},     {"fisher_samples", 20000},
              {"out", "out/dsm-gauss2d"}};
}

Json score_defaults() {
  return Json{{"test", nullptr},          {"calibration", nullptr},
              {"predictor", "exact-linear"}, {"score", "standard-normal"},
              {"route", "exact"},         {"per_dimension", false},
              {"baseline", true},         {"alpha", 0.05},
              {"mode", "absolute"},       {"seed", 0},
              {"out", "out/score"}};
}

std::vector<std::string> experiment_preset_names() {
  return {"rotate", "rotate-trained", "tilt", "mixed", "blindspot", "identities"};
}

ExperimentConfig experiment_preset(const std::string& name) {
  ExperimentConfig c;
  c.out = "out/" + name;
  if (name == "rotate" || name == "rotate-trained") {
    c.kind = ExperimentKind::rotate;
    c.samples = 1000;
    c.predictor = name == "rotate" ? "exact-linear" : "linear-task-2d";
    c.shift = Json{{"magnitude", 10.0}, {"angles", 8}, {"calibration_samples", 0}};
  } else if (name == "tilt") {
    c.kind = ExperimentKind::tilt;
    c.samples = 20000;
    c.shift = Json{{"potentials",
                    {Json{{"kind", "linear"}, {"c", {1.0, 0.0}}},
                     Json{{"kind", "linear"}, {"c", {0.0, 1.0}}},
                     Json{{"kind", "linear"}, {"c", {1.0, 1.0}}}}},
                   {"strengths", {0.01, 0.02, 0.05, 0.1, 0.2}},
                   {"variance_strength", 0.05},
                   {"relative_tolerance", 0.05}};
  } else if (name == "mixed") {
    c.kind = ExperimentKind::mixed;
    c.samples = 2000;
    c.shift = Json{{"direction", {1.0, -1.0}},
                   {"magnitudes", {0.5, 1.0, 1.5, 2.0, 3.0}},
                   {"corruption", {0.0, 0.1, 0.2, 0.3, 0.4, 0.5}},
                   {"fraction", 0.3},
                   {"mode", "absolute"},
                   {"calibration_samples", 2000},
                   {"histogram_magnitude", 2.0},
                   {"bins", 40}};
  } else if (name == "blindspot") {
    c.kind = ExperimentKind::blindspot;
    c.samples = 4000;
    c.shift = Json{{"magnitude", 10.0}, {"angles", 16}, {"v", {1.0, 1.0}}};
  } else if (name == "identities") {
    c.kind = ExperimentKind::identities;
    c.samples = 20000;
    c.predictor = "tanh-2d";
    c.shift = Json{{"mean_shift", {2.0, 0.0}},
                   {"score_bias", {0.5, -0.3}},
                   {"tilt", Json{{"kind", "linear"}, {"c", {1.0, 0.5}}}},
                   {"tilt_strength", 0.01},
                   {"variance_strength", 0.05},
                   {"probes", 64}};
  } else {
    config_error("unknown experiment preset \"" + name + "\"");
  }
  return c;
}

Json to_json(const ExperimentConfig& c) {
  return Json{{"kind", to_string(c.kind)}, {"seed", c.seed},   {"samples", c.samples},
              {"predictor", c.predictor},  {"score", c.score}, {"shift", c.shift},
              {"alpha", c.alpha},          {"route", c.route}, {"out", c.out}};
}

ExperimentConfig experiment_from_json(const Json& j) {
  check_keys(j, {"kind", "seed", "samples", "predictor", "score", "shift", "alpha", "route", "out",
                 "preset"});
  ExperimentConfig c;
  c.kind = experiment_kind_from_string(get_string(j, "kind"));
  c.seed = get_u64(j, "seed");
  c.samples = get_positive(j, "samples");
  c.predictor = get_string(j, "predictor");
  c.score = get_string(j, "score");
  c.shift = at(j, "shift");
  if (!c.shift.is_object()) config_error("\"shift\" must be an object");
  c.alpha = get_double(j, "alpha");
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) config_error("alpha must lie in (0,1)");
  c.route = get_string(j, "route");
  LaplacianRoute::parse(c.route);
  c.out = get_string(j, "out");
  return c;
}

// ---- model resolution ----

TrainedPredictor train_predictor_from_config(const Json& config) {
  check_keys(config, {"preset", "seed", "samples", "hidden", "activation", "epochs", "batch_size",
                      "learning_rate", "out"});
  const std::uint64_t seed = get_u64(config, "seed");
  const std::size_t n = get_positive(config, "samples");
  const auto hidden = get_sizes(config, "hidden");
  const Activation act = activation_from_string(get_string(config, "activation"));

  const SamplableDistribution p(ScoreModel::standard_normal(2));
  Rng data_rng(derive_seed(seed, 0, 0));
  Dataset data;
  data.inputs = p.sample(n, data_rng);
  for (const auto& x : data.inputs) data.targets.push_back(x[1] - x[0]);

  Rng init_rng(derive_seed(seed, 1, 0));
  MlpPredictor model = MlpPredictor::random(2, hidden, act, Head::linear, 1, init_rng);
  TrainConfig tc;
  tc.optimizer = adam(get_double(config, "learning_rate"));
  tc.epochs = get_positive(config, "epochs");
  tc.batch_size = get_positive(config, "batch_size");
  tc.loss = Loss::mse;
  tc.seed = derive_seed(seed, 2, 0);
  TrainResult res = train(std::move(model), data, tc);

  Json meta{{"target", "x2-x1"},
            {"seed", seed},
            {"samples", n},
            {"epochs", tc.epochs},
            {"batch_size", tc.batch_size},
            {"learning_rate", tc.optimizer.learning_rate},
            {"initial_loss", res.loss_history.front()},
            {"final_loss", res.loss_history.back()}};
  if (config.contains("preset")) meta["preset"] = config.at("preset");
  meta["warnings"] = res.warnings;
  return {std::move(res.model), std::move(res.loss_history), std::move(meta)};
}

TrainedScore train_score_from_config(const Json& config) {
  check_keys(config, {"preset", "seed", "samples", "data", "noise_std", "hidden", "activation",
                      "epochs", "batch_size", "learning_rate", "antithetic", "fisher_samples",
                      "out"});
  const std::uint64_t seed = get_u64(config, "seed");
  DsmConfig dc;
  dc.noise_std = get_double(config, "noise_std");
  if (!(dc.noise_std > 0.0)) config_error("noise_std must be positive");
  dc.hidden = get_sizes(config, "hidden");
  dc.activation = activation_from_string(get_string(config, "activation"));
  dc.optimizer = adam(get_double(config, "learning_rate"));
  dc.epochs = get_positive(config, "epochs");
  dc.batch_size = get_positive(config, "batch_size");
  dc.antithetic = get_bool(config, "antithetic");
  dc.seed = derive_seed(seed, 1, 0);

  const bool synthetic = !config.contains("data") || config.at("data").is_null();
  const SamplableDistribution p(ScoreModel::standard_normal(2));
  Points samples;
  if (synthetic) {
    Rng data_rng(derive_seed(seed, 0, 0));
    samples = p.sample(get_positive(config, "samples"), data_rng);
  } else {
    samples = read_points_csv(get_string(config, "data")).points;
  }
  DsmResult res = train_dsm_score(samples, dc);

  Json meta{{"seed", seed},
            {"samples", samples.size()},
            {"noise_std", dc.noise_std},
            {"epochs", dc.epochs},
            {"batch_size", dc.batch_size},
            {"learning_rate", dc.optimizer.learning_rate},
            {"antithetic", dc.antithetic},
            {"initial_loss", res.loss_history.front()},
            {"final_loss", res.loss_history.back()}};
  if (config.contains("preset")) meta["preset"] = config.at("preset");
  if (synthetic) {
    // The data distribution is known here, so record the distance to it.
    Rng fisher_rng(derive_seed(seed, 2, 0));
    const Estimate fd = fisher_divergence(p, res.model, get_positive(config, "fisher_samples"), fisher_rng);
    meta["reference"] = "standard-normal";
    meta["fisher_divergence"] = fd.value;
    meta["fisher_divergence_stderr"] = fd.std_error;
  }
  meta["warnings"] = res.warnings;
  return {std::move(res.model), std::move(res.loss_history), std::move(meta)};
}

std::shared_ptr<const Predictor> resolve_predictor(const std::string& spec, std::uint64_t seed) {
  if (spec == "exact-linear") return std::make_shared<MlpPredictor>(MlpPredictor::affine({-1.0, 1.0}, 0.0));
  if (spec == "squared-norm") return std::make_shared<QuadraticPredictor>(QuadraticPredictor::squared_norm(2));
  if (spec == "tanh-2d") {
    Rng rng(derive_seed(seed, 3, 0));
    return std::make_shared<MlpPredictor>(
        MlpPredictor::random(2, {16, 16}, Activation::tanh, Head::linear, 1, rng));
  }
  if (spec == "relu-softmax-2d") {
    Rng rng(derive_seed(seed, 3, 1));
    return std::make_shared<MlpPredictor>(
        MlpPredictor::random(2, {32}, Activation::relu, Head::softmax, 3, rng));
  }
  if (spec == "linear-task-2d") {
    Json c = train_predictor_preset(spec);
    c["seed"] = seed;
    return std::make_shared<MlpPredictor>(train_predictor_from_config(c).model);
  }
  if (is_path_spec(spec)) return std::make_shared<MlpPredictor>(predictor_from_json(read_json(spec)));
  config_error("unknown predictor spec \"" + spec + "\"");
}

ScoreModel resolve_score(const std::string& spec, std::size_t dimension, std::uint64_t seed) {
  if (spec == "standard-normal") return ScoreModel::standard_normal(dimension);
  if (spec == "dsm-gauss2d") {
    Json c = train_score_preset(spec);
    c["seed"] = seed;
    return train_score_from_config(c).model;
  }
  if (is_path_spec(spec)) return score_model_from_json(read_json(spec));
  config_error("unknown score spec \"" + spec + "\"");
}

// ---- commands ----

std::vector<fs::path> cmd_train_predictor(const Json& config) {
  TrainedPredictor t = train_predictor_from_config(config);
  Outputs out{out_dir(config), {}};
  out.json("predictor.json", predictor_to_json(t.model, checkpoint_metadata(t)));
  out.text("loss.csv", loss_csv(t.loss_history));
  out.json("effective-config.json", config);
  return out.written;
}

std::vector<fs::path> cmd_train_score(const Json& config) {
  TrainedScore t = train_score_from_config(config);
  Json ck = score_model_to_json(t.model);
  ck["training"] = t.metadata;
  Outputs out{out_dir(config), {}};
  out.json("score.json", ck);
  out.text("loss.csv", loss_csv(t.loss_history));
  out.json("effective-config.json", config);
  return out.written;
}

std::vector<fs::path> cmd_score(const Json& config) {
  check_keys(config, {"test", "calibration", "predictor", "score", "route", "per_dimension",
                      "baseline", "alpha", "mode", "seed", "out"});
  if (!config.contains("test") || config.at("test").is_null()) config_error("a test data file is required");
  const std::uint64_t seed = get_u64(config, "seed");
  const LaplacianRoute route = LaplacianRoute::parse(get_string(config, "route"));
  const ResidualMode mode = residual_mode_from_string(get_string(config, "mode"));
  const double alpha = get_double(config, "alpha");
  if (!(alpha > 0.0 && alpha < 1.0)) config_error("alpha must lie in (0,1)");
  const bool per_dim = get_bool(config, "per_dimension");
  const bool want_baseline = get_bool(config, "baseline");

  const PointTable test = read_points_csv(get_string(config, "test"));
  std::optional<PointTable> cal;
  if (config.contains("calibration") && !config.at("calibration").is_null())
    cal = read_points_csv(get_string(config, "calibration"));
  const std::size_t d = test.points.front().size();
  if (cal && cal->points.front().size() != d)
    throw Error(ErrorKind::data, "calibration and test files have different dimensions");

  const auto f = resolve_predictor(get_string(config, "predictor"), seed);
  const ScoreModel s = resolve_score(get_string(config, "score"), d, seed);
  if (f->dimension() != d) throw Error(ErrorKind::data, "test data dimension does not match the predictor");
  if (s.dimension() != d) throw Error(ErrorKind::data, "test data dimension does not match the score model");

  ResidualOptions ro;
  ro.route = route;
  ro.per_dimension = per_dim;
  ro.compute_baseline = want_baseline && cal.has_value();
  const Points empty;
  const Points& cal_points = cal ? cal->points : empty;
  auto [batch, baseline] = batch_adjusted_residuals(test.points, cal_points, *f, s, ro, seed);
  baseline.alpha = alpha;
  baseline.mode = mode;

  std::vector<std::string> notes;
  if (cal) {
    if (cal->points.size() >= kMinCalibrationResiduals) {
      Vec cal_res = stein_values(cal->points, *f, s, route, seed, 0, ro.hutchinson);
      for (double& r : cal_res) r -= batch.baseline;
      baseline.threshold = calibrate(cal_res, alpha, mode);
    } else {
      notes.push_back("threshold skipped: fewer than " + std::to_string(kMinCalibrationResiduals) +
                      " calibration points");
    }
  }

  Outputs out{out_dir(config), {}};
  const std::optional<CalibrationBaseline> bl = cal ? std::optional(baseline) : std::nullopt;
  out.text("residuals.csv", residuals_csv(batch, test.labels, bl));
  Json summary = residual_batch_to_json(batch);
  summary["notes"] = notes;
  out.json("residuals.json", summary);
  if (cal) out.json("baseline.json", baseline_to_json(baseline));
  if (per_dim) {
    const Mat& m = ro.compute_baseline ? *batch.per_dimension_adjusted : *batch.per_dimension_raw;
    out.text("per_dimension.csv", per_dimension_csv(m));
  }
  if (test.labels && baseline.threshold) {
    DetectionReport rep = evaluate_detection(batch.adjusted, *test.labels, baseline);
    rep.seed = seed;
    rep.provenance = batch.provenance;
    out.json("detection.json", detection_report_to_json(rep));
  }
  out.json("effective-config.json", config);
  return out.written;
}

namespace {

// ---- experiment kinds ----

std::size_t argmax_by(const std::vector<SweepRow>& rows, double (*key)(const SweepRow&)) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (key(rows[i]) > key(rows[best])) best = i;
  return best;
}

// Angles are compared as unsigned axes: phi and phi + pi describe the same
// shift line.
bool same_axis(double a, double b) {
  const double diff = std::remainder(a - b, kPi);
  return std::abs(diff) < 1e-9;
}

void run_rotate(const ExperimentConfig& c, const Predictor& f, const ScoreModel& s, Outputs& out) {
  check_keys(c.shift, {"magnitude", "angles", "calibration_samples"});
  const double eps = get_double(c.shift, "magnitude");
  const auto grid = angle_grid(get_positive(c.shift, "angles"));
  RotationSweepOptions opts;
  opts.calibration_samples = get_u64(c.shift, "calibration_samples");
  opts.route = LaplacianRoute::parse(c.route);
  Rng rng(derive_seed(c.seed, 100, 0));
  const auto rows = rotation_sweep(f, s, eps, grid, c.samples, rng, opts);
  out.text("sweep.csv", sweep_csv(rows));

  Json table = Json::array();
  bool closed_ok = true;
  for (const auto& r : rows) {
    // mu1 - mu2 for mu = eps R_phi (1,1)/sqrt2.
    const double closed = -eps * std::sqrt(2.0) * std::sin(r.phi);
    const double z = (r.taste - closed) / r.taste_std_error;
    closed_ok = closed_ok && std::abs(z) < 3.0;
    table.push_back(Json{{"phi", r.phi}, {"taste", r.taste}, {"taste_stderr", r.taste_std_error},
                         {"mean_gap", closed}, {"z", z}});
  }
  const std::size_t at = argmax_by(rows, [](const SweepRow& r) { return std::abs(r.taste); });
  const std::size_t am = argmax_by(rows, [](const SweepRow& r) { return r.mse; });
  bool flat = true;
  for (const auto& a : rows)
    for (const auto& b : rows)
      flat = flat && std::abs(a.loglik - b.loglik) <= 3.0 * std::hypot(a.loglik_std_error, b.loglik_std_error);
  Json summary{{"predictor", f.id()},
               {"score", s.id()},
               {"magnitude", eps},
               {"rows", table},
               {"matches_mean_gap", closed_ok},
               {"argmax_abs_taste_phi", rows[at].phi},
               {"argmax_mse_phi", rows[am].phi},
               {"argmax_same_axis", same_axis(rows[at].phi, rows[am].phi)},
               {"loglik_flat", flat}};
  out.json("rotate.json", summary);
}

void run_tilt(const ExperimentConfig& c, const Predictor& f, const ScoreModel& s, Outputs& out) {
  check_keys(c.shift, {"potentials", "strengths", "variance_strength", "relative_tolerance"});
  const SamplableDistribution p(s);
  const Vec strengths = get_vec(c.shift, "strengths");
  const double var_eps = get_double(c.shift, "variance_strength");
  const double tol = get_double(c.shift, "relative_tolerance");
  const Json& pots = at(c.shift, "potentials");
  if (!pots.is_array() || pots.empty()) config_error("\"potentials\" must be a non-empty array");
  Json results = Json::array();
  bool all_pass = true;
  for (std::size_t k = 0; k < pots.size(); ++k) {
    const Potential h = potential_from_json(pots[k]);
    Rng rng(derive_seed(c.seed, 200, k));
    const TiltSlopeResult res = tilt_slope_check(f, p, h, strengths, c.samples, rng, tol);
    std::ostringstream csv;
    csv << "strength,taste,taste_stderr\n";
    for (const auto& pt : res.curve)
      csv << format_number(pt.strength) << ',' << format_number(pt.taste) << ','
          << format_number(pt.taste_std_error) << '\n';
    out.text("tilt_curve_" + std::to_string(k) + ".csv", csv.str());
    Rng vrng(derive_seed(c.seed, 201, k));
    const IdentityCheckReport var = tilt_variance_check(f, p, h, var_eps, c.samples, vrng);
    Json checks = Json::array();
    for (const auto& r : res.slope_checks) {
      checks.push_back(report_to_json(r));
      all_pass = all_pass && r.passes();
    }
    all_pass = all_pass && var.passes();
    results.push_back(Json{{"potential", pots[k]},
                           {"mode", res.mode},
                           {"min_effective_sample_size", res.min_effective_sample_size},
                           {"slope_checks", checks},
                           {"variance_check", report_to_json(var)}});
  }
  out.json("tilt.json", Json{{"predictor", f.id()}, {"score", s.id()}, {"potentials", results},
                             {"all_pass", all_pass}});
}

std::uint64_t point_hash(const Vec& x) {
  std::uint64_t h = 0x9e3779b97f4a7c15ULL;
  for (double v : x) h = derive_seed(h, std::bit_cast<std::uint64_t>(v), 0);
  return h;
}

void run_mixed(const ExperimentConfig& c, const Predictor& f, const ScoreModel& s, Outputs& out) {
  check_keys(c.shift, {"direction", "magnitudes", "corruption", "fraction", "mode",
                       "calibration_samples", "histogram_magnitude", "bins"});
  Vec dir = get_vec(c.shift, "direction");
  if (dir.size() != 2 || norm2(dir) == 0.0) config_error("\"direction\" must be a non-zero 2-vector");
  dir = scaled(dir, 1.0 / norm2(dir));
  const Vec magnitudes = get_vec(c.shift, "magnitudes");
  const Vec corruption = get_vec(c.shift, "corruption");
  const double fraction = get_double(c.shift, "fraction");
  const ResidualMode mode = residual_mode_from_string(get_string(c.shift, "mode"));
  const std::size_t n_cal = get_positive(c.shift, "calibration_samples");
  const double hist_mag = get_double(c.shift, "histogram_magnitude");
  const std::size_t bins = get_positive(c.shift, "bins");
  const LaplacianRoute route = LaplacianRoute::parse(c.route);

  const SamplableDistribution in(ScoreModel::standard_normal(2));
  Rng rng(derive_seed(c.seed, 300, 0));
  const Points cal = in.sample(n_cal, rng);
  Vec cal_raw = stein_values(cal, f, s, route, c.seed, 0);
  const Estimate d = mean_and_stderr(cal_raw);
  for (double& r : cal_raw) r -= d.value;
  CalibrationBaseline baseline;
  baseline.baseline = d.value;
  baseline.baseline_std_error = d.std_error;
  baseline.alpha = c.alpha;
  baseline.mode = mode;
  baseline.n_calibration = n_cal;
  baseline.threshold = calibrate(cal_raw, c.alpha, mode);

  // Per-point probe stream keyed on the point itself, so parallel scoring
  // stays reproducible under the Hutchinson route too.
  ScoringPipeline pipeline;
  pipeline.baseline = baseline;
  pipeline.residual = [&](const Vec& x) {
    Rng local(derive_seed(c.seed, 301, point_hash(x)));
    return langevin_apply(f, s, x, route, &local) - d.value;
  };

  std::ostringstream by_shift;
  by_shift << "shift,power,fpr,n\n";
  Vec powers;
  for (std::size_t k = 0; k < magnitudes.size(); ++k) {
    const SamplableDistribution o = translated(in, scaled(dir, magnitudes[k]));
    Rng crng(derive_seed(c.seed, 302, k));
    out.text("power_shift_" + std::to_string(k) + ".csv",
             power_csv(power_curve(in, o, corruption, c.samples, pipeline, crng)));
    Rng frng(derive_seed(c.seed, 303, k));
    const PowerRow row = power_curve(in, o, {fraction}, c.samples, pipeline, frng).front();
    powers.push_back(row.power);
    by_shift << format_number(magnitudes[k]) << ',' << format_number(row.power) << ','
             << format_number(row.fpr) << ',' << row.n << '\n';
  }
  out.text("power_by_shift.csv", by_shift.str());

  const SamplableDistribution o = translated(in, scaled(dir, hist_mag));
  Rng hrng(derive_seed(c.seed, 304, 0));
  const LabeledSamples mix = mixture_build(in, o, fraction, c.samples, hrng);
  Vec res(mix.points.size());
  parallel_for(res.size(), [&](std::size_t i) { res[i] = pipeline.residual(mix.points[i]); });
  DetectionReport rep = evaluate_detection(res, mix.labels, baseline);
  rep.seed = c.seed;
  rep.provenance = {f.id(), s.id(), c.seed, ""};
  out.json("detection.json", detection_report_to_json(rep));

  const auto [lo_it, hi_it] = std::minmax_element(res.begin(), res.end());
  const double lo = *lo_it, width = std::max(*hi_it - lo, 1e-12) / static_cast<double>(bins);
  std::vector<std::size_t> in_count(bins, 0), out_count(bins, 0);
  for (std::size_t i = 0; i < res.size(); ++i) {
    const auto b = std::min(bins - 1, static_cast<std::size_t>((res[i] - lo) / width));
    (mix.labels[i] ? out_count : in_count)[b]++;
  }
  std::ostringstream hist;
  hist << "bin_lo,bin_hi,in_count,out_count\n";
  for (std::size_t b = 0; b < bins; ++b)
    hist << format_number(lo + width * b) << ',' << format_number(lo + width * (b + 1)) << ','
         << in_count[b] << ',' << out_count[b] << '\n';
  out.text("histogram.csv", hist.str());

  bool monotone = true;
  for (std::size_t k = 1; k < powers.size(); ++k)
    if (magnitudes[k] > magnitudes[k - 1] && powers[k] < powers[k - 1]) monotone = false;
  out.json("mixed.json", Json{{"predictor", f.id()},
                              {"score", s.id()},
                              {"baseline", baseline_to_json(baseline)},
                              {"powers", vec_json(powers)},
                              {"power_monotone_in_shift", monotone},
                              {"auroc", rep.auroc},
                              {"fpr95", rep.fpr95}});
}

void run_blindspot(const ExperimentConfig& c, const Predictor& f, Outputs& out) {
  check_keys(c.shift, {"magnitude", "angles", "v"});
  const double eps = get_double(c.shift, "magnitude");
  const auto grid = angle_grid(get_positive(c.shift, "angles"));
  const Vec v = get_vec(c.shift, "v");
  Rng rng(derive_seed(c.seed, 400, 0));
  const auto rows = blind_spot_sweep(f, eps, grid, v, c.samples, rng);
  out.text("blindspot.csv", blind_spot_csv(rows));

  // Zero crossings of the first-order curve: grid points statistically at
  // zero, or sign changes between neighbours (reported at the midpoint).
  Json crossings = Json::array();
  bool matches = true;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    matches = matches && std::abs(r.first_order - r.closed_form) < 3.0 * r.first_order_std_error;
    const bool at_zero = std::abs(r.first_order) < 3.0 * r.first_order_std_error;
    if (at_zero) {
      crossings.push_back(r.theta);
      continue;
    }
    if (i + 1 < rows.size()) {
      const auto& nx = rows[i + 1];
      const bool nx_zero = std::abs(nx.first_order) < 3.0 * nx.first_order_std_error;
      if (!nx_zero && (r.first_order > 0) != (nx.first_order > 0))
        crossings.push_back(0.5 * (r.theta + nx.theta));
    }
  }
  out.json("blindspot.json", Json{{"predictor", f.id()},
                                  {"magnitude", eps},
                                  {"v", vec_json(v)},
                                  {"first_order_matches_closed_form", matches},
                                  {"first_order_zero_crossings", crossings}});
}

void run_identities(const ExperimentConfig& c, const Predictor& f, const ScoreModel& s, Outputs& out) {
  check_keys(c.shift, {"mean_shift", "score_bias", "tilt", "tilt_strength", "variance_strength",
                       "probes"});
  const SamplableDistribution p(s);
  const std::size_t n = c.samples;
  const Vec mu = get_vec(c.shift, "mean_shift");
  const Vec bias = get_vec(c.shift, "score_bias");
  const Potential h = potential_from_json(at(c.shift, "tilt"));
  const double eps = get_double(c.shift, "tilt_strength");
  const double var_eps = get_double(c.shift, "variance_strength");
  const std::size_t probes = get_positive(c.shift, "probes");
  if (mu.size() != p.dimension() || bias.size() != p.dimension())
    config_error("mean_shift and score_bias must match the score dimension");
  const SamplableDistribution q = translated(p, mu);
  const ScoreModel biased = ScoreModel::perturbed(s, bias, {});
  std::vector<IdentityCheckReport> reports;

  {
    Rng rng(derive_seed(c.seed, 500, 0));
    const Points xs = p.sample(n, rng);
    const Vec vals = stein_values(xs, f, s, LaplacianRoute::exact(), c.seed, 0);
    reports.push_back(make_report("stein_identity", mean_and_stderr(vals), {0.0, 0.0}, n, c.seed));

    // Per-dimension residuals: rows sum to the scalar residual, and each
    // component has mean zero under p.
    double worst = 0.0;
    const std::size_t d = p.dimension();
    std::vector<Vec> comps(d, Vec(n));
    for (std::size_t i = 0; i < n; ++i) {
      const Vec r = per_dimension_residuals(f, s, xs[i]);
      double sum = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        sum += r[j];
        comps[j][i] = r[j];
      }
      worst = std::max(worst, std::abs(sum - vals[i]));
    }
    auto rowsum = make_report("per_dimension_row_sum", {worst, 0.0}, {1e-9, 0.0}, n, c.seed,
                              IdentityCheckReport::Relation::upper_bound);
    reports.push_back(rowsum);
    for (std::size_t j = 0; j < d; ++j)
      reports.push_back(make_report("per_dimension_mean_" + std::to_string(j + 1),
                                    mean_and_stderr(comps[j]), {0.0, 0.0}, n, c.seed));
  }
  {
    Rng rng(derive_seed(c.seed, 501, 0));
    reports.push_back(projection_identity_check(f, s, q, n, rng));
  }
  {
    Rng rng(derive_seed(c.seed, 502, 0));
    const auto res = tilt_slope_check(f, p, h, {eps}, n, rng);
    reports.insert(reports.end(), res.slope_checks.begin(), res.slope_checks.end());
    Rng vrng(derive_seed(c.seed, 503, 0));
    reports.push_back(tilt_variance_check(f, p, h, var_eps, n, vrng));
  }
  {
    Rng rng(derive_seed(c.seed, 504, 0));
    reports.push_back(directional_decomposition_check(f, p, q, biased, n, rng));
    Rng brng(derive_seed(c.seed, 505, 0));
    reports.push_back(fisher_bound_check(f, p, q, biased, n, brng));
  }
  {
    // No shift, biased score: the baseline-corrected functional is zero.
    Rng rng(derive_seed(c.seed, 506, 0));
    const Points test = p.sample(n, rng);
    const Points cal = p.sample(n, rng);
    ResidualOptions ro;
    auto [batch, bl] = batch_adjusted_residuals(test, cal, f, biased, ro, c.seed);
    const TasteEstimate t = taste_functional_estimate(batch);
    auto r = make_report("no_false_alarm", {t.value, std::hypot(t.std_error, bl.baseline_std_error)},
                         {0.0, 0.0}, n, c.seed);
    r.terms = {{"baseline", bl.baseline}};
    reports.push_back(r);
  }
  {
    // Hutchinson against the exact trace at a handful of points.
    Rng rng(derive_seed(c.seed, 507, 0));
    const Points xs = p.sample(8, rng);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      Rng prng(derive_seed(c.seed, 508, i));
      const auto hr = hutchinson_laplacian(f, xs[i], probes, prng);
      const Estimate est = mean_and_stderr(hr.probe_values);
      auto r = make_report("hutchinson_" + std::to_string(i), est,
                           {input_laplacian_exact(f, xs[i]), 0.0}, probes, c.seed);
      reports.push_back(r);
    }
  }

  Json arr = Json::array();
  bool all_pass = true;
  for (const auto& r : reports) {
    arr.push_back(report_to_json(r));
    all_pass = all_pass && r.passes();
  }
  out.json("identities.json", Json{{"predictor", f.id()}, {"score", s.id()}, {"seed", c.seed},
                                   {"reports", arr}, {"all_pass", all_pass}});
}

}  // namespace

std::vector<fs::path> cmd_experiment(const ExperimentConfig& c) {
  LaplacianRoute::parse(c.route);
  if (c.out.empty()) config_error("output directory must not be empty");
  fs::create_directories(c.out);
  Outputs out{c.out, {}};
  const auto f = resolve_predictor(c.predictor, c.seed);
  if (f->dimension() != 2) config_error("experiments run in two dimensions");
  const ScoreModel s = resolve_score(c.score, 2, c.seed);
  switch (c.kind) {
    case ExperimentKind::rotate: run_rotate(c, *f, s, out); break;
    case ExperimentKind::tilt: run_tilt(c, *f, s, out); break;
    case ExperimentKind::mixed: run_mixed(c, *f, s, out); break;
    case ExperimentKind::blindspot: run_blindspot(c, *f, out); break;
    case ExperimentKind::identities: run_identities(c, *f, s, out); break;
  }
  out.json("effective-config.json", to_json(c));
  return out.written;
}

// ---- argv ----

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> samples;
  std::optional<double> alpha;
  std::optional<std::string> route;
  bool per_dimension = false;
  bool no_baseline = false;
};

void add_common(CLI::App* app, CommonFlags& f, bool scoring) {
  app->add_option("--config", f.config, "JSON config file");
  app->add_option("--seed", f.seed, "random seed");
  app->add_option("--out", f.out, "output directory (created when missing)");
  app->add_option("--samples", f.samples, "number of samples");
  app->add_option("--alpha", f.alpha, "false-positive level for the calibrated threshold");
  app->add_option("--route", f.route, "laplacian route: exact, shortcut[:K], hutchinson:K, omit");
  if (scoring) {
    app->add_flag("--per-dimension", f.per_dimension, "also write per-dimension residuals");
    app->add_flag("--no-baseline", f.no_baseline, "skip the calibration baseline");
  }
}

Json layer(Json base, const std::string& config_path) {
  if (!config_path.empty()) {
    Json file = read_json(config_path);
    if (!file.is_object()) config_error("config file must hold a JSON object");
    file.erase("command");
    base.merge_patch(file);
  }
  return base;
}

void reject(bool used, const char* flag, const char* command) {
  if (used) config_error(std::string(flag) + " does not apply to " + command);
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

std::string category(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_argument: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::numerical: return "numerical";
  }
  return "numerical";
}

std::string preset_of(const std::string& flag, const std::string& config_path, const std::string& fallback) {
  if (!flag.empty()) return flag;
  if (!config_path.empty()) {
    const Json j = read_json(config_path);
    if (j.is_object() && j.contains("preset") && j.at("preset").is_string())
      return j.at("preset").get<std::string>();
  }
  return fallback;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"tastekit: Stein-operator shift detection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "tastekit 0.1.0");

  CommonFlags tp_flags, ts_flags, sc_flags, ex_flags;
  std::string tp_preset, ts_preset, ex_preset, ex_kind;
  std::optional<double> noise_std;
  std::optional<std::size_t> epochs_tp, epochs_ts;
  std::optional<std::string> test, calibration, predictor, score, mode, ex_predictor, ex_score;

  auto* tp = app.add_subcommand("train-predictor", "train the task network preset");
  add_common(tp, tp_flags, false);
  tp->add_option("--preset", tp_preset, "preset name (linear-task-2d)");
  tp->add_option("--epochs", epochs_tp, "training epochs");

  auto* ts = app.add_subcommand("train-score", "train a denoising score model");
  add_common(ts, ts_flags, false);
  ts->add_option("--preset", ts_preset, "preset name (dsm-gauss2d)");
  ts->add_option("--noise-std", noise_std, "denoising noise level sigma");
  ts->add_option("--epochs", epochs_ts, "training epochs");

  auto* sc = app.add_subcommand("score", "adjusted residuals for a data file");
  add_common(sc, sc_flags, true);
  sc->add_option("--test", test, "test points CSV");
  sc->add_option("--calibration", calibration, "calibration points CSV");
  sc->add_option("--predictor", predictor, "predictor preset or checkpoint path");
  sc->add_option("--score", score, "score preset or checkpoint path");
  sc->add_option("--mode", mode, "absolute, signed-upper or signed-lower");

  auto* ex = app.add_subcommand("experiment", "run an experiment and write its report bundle");
  add_common(ex, ex_flags, false);
  ex->add_option("--preset", ex_preset, "rotate, rotate-trained, tilt, mixed, blindspot, identities");
  ex->add_option("--kind", ex_kind, "rotate, tilt, mixed, blindspot, identities");
  ex->add_option("--predictor", ex_predictor, "predictor preset or checkpoint path");
  ex->add_option("--score", ex_score, "score preset or checkpoint path");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
      return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
      throw Error(ErrorKind::invalid_argument, e.what());
    }

    auto common = [](Json& c, const CommonFlags& f) {
      if (f.seed) c["seed"] = *f.seed;
      if (f.out) c["out"] = *f.out;
      if (f.samples) c["samples"] = *f.samples;
    };

    std::vector<fs::path> written;
    if (*tp) {
      reject(tp_flags.alpha.has_value(), "--alpha", "train-predictor");
      reject(tp_flags.route.has_value(), "--route", "train-predictor");
      Json c = layer(train_predictor_preset(preset_of(tp_preset, tp_flags.config, "linear-task-2d")),
                     tp_flags.config);
      common(c, tp_flags);
      if (epochs_tp) c["epochs"] = *epochs_tp;
      written = cmd_train_predictor(c);
    } else if (*ts) {
      reject(ts_flags.alpha.has_value(), "--alpha", "train-score");
      reject(ts_flags.route.has_value(), "--route", "train-score");
      Json c = layer(train_score_preset(preset_of(ts_preset, ts_flags.config, "dsm-gauss2d")),
                     ts_flags.config);
      common(c, ts_flags);
      if (noise_std) c["noise_std"] = *noise_std;
      if (epochs_ts) c["epochs"] = *epochs_ts;
      written = cmd_train_score(c);
    } else if (*sc) {
      reject(sc_flags.samples.has_value(), "--samples", "score");
      Json c = layer(score_defaults(), sc_flags.config);
      if (sc_flags.seed) c["seed"] = *sc_flags.seed;
      if (sc_flags.out) c["out"] = *sc_flags.out;
      if (sc_flags.alpha) c["alpha"] = *sc_flags.alpha;
      if (sc_flags.route) c["route"] = *sc_flags.route;
      if (sc_flags.per_dimension) c["per_dimension"] = true;
      if (sc_flags.no_baseline) c["baseline"] = false;
      if (test) c["test"] = *test;
      if (calibration) c["calibration"] = *calibration;
      if (predictor) c["predictor"] = *predictor;
      if (score) c["score"] = *score;
      if (mode) c["mode"] = *mode;
      written = cmd_score(c);
    } else if (*ex) {
      std::string name = ex_preset;
      if (name.empty() && !ex_kind.empty()) name = to_string(experiment_kind_from_string(ex_kind));
      name = preset_of(name, ex_flags.config, "");
      if (name.empty() && !ex_flags.config.empty()) {
        const Json j = read_json(ex_flags.config);
        if (j.is_object() && j.contains("kind") && j.at("kind").is_string())
          name = to_string(experiment_kind_from_string(j.at("kind").get<std::string>()));
      }
      if (name.empty()) config_error("experiment needs --preset, --kind or --config");
      Json c = layer(to_json(experiment_preset(name)), ex_flags.config);
      c.erase("preset");
      common(c, ex_flags);
      if (ex_flags.alpha) c["alpha"] = *ex_flags.alpha;
      if (ex_flags.route) c["route"] = *ex_flags.route;
      if (ex_predictor) c["predictor"] = *ex_predictor;
      if (ex_score) c["score"] = *ex_score;
      written = cmd_experiment(experiment_from_json(c));
    }
    for (const auto& p : written) out << "wrote " << p.generic_string() << '\n';
    return 0;
  } catch (const Error& e) {
    err << "tastekit: error: " << category(e.kind()) << ": " << one_line(e.what()) << '\n';
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "tastekit: error: data: " << one_line(e.what()) << '\n';
    return 3;
  } catch (const nlohmann::json::exception& e) {
    err << "tastekit: error: config: " << one_line(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "tastekit: error: numerical: " << one_line(e.what()) << '\n';
    return 4;
  }
}

}  // namespace tastekit::cli
