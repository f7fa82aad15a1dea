#include "tastekit/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
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

[[noreturn]] void parse_fail(const std::string& source, std::size_t line, const std::string& why) {
  throw Error(ErrorKind::data, source + ":" + std::to_string(line) + ": " + why);
}

std::string trim(std::string s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// nlohmann writes NaN as null; read it back as NaN.
double number(const Json& j) {
  if (j.is_null()) return std::nan("");
  if (!j.is_number()) throw Error(ErrorKind::data, "expected a number");
  return j.get<double>();
}

Vec vec_from(const Json& j) {
  if (!j.is_array()) throw Error(ErrorKind::data, "expected an array");
  Vec v;
  v.reserve(j.size());
  for (const auto& e : j) v.push_back(number(e));
  return v;
}

Json vec_json(const Vec& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(x);
  return a;
}

Json mat_json(const Mat& m) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < m.rows; ++i) {
    Json r = Json::array();
    for (std::size_t j = 0; j < m.cols; ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

Mat mat_from(const Json& j, std::size_t expected_cols) {
  if (!j.is_array()) throw Error(ErrorKind::data, "expected a matrix");
  Mat m(j.size(), expected_cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const Vec r = vec_from(j[i]);
    if (r.size() != expected_cols) throw Error(ErrorKind::data, "ragged matrix row");
    for (std::size_t k = 0; k < expected_cols; ++k) m(i, k) = r[k];
  }
  return m;
}

const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key))
    throw Error(ErrorKind::data, std::string("missing field \"") + key + "\"");
  return j.at(key);
}

std::string text_field(const Json& j, const char* key) {
  const Json& v = field(j, key);
  if (!v.is_string()) throw Error(ErrorKind::data, std::string("field \"") + key + "\" must be a string");
  return v.get<std::string>();
}

template <class F>
auto guarded(F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::data, std::string("malformed json: ") + e.what());
  }
}

Json provenance_json(const Provenance& p) {
  Json j;
  j["predictor"] = p.predictor_id;
  j["score"] = p.score_id;
  j["seed"] = p.seed;
  j["class_convention"] = p.class_convention;
  return j;
}

void csv_row(std::ostringstream& os, std::initializer_list<double> cells) {
  bool first = true;
  for (double c : cells) {
    if (!first) os << ',';
    os << format_number(c);
    first = false;
  }
  os << '\n';
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

PointTable parse_points_csv(const std::string& text, const std::string& source) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  PointTable t;
  bool have_header = false;
  bool label_col = false;
  std::size_t width = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_commas(line);
    if (!have_header) {
      for (auto& c : cells)
        if (c.empty()) parse_fail(source, lineno, "empty column name");
      label_col = cells.back() == "label";
      if (label_col) cells.pop_back();
      if (cells.empty()) parse_fail(source, lineno, "no feature columns");
      t.columns = cells;
      width = cells.size() + (label_col ? 1 : 0);
      if (label_col) t.labels.emplace();
      have_header = true;
      continue;
    }
    if (cells.size() != width)
      parse_fail(source, lineno, "expected " + std::to_string(width) + " fields, found " +
                                     std::to_string(cells.size()));
    Vec x(t.columns.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!parse_double(cells[i], x[i]) || !std::isfinite(x[i]))
        parse_fail(source, lineno, "bad number \"" + cells[i] + "\" in column " + t.columns[i]);
    }
    if (label_col) {
      const auto& c = cells.back();
      if (c != "0" && c != "1") parse_fail(source, lineno, "label must be 0 or 1, found \"" + c + "\"");
      t.labels->push_back(c == "1");
    }
    t.points.push_back(std::move(x));
  }
  if (!have_header) parse_fail(source, lineno, "missing header");
  if (t.points.empty()) parse_fail(source, lineno, "no data rows");
  return t;
}

PointTable read_points_csv(const std::filesystem::path& path) {
  return parse_points_csv(read_text(path), path.string());
}

void write_points_csv(const std::filesystem::path& path, const PointTable& table) {
  std::ostringstream os;
  for (std::size_t i = 0; i < table.columns.size(); ++i) os << (i ? "," : "") << table.columns[i];
  if (table.labels) os << ",label";
  os << '\n';
  for (std::size_t r = 0; r < table.points.size(); ++r) {
    for (std::size_t i = 0; i < table.points[r].size(); ++i)
      os << (i ? "," : "") << format_number(table.points[r][i]);
    if (table.labels) os << ',' << (*table.labels)[r];
    os << '\n';
  }
  write_text(path, os.str());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::data, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::data, "write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::data, "cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_json(const std::filesystem::path& path, const Json& j) {
  write_text(path, j.dump(2) + "\n");
}

Json read_json(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::data, path.string() + ": " + e.what());
  }
}

// --- checkpoints ---

Json network_to_json(const Network& net) {
  Json j;
  j["activation"] = to_string(net.activation());
  Json sizes = Json::array();
  for (auto w : net.widths()) sizes.push_back(w);
  j["layer_sizes"] = sizes;
  Json layers = Json::array();
  for (const auto& l : net.layers()) {
    Json lj;
    lj["weight"] = mat_json(l.weight);
    lj["bias"] = vec_json(l.bias);
    layers.push_back(std::move(lj));
  }
  j["layers"] = layers;
  return j;
}

Network network_from_json(const Json& j) {
  return guarded([&] {
    const Activation act = activation_from_string(text_field(j, "activation"));
    const Json& sizes = field(j, "layer_sizes");
    const Json& layers = field(j, "layers");
    if (!sizes.is_array() || sizes.size() < 2 || layers.size() + 1 != sizes.size())
      throw Error(ErrorKind::data, "layer_sizes does not match layers");
    std::vector<DenseLayer> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::size_t in = sizes[l].get<std::size_t>();
      const std::size_t width = sizes[l + 1].get<std::size_t>();
      DenseLayer d;
      d.weight = mat_from(field(layers[l], "weight"), in);
      d.bias = vec_from(field(layers[l], "bias"));
      if (d.weight.rows != width || d.bias.size() != width)
        throw Error(ErrorKind::data, "layer " + std::to_string(l) + " has the wrong shape");
      out.push_back(std::move(d));
    }
    return Network(std::move(out), act);
  });
}

Json predictor_to_json(const MlpPredictor& model, const Json& metadata) {
  Json j;
  j["kind"] = "mlp-predictor";
  j["dimension"] = model.dimension();
  j["head"] = to_string(model.head());
  j["class_selection"] = model.selection().use_argmax
                             ? Json("argmax")
                             : Json(static_cast<std::uint64_t>(model.selection().pinned));
  j["network"] = network_to_json(model.network());
  j["metadata"] = metadata;
  return j;
}

MlpPredictor predictor_from_json(const Json& j) {
  return guarded([&] {
    if (text_field(j, "kind") != "mlp-predictor")
      throw Error(ErrorKind::data, "not a predictor checkpoint");
    const Head head = head_from_string(text_field(j, "head"));
    ClassSelection sel;
    if (j.contains("class_selection")) {
      const Json& c = j.at("class_selection");
      if (c.is_string() && c.get<std::string>() == "argmax") sel = ClassSelection::argmax();
      else if (c.is_number_unsigned()) sel = ClassSelection::pin(c.get<std::size_t>());
      else throw Error(ErrorKind::data, "class_selection must be \"argmax\" or an index");
    }
    return MlpPredictor(network_from_json(field(j, "network")), head, sel);
  });
}

Json potential_to_json(const Potential& h) {
  Json j;
  if (h.kind() == Potential::Kind::linear) {
    j["kind"] = "linear";
    j["c"] = vec_json(h.coefficients());
  } else {
    j["kind"] = "quadratic";
    j["a"] = mat_json(h.matrix());
  }
  return j;
}

Potential potential_from_json(const Json& j) {
  return guarded([&] {
    const std::string kind = text_field(j, "kind");
    if (kind == "linear") return Potential::linear(vec_from(field(j, "c")));
    if (kind == "quadratic") {
      const Json& a = field(j, "a");
      return Potential::quadratic(mat_from(a, a.empty() ? 0 : a[0].size()));
    }
    throw Error(ErrorKind::data, "unknown potential kind \"" + kind + "\"");
  });
}

Json score_model_to_json(const ScoreModel& model) {
  Json j;
  std::visit(Overloaded{
                 [&](const IsotropicGaussian& g) {
                   j["kind"] = "isotropic-gaussian";
                   j["dimension"] = model.dimension();
                   j["mean"] = vec_json(g.mean);
                   j["variance"] = g.variance;
                 },
                 [&](const GaussianMixture& g) {
                   j["kind"] = "gaussian-mixture";
                   j["dimension"] = model.dimension();
                   j["weights"] = vec_json(g.weights);
                   Json means = Json::array();
                   for (const auto& m : g.means) means.push_back(vec_json(m));
                   j["means"] = means;
                   j["variances"] = vec_json(g.variances);
                 },
                 [&](const TiltedModel& t) {
                   j["kind"] = "tilted";
                   j["dimension"] = model.dimension();
                   j["base"] = score_model_to_json(*t.base);
                   j["potential"] = potential_to_json(t.potential);
                   j["strength"] = t.strength;
                 },
                 [&](const PerturbedModel& p) {
                   j["kind"] = "perturbed";
                   j["dimension"] = model.dimension();
                   j["base"] = score_model_to_json(*p.base);
                   j["offset"] = vec_json(p.offset);
                   j["slope"] = mat_json(p.slope);
                 },
                 [&](const LearnedModel& l) {
                   j["kind"] = "learned-mlp";
                   j["dimension"] = model.dimension();
                   j["noise_std"] = l.noise_std;
                   j["network"] = network_to_json(l.net);
                   Json meta = Json::object();
                   for (const auto& [k, v] : l.metadata) meta[k] = v;
                   j["metadata"] = meta;
                 },
             },
             model.kind());
  return j;
}

ScoreModel score_model_from_json(const Json& j) {
  return guarded([&]() -> ScoreModel {
    const std::string kind = text_field(j, "kind");
    if (kind == "isotropic-gaussian")
      return ScoreModel::isotropic_gaussian(vec_from(field(j, "mean")), number(field(j, "variance")));
    if (kind == "gaussian-mixture") {
      Points means;
      for (const auto& m : field(j, "means")) means.push_back(vec_from(m));
      return ScoreModel::gaussian_mixture(vec_from(field(j, "weights")), std::move(means),
                                          vec_from(field(j, "variances")));
    }
    if (kind == "tilted")
      return ScoreModel::tilted(score_model_from_json(field(j, "base")),
                                potential_from_json(field(j, "potential")),
                                number(field(j, "strength")));
    if (kind == "perturbed") {
      ScoreModel base = score_model_from_json(field(j, "base"));
      Vec offset = vec_from(field(j, "offset"));
      Mat slope = mat_from(field(j, "slope"), base.dimension());
      return ScoreModel::perturbed(base, std::move(offset), std::move(slope));
    }
    if (kind == "learned-mlp") {
      std::map<std::string, double> meta;
      if (j.contains("metadata"))
        for (const auto& [k, v] : j.at("metadata").items()) meta[k] = number(v);
      ScoreModel m = ScoreModel::learned(network_from_json(field(j, "network")),
                                         number(field(j, "noise_std")), std::move(meta));
      if (j.contains("dimension") && j.at("dimension").get<std::size_t>() != m.dimension())
        throw Error(ErrorKind::data, "dimension does not match the network");
      return m;
    }
    throw Error(ErrorKind::data, "unknown score kind \"" + kind + "\"");
  });
}

// --- reports ---

Json baseline_to_json(const CalibrationBaseline& b) {
  Json j;
  j["baseline"] = b.baseline;
  j["baseline_stderr"] = b.baseline_std_error;
  j["per_dimension"] = b.per_dimension ? vec_json(*b.per_dimension) : Json(nullptr);
  j["threshold"] = b.threshold ? Json(*b.threshold) : Json(nullptr);
  j["alpha"] = b.alpha;
  j["mode"] = to_string(b.mode);
  j["n_calibration"] = b.n_calibration;
  return j;
}

CalibrationBaseline baseline_from_json(const Json& j) {
  return guarded([&] {
    CalibrationBaseline b;
    b.baseline = number(field(j, "baseline"));
    b.baseline_std_error = number(field(j, "baseline_stderr"));
    if (j.contains("per_dimension") && !j.at("per_dimension").is_null())
      b.per_dimension = vec_from(j.at("per_dimension"));
    if (j.contains("threshold") && !j.at("threshold").is_null())
      b.threshold = number(j.at("threshold"));
    b.alpha = number(field(j, "alpha"));
    b.mode = residual_mode_from_string(text_field(j, "mode"));
    b.n_calibration = field(j, "n_calibration").get<std::size_t>();
    return b;
  });
}

Json residual_batch_to_json(const ResidualBatch& batch) {
  const TasteEstimate est = taste_functional_estimate(batch);
  Json j;
  j["n"] = batch.raw.size();
  j["route"] = batch.route.to_string();
  j["baseline"] = batch.baseline;
  j["taste"] = est.value;
  j["taste_stderr"] = est.std_error_defined ? Json(est.std_error) : Json(nullptr);
  j["provenance"] = provenance_json(batch.provenance);
  j["raw"] = vec_json(batch.raw);
  j["adjusted"] = vec_json(batch.adjusted);
  return j;
}

Json report_to_json(const IdentityCheckReport& r) {
  Json j;
  j["name"] = r.name;
  j["relation"] = r.relation == IdentityCheckReport::Relation::equality ? "equality" : "upper_bound";
  j["lhs"] = r.lhs;
  j["lhs_stderr"] = r.lhs_std_error;
  j["rhs"] = r.rhs;
  j["rhs_stderr"] = r.rhs_std_error;
  j["discrepancy"] = r.discrepancy;
  j["relative_tolerance"] = r.relative_tolerance;
  j["n_samples"] = r.n_samples;
  j["seed"] = r.seed;
  j["pass"] = r.passes();
  Json terms = Json::object();
  for (const auto& [k, v] : r.terms) terms[k] = v;
  j["terms"] = terms;
  return j;
}

Json detection_report_to_json(const DetectionReport& r) {
  Json j;
  j["alpha"] = r.alpha;
  j["threshold"] = r.threshold;
  j["mode"] = to_string(r.mode);
  j["fpr"] = r.fpr;
  j["tpr"] = r.tpr;
  j["auroc"] = r.auroc;
  j["fpr95"] = r.fpr95;
  j["seed"] = r.seed;
  j["provenance"] = provenance_json(r.provenance);
  j["n"] = r.scores.size();
  j["scores"] = vec_json(r.scores);
  j["labels"] = r.labels;
  j["decisions"] = r.decisions;
  return j;
}

std::string residuals_csv(const ResidualBatch& batch, const std::optional<std::vector<int>>& labels,
                          const std::optional<CalibrationBaseline>& baseline) {
  const bool decide_col = baseline && baseline->threshold;
  std::ostringstream os;
  os << "index,raw,adjusted";
  if (decide_col) os << ",statistic,flagged";
  if (labels) os << ",label";
  os << '\n';
  for (std::size_t i = 0; i < batch.raw.size(); ++i) {
    os << i << ',' << format_number(batch.raw[i]) << ',' << format_number(batch.adjusted[i]);
    if (decide_col) {
      os << ',' << format_number(mode_statistic(batch.adjusted[i], baseline->mode)) << ','
         << int(decide(batch.adjusted[i], *baseline->threshold, baseline->mode));
    }
    if (labels) os << ',' << (*labels)[i];
    os << '\n';
  }
  return os.str();
}

std::string per_dimension_csv(const Mat& m) {
  std::ostringstream os;
  os << "index";
  for (std::size_t j = 0; j < m.cols; ++j) os << ",r" << (j + 1);
  os << '\n';
  for (std::size_t i = 0; i < m.rows; ++i) {
    os << i;
    for (std::size_t j = 0; j < m.cols; ++j) os << ',' << format_number(m(i, j));
    os << '\n';
  }
  return os.str();
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "phi,taste,taste_stderr,mse,loglik,loglik_stderr\n";
  for (const auto& r : rows)
    csv_row(os, {r.phi, r.taste, r.taste_std_error, r.mse, r.loglik, r.loglik_std_error});
  return os.str();
}

std::string power_csv(const std::vector<PowerRow>& rows) {
  std::ostringstream os;
  os << "corruption,power,fpr,n\n";
  for (const auto& r : rows) csv_row(os, {r.corruption, r.power, r.fpr, double(r.n)});
  return os.str();
}

std::string blind_spot_csv(const std::vector<BlindSpotRow>& rows) {
  std::ostringstream os;
  os << "theta,first_order,first_order_stderr,closed_form,langevin,langevin_stderr,"
        "l2_corrected,l2_corrected_stderr\n";
  for (const auto& r : rows)
    csv_row(os, {r.theta, r.first_order, r.first_order_std_error, r.closed_form, r.langevin,
                 r.langevin_std_error, r.l2_corrected, r.l2_corrected_std_error});
  return os.str();
}

std::string loss_csv(const std::vector<double>& history) {
  std::ostringstream os;
  os << "epoch,loss\n";
  for (std::size_t e = 0; e < history.size(); ++e) os << e << ',' << format_number(history[e]) << '\n';
  return os.str();
}

}  // namespace tastekit
