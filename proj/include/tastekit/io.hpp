#pragma once

// File formats: headered CSV for point sets and tables, JSON for
// checkpoints and reports.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tastekit/detector.hpp"
#include "tastekit/predictors.hpp"
#include "tastekit/score_models.hpp"
#include "tastekit/shift_lab.hpp"
#include "tastekit/stein_core.hpp"

namespace tastekit {

using Json = nlohmann::ordered_json;

// One row per point, d feature columns and an optional trailing "label"
// column (0 = in-distribution, 1 = out).
struct PointTable {
  std::vector<std::string> columns;  // feature column names
  Points points;
  std::optional<std::vector<int>> labels;
};

// Throws ErrorKind::data with "<path>:<line>: <reason>" on malformed input.
PointTable read_points_csv(const std::filesystem::path& path);
PointTable parse_points_csv(const std::string& text, const std::string& source = "<input>");
void write_points_csv(const std::filesystem::path& path, const PointTable& table);

// Shortest round-trip decimal form; "nan" for NaN.
std::string format_number(double v);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);
Json read_json(const std::filesystem::path& path);

Json network_to_json(const Network& net);
Network network_from_json(const Json& j);

Json predictor_to_json(const MlpPredictor& model, const Json& metadata = Json::object());
MlpPredictor predictor_from_json(const Json& j);

// Every score kind round-trips; learned models carry noise_std and
// training metadata alongside the network.
Json score_model_to_json(const ScoreModel& model);
ScoreModel score_model_from_json(const Json& j);

Json potential_to_json(const Potential& h);
Potential potential_from_json(const Json& j);

Json baseline_to_json(const CalibrationBaseline& b);
CalibrationBaseline baseline_from_json(const Json& j);
Json residual_batch_to_json(const ResidualBatch& batch);
Json report_to_json(const IdentityCheckReport& r);
Json detection_report_to_json(const DetectionReport& r);

std::string residuals_csv(const ResidualBatch& batch,
                          const std::optional<std::vector<int>>& labels = std::nullopt,
                          const std::optional<CalibrationBaseline>& baseline = std::nullopt);
std::string per_dimension_csv(const Mat& m);
std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string power_csv(const std::vector<PowerRow>& rows);
std::string blind_spot_csv(const std::vector<BlindSpotRow>& rows);
std::string loss_csv(const std::vector<double>& history);

}  // namespace tastekit
