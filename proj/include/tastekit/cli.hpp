#pragma once

// Command-line front end. Every command is driven by a JSON config that is
// built from a preset, an optional --config file and explicit flags, in that
// order of precedence, and written back as effective-config.json.

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "tastekit/error.hpp"
#include "tastekit/io.hpp"
#include "tastekit/predictors.hpp"
#include "tastekit/score_models.hpp"

namespace tastekit::cli {

enum class ExperimentKind { rotate, tilt, mixed, blindspot, identities };

std::string to_string(ExperimentKind k);
ExperimentKind experiment_kind_from_string(const std::string& name);

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::rotate;
  std::uint64_t seed = 0;
  std::size_t samples = 1000;
  std::string predictor = "exact-linear";  // preset name or checkpoint path
  std::string score = "standard-normal";   // preset name or checkpoint path
  Json shift = Json::object();             // kind-specific parameters
  double alpha = 0.05;
  std::string route = "exact";
  std::string out = "out";
};

Json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_from_json(const Json& j);

// Presets: rotate, rotate-trained, tilt, mixed, blindspot, identities.
ExperimentConfig experiment_preset(const std::string& name);
std::vector<std::string> experiment_preset_names();

// Preset configs for the training commands ("linear-task-2d", "dsm-gauss2d").
Json train_predictor_preset(const std::string& name);
Json train_score_preset(const std::string& name);
Json score_defaults();

// Predictor specs: exact-linear (f = x2 - x1), squared-norm, tanh-2d,
// relu-softmax-2d, linear-task-2d (trained on the fly) or a checkpoint path.
std::shared_ptr<const Predictor> resolve_predictor(const std::string& spec, std::uint64_t seed);
// Score specs: standard-normal, dsm-gauss2d (trained on the fly) or a
// checkpoint path. dimension is used by standard-normal.
ScoreModel resolve_score(const std::string& spec, std::size_t dimension, std::uint64_t seed);

struct TrainedPredictor {
  MlpPredictor model;
  std::vector<double> loss_history;
  Json metadata;
};
TrainedPredictor train_predictor_from_config(const Json& config);

struct TrainedScore {
  ScoreModel model;
  std::vector<double> loss_history;
  Json metadata;
};
TrainedScore train_score_from_config(const Json& config);

// Command bodies; each writes its outputs and effective-config.json under
// the configured output directory and returns the files it wrote.
std::vector<std::filesystem::path> cmd_train_predictor(const Json& config);
std::vector<std::filesystem::path> cmd_train_score(const Json& config);
std::vector<std::filesystem::path> cmd_score(const Json& config);
std::vector<std::filesystem::path> cmd_experiment(const ExperimentConfig& config);

int exit_code(ErrorKind kind);

// Full argv entry point. Returns the process exit code; errors are printed
// to err as a single line "tastekit: error: <category>: <message>".
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tastekit::cli
