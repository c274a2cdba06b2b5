#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "tempo/data.hpp"
#include "tempo/models.hpp"
#include "tempo/ode.hpp"
#include "tempo/training.hpp"

namespace tempo::config {

using nlohmann::json;

inline constexpr int kConfigVersion = 1;
inline constexpr int kCheckpointVersion = 1;

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "csv"
  std::string csv;                   // dataset path when source = csv
  data::SyntheticSpec synthetic;
  double train_fraction = 0.8;
  double validation_fraction = 0.0;
  bool normalize = true;
  double extrapolation_cut = 0.5;  // fraction of the training time range
};

struct TrainingConfig {
  double lr = 0.01;
  double decay = 0.999;
  training::FitConfig fit;  // fit.seed mirrors RunConfig::seed
};

struct RunConfig {
  int version = kConfigVersion;
  training::Task task = training::Task::reconstruction;
  std::uint64_t seed = 0;
  models::ModelConfig model;
  /// Second architecture for side-by-side parameter counts and overhead runs.
  std::optional<models::ModelConfig> compare;
  ode::SolverConfig solver;
  TrainingConfig training;
  DataConfig data;
};

/// Strict: unknown keys and wrong types are InvalidConfig. Missing keys take defaults.
RunConfig from_json(const json& j);
json to_json(const RunConfig& c);
json to_json(const models::ModelConfig& m);

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical text: sorted keys, two-space indent, trailing newline.
std::string dump(const json& j);
void save_config(const std::filesystem::path& path, const RunConfig& c);

void validate(const RunConfig& c);

// ---------------------------------------------------------------- checkpoints

struct Checkpoint {
  int format_version = kCheckpointVersion;
  RunConfig config;
  std::size_t features = 0;
  double cut = 0.0;  // resolved extrapolation cut
  std::map<std::string, std::pair<Shape, Buffer>> params;
  training::FitState state;  // optimizer moments keyed through param_order
  std::vector<std::string> param_order;
  data::NormStats stats;
};

Checkpoint make_checkpoint(const RunConfig& config, models::LatentOdeModel& model, const training::FitState& state,
                           const data::NormStats& stats, double cut);
json to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const json& j);
std::string dump_checkpoint(const Checkpoint& c);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Fit state with optimizer moments reordered to match params.
training::FitState restore_state(const Checkpoint& c, const ParameterList& params);

/// Builds the model described by the checkpoint and copies its parameters in.
std::unique_ptr<models::LatentOdeModel> restore_model(const Checkpoint& c);
/// Copies parameter values into model; every name and shape must match.
void load_parameters(models::LatentOdeModel& model, const Checkpoint& c);

/// Model for a run: initialized from derive_seed(seed, "init").
std::unique_ptr<models::LatentOdeModel> build_model(const RunConfig& c, const models::ModelConfig& m,
                                                    std::size_t features);

}  // namespace tempo::config
