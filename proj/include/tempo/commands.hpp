#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tempo/config.hpp"

namespace tempo::cli {

struct PreparedData {
  data::DatasetSplit split;  // normalized when the config asks for it; stats are identity otherwise
  std::size_t features = 0;
  double cut = 0.0;
};

/// Loads or generates the dataset, splits it with derive_seed(seed, "split") and normalizes.
PreparedData prepare_data(const config::RunConfig& c);

/// --seed override: sets the root seed everywhere it is mirrored.
void apply_seed(config::RunConfig& c, std::uint64_t seed);

/// Worker count for cross-run helpers: TEMPO_ODE_THREADS, else hardware concurrency.
std::size_t max_threads();
/// Runs fn(0..n-1) on at most max_threads() threads; rethrows the first failure.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Writes the dataset and its heldout sibling plus <stem>.stats.json; returns the stats.
config::json cmd_generate(const config::RunConfig& c, const std::filesystem::path& out);

struct TrainResult {
  std::vector<training::MetricsRecord> history;
  training::FitState state;
  std::filesystem::path best, final, metrics;
};

/// Trains into out_dir (best.json, final.json, metrics.jsonl). With resume the
/// run continues after the checkpoint's epoch and appends to metrics.jsonl.
TrainResult cmd_train(const config::RunConfig& c, const std::filesystem::path& out_dir,
                      const std::optional<std::filesystem::path>& resume = std::nullopt);

struct EvalRequest {
  std::optional<training::Task> task;          // default: the checkpoint's task
  std::string split = "test";                  // train, validation or test
  std::optional<std::filesystem::path> data;   // CSV dataset instead of the config's split
  bool per_sample = false;
};

config::json cmd_eval(const config::Checkpoint& ckpt, const EvalRequest& req);

/// CSV rows: time, observed values, mask flags, predictions (original units).
/// times: "observed", "grid" or "uniform:N".
void cmd_export_trajectory(const config::Checkpoint& ckpt, const std::string& sample, const std::string& times,
                           std::ostream& out, const std::optional<std::filesystem::path>& data = std::nullopt);

/// Feature width a config implies (synthetic n_features or the CSV header).
std::size_t config_features(const config::RunConfig& c);

/// Counts per component for model (and compare when present).
config::json param_count_report(const config::RunConfig& c);
std::string cmd_param_count(const config::RunConfig& c);

/// Trains model and compare (model twice without it) for epochs epochs on the
/// same data and seed, interleaving epochs; reports median epoch seconds.
config::json cmd_bench_overhead(const config::RunConfig& c, std::size_t epochs);

/// Full command-line entry: 0 ok, 1 runtime error, 2 usage error.
int run(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace tempo::cli
