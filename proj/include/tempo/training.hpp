#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tempo/data.hpp"
#include "tempo/models.hpp"

namespace tempo::training {

/// root + FNV-1a(purpose).
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose);

enum class Task { reconstruction, extrapolation, classification, per_time_classification };
std::string to_string(Task t);
Task parse_task(const std::string& s);

/// Task plus the absolute cut time used by extrapolation. Observations at or
/// before the cut feed the encoder; scoring uses cells after it.
struct TaskSpec {
  Task task = Task::reconstruction;
  double cut = 0.0;
};

/// Midpoint rule: t_min + fraction·(t_max − t_min) over every time in series.
double resolve_cut(std::span<const data::IrregularSeries> series, double fraction);

// ---------------------------------------------------------------- optimizer

struct AdamaxState {
  double lr = 0.01;
  double decay = 0.999;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t step = 0;
  std::vector<Buffer> m;  // first moments, one per parameter
  std::vector<Buffer> u;  // infinity norms
};

AdamaxState make_adamax(const ParameterList& params, double lr, double decay);
double learning_rate(const AdamaxState& s, std::size_t epoch);
void adamax_step(AdamaxState& s, const ParameterList& params, std::span<const Buffer> grads, std::size_t epoch);
/// Uses the gradients stored on the parameters.
void adamax_step(AdamaxState& s, const ParameterList& params, std::size_t epoch);

/// Rescales parameter grads so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(const ParameterList& params, double max_norm);

// ---------------------------------------------------------------- losses

/// Σ mask∘(pred−target)² / Σ mask.
Tensor masked_mse(const Tensor& pred, const Tensor& target, const Tensor& mask);
/// Mean Gaussian negative log-likelihood over cells with mask = 1.
Tensor gaussian_nll(const Tensor& pred, const Tensor& target, const Tensor& mask, double std);
/// KL(N(mu, sigma²) ‖ N(0, 1)) averaged over every entry.
Tensor kl_standard_normal(const Tensor& mu, const Tensor& sigma);
/// Negative ELBO: gaussian_nll + kl_weight·KL.
Tensor elbo(const Tensor& pred, const Tensor& target, const Tensor& mask, const models::Posterior& post,
            double obs_noise_std, double kl_weight);
/// Mean binary cross-entropy on logits (B or B×1) against 0/1 labels.
Tensor bce_with_logits(const Tensor& logits, std::span<const int> labels);
/// Mean softmax cross-entropy over rows whose label is ≥ 0.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Probability that a random positive outranks a random negative, ties 0.5.
double auc(std::span<const double> scores, std::span<const int> labels);
double accuracy(std::span<const int> predicted, std::span<const int> labels);

enum class LossKind { masked_mse, gaussian_nll, elbo };
std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& s);

struct LossSpec {
  LossKind kind = LossKind::elbo;
  double obs_noise_std = 0.01;
  double kl_weight = 1.0;
  std::size_t kl_warmup_epochs = 10;  // 0 = constant weight
  double task_weight = 100.0;         // multiplier on the classification term

  double kl_weight_at(std::size_t epoch) const;
};

void validate(const LossSpec& spec);

// ---------------------------------------------------------------- forward passes

struct BatchForward {
  models::Posterior posterior;
  Tensor z0;                    // B×L
  models::Trajectory trajectory;
  Tensor predictions;           // (T·B)×D, same layout as the batch
};

/// Encode (up to the cut for extrapolation), draw z0 = mu + sigma∘noise (noise
/// may be null for z0 = mu), and decode at every batch time.
BatchForward forward_batch(models::LatentOdeModel& model, const data::Batch& batch, const TaskSpec& task,
                           Tape* tape, const Tensor* noise);

/// Training loss for one batch. Reads only observed cells, labels and times.
Tensor batch_loss(models::LatentOdeModel& model, const data::Batch& batch, const TaskSpec& task,
                  const LossSpec& loss, std::size_t epoch, std::mt19937_64& rng, Tape* tape);

// ---------------------------------------------------------------- evaluation

struct SampleMetric {
  std::string id;
  double value = 0.0;   // per-sample MSE, or the classifier score
  double weight = 0.0;  // heldout cells, or labelled points
};

struct EvalResult {
  std::map<std::string, double> metrics;
  std::vector<SampleMetric> per_sample;
};

/// Name of the metric used for model selection and whether lower is better.
std::string primary_metric(Task task, std::size_t n_classes);
bool lower_is_better(Task task);

/// Reconstruction/extrapolation: masked MSE on heldout cells in original
/// units (stats may be null for already-raw data). Classification: AUC for a
/// single logit, accuracy otherwise. Uses z0 = mu.
EvalResult evaluate(models::LatentOdeModel& model, std::span<const data::IrregularSeries> series,
                    const TaskSpec& task, const data::NormStats* stats, std::size_t batch_size);

// ---------------------------------------------------------------- training loop

struct MetricsRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::map<std::string, double> metrics;
  double seconds = 0.0;
  double lr = 0.0;
};

std::string to_json_line(const MetricsRecord& r);

struct FitConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  std::size_t patience = 20;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
  LossSpec loss;
};

void validate(const FitConfig& c);

/// Everything needed to continue a run after the last completed epoch.
struct FitState {
  AdamaxState optimizer;
  std::size_t epoch = 0;  // last completed epoch; 0 = initial evaluation only
  std::optional<double> best_metric;
  std::size_t best_epoch = 0;
  std::size_t since_best = 0;
};

/// One shuffled pass over the training split (epoch ≥ 1), then validation
/// with gradients off.
MetricsRecord train_epoch(models::LatentOdeModel& model, std::span<const data::IrregularSeries> train,
                          std::span<const data::IrregularSeries> validation, const TaskSpec& task,
                          const FitConfig& config, AdamaxState& optimizer, std::size_t epoch,
                          const data::NormStats* stats);

/// Mean batch loss without updates (epoch-0 record).
double mean_loss(models::LatentOdeModel& model, std::span<const data::IrregularSeries> series, const TaskSpec& task,
                 const FitConfig& config, std::size_t epoch);

/// Called after each record; improved marks a new best validation metric.
using EpochCallback = std::function<void(const MetricsRecord& record, bool improved)>;

/// Runs epochs state.epoch+1 .. config.epochs, stopping once the metric has
/// not improved for patience epochs. A fresh state (epoch 0, no best) first
/// logs an epoch-0 evaluation. An empty validation split falls back to the
/// training split's heldout cells.
void fit(models::LatentOdeModel& model, std::span<const data::IrregularSeries> train,
         std::span<const data::IrregularSeries> validation, const TaskSpec& task, const FitConfig& config,
         FitState& state, const data::NormStats* stats, const EpochCallback& on_epoch);

}  // namespace tempo::training
