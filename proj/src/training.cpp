#include "tempo/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

#include "json.hpp"

#include "tempo/ops.hpp"

namespace tempo::training {

namespace {

Tensor make_result(Shape shape, Buffer data, std::span<const Tensor> inputs, Tape::BackwardFn fn) {
  if (auto tape = common_tape(inputs)) return tape->record(std::move(shape), std::move(data), inputs, std::move(fn));
  return Tensor(std::move(shape), std::move(data));
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(what) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

double mask_total(const Tensor& mask) {
  double n = 0.0;
  for (double m : mask.data()) n += m;
  return n;
}

// Σ w_i·ρ(pred_i − target_i) / Σ w_i with ρ(r) = c·r² + k.
Tensor weighted_quadratic(const Tensor& pred, const Tensor& target, const Tensor& mask, double c, double k,
                          const char* what) {
  require_same(pred, target, what);
  require_same(pred, mask, what);
  const double n = mask_total(mask);
  if (!(n > 0)) throw Error(ErrorCode::EmptyMask, std::string(what) + " with no observed cells");
  const auto p = pred.data(), t = target.data(), w = mask.data();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (w[i] == 0.0) continue;
    const double r = p[i] - t[i];
    total += w[i] * (c * r * r + k);
  }
  auto pb = pred.buffer(), tb = target.buffer(), wb = mask.buffer();
  const Tensor inputs[] = {pred, target};
  return make_result({}, {total / n}, inputs,
                     [pb, tb, wb, c, n](std::span<const double> g, std::span<Buffer* const> gin) {
                       for (std::size_t i = 0; i < pb->size(); ++i) {
                         if ((*wb)[i] == 0.0) continue;
                         const double d = g[0] * (*wb)[i] * 2.0 * c * ((*pb)[i] - (*tb)[i]) / n;
                         if (gin[0]) (*gin[0])[i] += d;
                         if (gin[1]) (*gin[1])[i] -= d;
                       }
                     });
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : purpose) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return root + h;
}

std::string to_string(Task t) {
  switch (t) {
    case Task::reconstruction: return "reconstruction";
    case Task::extrapolation: return "extrapolation";
    case Task::classification: return "classification";
    case Task::per_time_classification: return "per-time-classification";
  }
  return "reconstruction";
}

Task parse_task(const std::string& s) {
  for (Task t : {Task::reconstruction, Task::extrapolation, Task::classification, Task::per_time_classification}) {
    if (s == to_string(t)) return t;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown task '" + s + "'");
}

double resolve_cut(std::span<const data::IrregularSeries> series, double fraction) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : series) {
    if (s.times.empty()) continue;
    lo = std::min(lo, s.times.front());
    hi = std::max(hi, s.times.back());
  }
  if (!std::isfinite(lo)) throw Error(ErrorCode::EmptySeries, "no times to place the cut in");
  return lo + fraction * (hi - lo);
}

// ---------------------------------------------------------------- optimizer

AdamaxState make_adamax(const ParameterList& params, double lr, double decay) {
  if (!(lr >= 0) || !(decay > 0)) throw Error(ErrorCode::InvalidConfig, "need lr >= 0 and decay > 0");
  AdamaxState s;
  s.lr = lr;
  s.decay = decay;
  for (const Parameter* p : params) {
    s.m.emplace_back(p->size(), 0.0);
    s.u.emplace_back(p->size(), 0.0);
  }
  return s;
}

double learning_rate(const AdamaxState& s, std::size_t epoch) {
  return s.lr * std::pow(s.decay, static_cast<double>(epoch));
}

void adamax_step(AdamaxState& s, const ParameterList& params, std::span<const Buffer> grads, std::size_t epoch) {
  if (params.size() != grads.size() || s.m.size() != params.size() || s.u.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match the parameter list");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].size() != params[k]->size() || s.m[k].size() != params[k]->size()) {
      throw Error(ErrorCode::ShapeMismatch, "gradient size mismatch for " + params[k]->name());
    }
    for (double g : grads[k]) {
      if (!std::isfinite(g)) throw Error(ErrorCode::NonFiniteGrad, "non-finite gradient in " + params[k]->name());
    }
  }
  ++s.step;
  const double lr = learning_rate(s, epoch);
  const double correction = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto theta = params[k]->mutable_value();
    auto& m = s.m[k];
    auto& u = s.u[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      u[i] = std::max(s.beta2 * u[i], std::abs(g[i]));
      theta[i] -= lr * m[i] / (correction * (u[i] + 1e-8));
    }
  }
}

void adamax_step(AdamaxState& s, const ParameterList& params, std::size_t epoch) {
  std::vector<Buffer> grads;
  grads.reserve(params.size());
  for (const Parameter* p : params) grads.emplace_back(p->grad().begin(), p->grad().end());
  adamax_step(s, params, grads, epoch);
}

double clip_grad_norm(const ParameterList& params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params) {
    for (double g : p->grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm) {
    const double f = max_norm / norm;
    for (Parameter* p : params) {
      Buffer g(p->grad().begin(), p->grad().end());
      for (double& x : g) x *= f;
      p->set_grad(g);
    }
  }
  return norm;
}

// ---------------------------------------------------------------- losses

Tensor masked_mse(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  return weighted_quadratic(pred, target, mask, 1.0, 0.0, "masked_mse");
}

Tensor gaussian_nll(const Tensor& pred, const Tensor& target, const Tensor& mask, double std) {
  if (!(std > 0)) throw Error(ErrorCode::InvalidArgument, "observation noise must be positive");
  const double k = std::log(std) + 0.5 * std::log(2.0 * std::numbers::pi);
  return weighted_quadratic(pred, target, mask, 0.5 / (std * std), k, "gaussian_nll");
}

Tensor kl_standard_normal(const Tensor& mu, const Tensor& sigma) {
  require_same(mu, sigma, "kl");
  // (σ² + μ² − 1 − 2 ln σ) / 2
  const Tensor t = ops::sub(ops::add(ops::square(sigma), ops::square(mu)), ops::scale(ops::log(sigma), 2.0));
  return ops::scale(ops::add(ops::mean(t), -1.0), 0.5);
}

Tensor elbo(const Tensor& pred, const Tensor& target, const Tensor& mask, const models::Posterior& post,
            double obs_noise_std, double kl_weight) {
  const Tensor nll = gaussian_nll(pred, target, mask, obs_noise_std);
  if (kl_weight == 0.0) return nll;
  return ops::add(nll, ops::scale(kl_standard_normal(post.mu, post.sigma), kl_weight));
}

Tensor bce_with_logits(const Tensor& logits, std::span<const int> labels) {
  if (logits.size() != labels.size() || (logits.rank() == 2 && logits.cols() != 1) || logits.rank() > 2) {
    throw Error(ErrorCode::ShapeMismatch, "bce expects one logit per label, got " + shape_string(logits.shape()));
  }
  const auto x = logits.data();
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (labels[i] < 0) continue;
    if (labels[i] > 1) throw Error(ErrorCode::InvalidArgument, "binary label must be 0 or 1");
    total += softplus(x[i]) - labels[i] * x[i];
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::EmptyMask, "bce with no labelled rows");
  auto xb = logits.buffer();
  std::vector<int> y(labels.begin(), labels.end());
  const Tensor inputs[] = {logits};
  return make_result({}, {total / static_cast<double>(n)}, inputs,
                     [xb, y, n](std::span<const double> g, std::span<Buffer* const> gin) {
                       for (std::size_t i = 0; i < y.size(); ++i) {
                         if (y[i] < 0) continue;
                         (*gin[0])[i] += g[0] * (sigmoid((*xb)[i]) - y[i]) / static_cast<double>(n);
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.rows() != labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, "cross_entropy expects rows x classes logits, got " +
                                              shape_string(logits.shape()));
  }
  const std::size_t rows = logits.rows(), c = logits.cols();
  Buffer probs(rows * c, 0.0);
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] < 0) continue;
    if (static_cast<std::size_t>(labels[r]) >= c) throw Error(ErrorCode::InvalidArgument, "label out of range");
    double hi = -INFINITY;
    for (std::size_t j = 0; j < c; ++j) hi = std::max(hi, logits.at(r, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(logits.at(r, j) - hi);
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = std::exp(logits.at(r, j) - hi) / z;
    total += hi + std::log(z) - logits.at(r, static_cast<std::size_t>(labels[r]));
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::EmptyMask, "cross_entropy with no labelled rows");
  std::vector<int> y(labels.begin(), labels.end());
  const Tensor inputs[] = {logits};
  return make_result({}, {total / static_cast<double>(n)}, inputs,
                     [probs = std::move(probs), y, c, n](std::span<const double> g, std::span<Buffer* const> gin) {
                       const double s = g[0] / static_cast<double>(n);
                       for (std::size_t r = 0; r < y.size(); ++r) {
                         if (y[r] < 0) continue;
                         for (std::size_t j = 0; j < c; ++j) {
                           const double onehot = static_cast<std::size_t>(y[r]) == j ? 1.0 : 0.0;
                           (*gin[0])[r * c + j] += s * (probs[r * c + j] - onehot);
                         }
                       }
                     });
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::ShapeMismatch, "auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average ranks over tie groups, 1-based.
  double rank_sum = 0.0;
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum += avg;
        ++pos;
      } else if (labels[order[k]] == 0) {
        ++neg;
      } else {
        throw Error(ErrorCode::InvalidArgument, "auc labels must be 0 or 1");
      }
    }
    i = j;
  }
  if (pos == 0 || neg == 0) throw Error(ErrorCode::SingleClass, "auc needs both classes");
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) throw Error(ErrorCode::ShapeMismatch, "accuracy: length mismatch");
  std::size_t hit = 0, n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    ++n;
    hit += predicted[i] == labels[i] ? 1 : 0;
  }
  if (n == 0) throw Error(ErrorCode::EmptyMask, "accuracy with no labels");
  return static_cast<double>(hit) / static_cast<double>(n);
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::masked_mse: return "masked_mse";
    case LossKind::gaussian_nll: return "gaussian_nll";
    case LossKind::elbo: return "elbo";
  }
  return "elbo";
}

LossKind parse_loss_kind(const std::string& s) {
  for (LossKind k : {LossKind::masked_mse, LossKind::gaussian_nll, LossKind::elbo}) {
    if (s == to_string(k)) return k;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown loss '" + s + "'");
}

double LossSpec::kl_weight_at(std::size_t epoch) const {
  if (kl_warmup_epochs == 0) return kl_weight;
  return kl_weight * std::min(1.0, static_cast<double>(epoch) / static_cast<double>(kl_warmup_epochs));
}

void validate(const LossSpec& spec) {
  if (!(spec.obs_noise_std > 0)) throw Error(ErrorCode::InvalidConfig, "obs_noise_std must be positive");
  if (!(spec.kl_weight >= 0) || !(spec.task_weight >= 0)) {
    throw Error(ErrorCode::InvalidConfig, "loss weights must be non-negative");
  }
}

// ---------------------------------------------------------------- forward passes

namespace {

bool is_classification(Task t) { return t == Task::classification || t == Task::per_time_classification; }

// Observed cells that count towards the reconstruction term.
std::pair<Tensor, Tensor> observed_targets(const data::Batch& b, const TaskSpec& task) {
  const std::size_t rows = b.times.size() * b.size;
  Buffer values(rows * b.features, 0.0), mask(rows * b.features, 0.0);
  for (std::size_t t = 0; t < b.times.size(); ++t) {
    if (task.task == Task::extrapolation && b.times[t] <= task.cut) continue;
    for (std::size_t i = b.offset(t, 0); i < b.offset(t, 0) + b.size * b.features; ++i) {
      if (!b.mask[i]) continue;
      mask[i] = 1.0;
      values[i] = b.values[i];
    }
  }
  return {Tensor({rows, b.features}, std::move(values)), Tensor({rows, b.features}, std::move(mask))};
}

Tensor classifier_latent(models::LatentOdeModel& model, const BatchForward& f) {
  switch (model.config().classifier_input) {
    case models::ClassifierInput::z0: return f.z0;
    case models::ClassifierInput::final_latent: return f.trajectory.latents.back();
    case models::ClassifierInput::pooled: {
      const auto& zs = f.trajectory.latents;
      const std::vector<double> coeffs(zs.size(), 1.0 / static_cast<double>(zs.size()));
      return ops::lincomb(Tensor::zeros(zs.front().shape()), coeffs, zs);
    }
  }
  return f.z0;
}

std::vector<int> series_labels(const data::Batch& b) {
  std::vector<int> y;
  for (std::size_t i = 0; i < b.size; ++i) {
    if (!b.labels[i]) throw Error(ErrorCode::InvalidArgument, "classification needs a label on every sample");
    y.push_back(*b.labels[i]);
  }
  return y;
}

// Row t·B + b of the per-time logits.
std::vector<int> per_time_labels(const data::Batch& b) {
  std::vector<int> y(b.times.size() * b.size, -1);
  for (std::size_t i = 0; i < b.size; ++i) {
    if (b.time_labels[i].empty()) continue;
    for (std::size_t t = 0; t < b.times.size(); ++t) y[t * b.size + i] = b.time_labels[i][t];
  }
  return y;
}

Tensor classification_logits(models::LatentOdeModel& model, const BatchForward& f, Task task, Tape* tape) {
  if (task == Task::classification) return models::classify(model, classifier_latent(model, f), tape);
  return models::classify(model, ops::concat_rows(f.trajectory.latents), tape);
}

Tensor classification_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.cols() == 1) return bce_with_logits(logits, labels);
  return cross_entropy(logits, labels);
}

}  // namespace

BatchForward forward_batch(models::LatentOdeModel& model, const data::Batch& batch, const TaskSpec& task,
                           Tape* tape, const Tensor* noise) {
  BatchForward f;
  const std::optional<double> cutoff =
      task.task == Task::extrapolation ? std::optional<double>(task.cut) : std::nullopt;
  f.posterior = models::encode(model, batch, tape, cutoff);
  f.z0 = noise ? models::sample_z0(f.posterior.mu, f.posterior.sigma, *noise) : f.posterior.mu;
  f.trajectory = models::decode_batch(model, f.z0, batch.times.front(), batch.times, tape);
  f.predictions = ops::concat_rows(f.trajectory.outputs);
  return f;
}

Tensor batch_loss(models::LatentOdeModel& model, const data::Batch& batch, const TaskSpec& task,
                  const LossSpec& loss, std::size_t epoch, std::mt19937_64& rng, Tape* tape) {
  std::optional<Tensor> noise;
  if (loss.kind == LossKind::elbo) {
    std::normal_distribution<double> normal;
    Buffer eps(batch.size * model.latent_dim());
    for (double& e : eps) e = normal(rng);
    noise = Tensor({batch.size, model.latent_dim()}, std::move(eps));
  }
  const BatchForward f = forward_batch(model, batch, task, tape, noise ? &*noise : nullptr);
  const auto [target, mask] = observed_targets(batch, task);

  std::optional<Tensor> total;
  if (mask_total(mask) > 0) {
    total = loss.kind == LossKind::masked_mse ? masked_mse(f.predictions, target, mask)
                                              : gaussian_nll(f.predictions, target, mask, loss.obs_noise_std);
  } else if (!is_classification(task.task) && task.task != Task::extrapolation) {
    throw Error(ErrorCode::EmptyMask, "batch has no observed cells");
  }
  if (loss.kind == LossKind::elbo) {
    const double w = loss.kl_weight_at(epoch);
    const Tensor kl = ops::scale(kl_standard_normal(f.posterior.mu, f.posterior.sigma), w);
    total = total ? ops::add(*total, kl) : kl;
  }
  if (is_classification(task.task)) {
    const Tensor logits = classification_logits(model, f, task.task, tape);
    const std::vector<int> labels =
        task.task == Task::classification ? series_labels(batch) : per_time_labels(batch);
    const Tensor cls = ops::scale(classification_loss(logits, labels), loss.task_weight);
    total = total ? ops::add(*total, cls) : cls;
  }
  if (!total) throw Error(ErrorCode::EmptyMask, "batch contributes nothing to the loss");
  return *total;
}

// ---------------------------------------------------------------- evaluation

std::string primary_metric(Task task, std::size_t n_classes) {
  if (!is_classification(task)) return "mse";
  return n_classes == 1 ? "auc" : "accuracy";
}

bool lower_is_better(Task task) { return !is_classification(task); }

namespace {

std::vector<std::vector<std::size_t>> sequential_batches(std::size_t n, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t j = i; j < std::min(n, i + batch_size); ++j) idx.push_back(j);
    out.push_back(std::move(idx));
  }
  return out;
}

int argmax_row(const Tensor& logits, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < logits.cols(); ++j) {
    if (logits.at(r, j) > logits.at(r, best)) best = j;
  }
  return static_cast<int>(best);
}

}  // namespace

EvalResult evaluate(models::LatentOdeModel& model, std::span<const data::IrregularSeries> series,
                    const TaskSpec& task, const data::NormStats* stats, std::size_t batch_size) {
  if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch size must be positive");
  EvalResult result;
  double sq_total = 0.0, n_total = 0.0;
  std::vector<double> scores;
  std::vector<int> predicted, labels;

  for (const auto& idx : sequential_batches(series.size(), batch_size)) {
    const data::Batch b = data::make_batch(series, idx);
    const BatchForward f = forward_batch(model, b, task, nullptr, nullptr);

    if (!is_classification(task.task)) {
      const std::size_t D = b.features;
      for (std::size_t i = 0; i < b.size; ++i) {
        double sq = 0.0, n = 0.0;
        for (std::size_t t = 0; t < b.times.size(); ++t) {
          if (task.task == Task::extrapolation && b.times[t] <= task.cut) continue;
          for (std::size_t d = 0; d < D; ++d) {
            const std::size_t cell = b.offset(t, i) + d;
            if (!b.heldout[cell]) continue;
            const double scale = stats ? stats->std[d] : 1.0;
            const double r = (f.predictions[cell] - b.values[cell]) * scale;
            sq += r * r;
            n += 1.0;
          }
        }
        sq_total += sq;
        n_total += n;
        result.per_sample.push_back({series[idx[i]].id, n > 0 ? sq / n : 0.0, n});
      }
      continue;
    }

    const Tensor logits = classification_logits(model, f, task.task, nullptr);
    const bool binary = logits.cols() == 1;
    if (task.task == Task::classification) {
      const std::vector<int> y = series_labels(b);
      for (std::size_t i = 0; i < b.size; ++i) {
        const double score = binary ? sigmoid(logits[i]) : static_cast<double>(argmax_row(logits, i));
        const int pred = binary ? (score >= 0.5 ? 1 : 0) : argmax_row(logits, i);
        scores.push_back(score);
        predicted.push_back(pred);
        labels.push_back(y[i]);
        result.per_sample.push_back({series[idx[i]].id, score, 1.0});
      }
    } else {
      const std::vector<int> y = per_time_labels(b);
      std::vector<double> hits(b.size, 0.0), counts(b.size, 0.0);
      for (std::size_t row = 0; row < y.size(); ++row) {
        if (y[row] < 0) continue;
        const double score = binary ? sigmoid(logits[row]) : 0.0;
        const int pred = binary ? (score >= 0.5 ? 1 : 0) : argmax_row(logits, row);
        scores.push_back(score);
        predicted.push_back(pred);
        labels.push_back(y[row]);
        hits[row % b.size] += pred == y[row] ? 1.0 : 0.0;
        counts[row % b.size] += 1.0;
      }
      for (std::size_t i = 0; i < b.size; ++i) {
        result.per_sample.push_back({series[idx[i]].id, counts[i] > 0 ? hits[i] / counts[i] : 0.0, counts[i]});
      }
    }
  }

  if (!is_classification(task.task)) {
    if (n_total == 0) throw Error(ErrorCode::EmptyHeldout, "no heldout cells to score");
    result.metrics["mse"] = sq_total / n_total;
    result.metrics["heldout_cells"] = n_total;
    return result;
  }
  result.metrics["accuracy"] = accuracy(predicted, labels);
  if (model.config().n_classes == 1) result.metrics["auc"] = auc(scores, labels);
  return result;
}

// ---------------------------------------------------------------- training loop

std::string to_json_line(const MetricsRecord& r) {
  nlohmann::json j;
  j["epoch"] = r.epoch;
  j["loss"] = r.train_loss;
  j["metrics"] = r.metrics;
  j["lr"] = r.lr;
  j["seconds"] = r.seconds;
  return j.dump();
}

void validate(const FitConfig& c) {
  if (c.batch_size == 0) throw Error(ErrorCode::InvalidConfig, "batch_size must be positive");
  if (!(c.clip_norm > 0)) throw Error(ErrorCode::InvalidConfig, "clip_norm must be positive");
  validate(c.loss);
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

double metric_or_nan(const EvalResult& r, const std::string& key) {
  auto it = r.metrics.find(key);
  return it == r.metrics.end() ? NAN : it->second;
}

}  // namespace

MetricsRecord train_epoch(models::LatentOdeModel& model, std::span<const data::IrregularSeries> train,
                          std::span<const data::IrregularSeries> validation, const TaskSpec& task,
                          const FitConfig& config, AdamaxState& optimizer, std::size_t epoch,
                          const data::NormStats* stats) {
  if (train.empty()) throw Error(ErrorCode::EmptySeries, "empty training split");
  if (epoch == 0) throw Error(ErrorCode::InvalidArgument, "training epochs are numbered from 1");
  const ParameterList params = model.parameters();
  const std::size_t e = epoch - 1;
  const std::vector<std::size_t> order = shuffled(train.size(), derive_seed(config.seed, "shuffle/" + std::to_string(e)));
  std::mt19937_64 rng(derive_seed(config.seed, "noise/" + std::to_string(e)));

  MetricsRecord rec;
  rec.epoch = epoch;
  rec.lr = learning_rate(optimizer, e);
  const auto start = Clock::now();
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < order.size(); i += config.batch_size) {
    const std::span<const std::size_t> idx(order.data() + i, std::min(config.batch_size, order.size() - i));
    const data::Batch batch = data::make_batch(train, idx);
    auto tape = Tape::create();
    const Tensor loss = batch_loss(model, batch, task, config.loss, e, rng, tape.get());
    zero_grad(params);
    tape->backward(loss);
    clip_grad_norm(params, config.clip_norm);
    adamax_step(optimizer, params, e);
    loss_sum += loss.item() * static_cast<double>(idx.size());
  }
  rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  rec.train_loss = loss_sum / static_cast<double>(train.size());
  if (!validation.empty()) rec.metrics = evaluate(model, validation, task, stats, config.batch_size).metrics;
  return rec;
}

double mean_loss(models::LatentOdeModel& model, std::span<const data::IrregularSeries> series, const TaskSpec& task,
                 const FitConfig& config, std::size_t epoch) {
  if (series.empty()) throw Error(ErrorCode::EmptySeries, "empty split");
  std::mt19937_64 rng(derive_seed(config.seed, "noise/" + std::to_string(epoch)));
  double sum = 0.0;
  for (const auto& idx : sequential_batches(series.size(), config.batch_size)) {
    const data::Batch batch = data::make_batch(series, idx);
    sum += batch_loss(model, batch, task, config.loss, epoch, rng, nullptr).item() * static_cast<double>(idx.size());
  }
  return sum / static_cast<double>(series.size());
}

void fit(models::LatentOdeModel& model, std::span<const data::IrregularSeries> train,
         std::span<const data::IrregularSeries> validation, const TaskSpec& task, const FitConfig& config,
         FitState& state, const data::NormStats* stats, const EpochCallback& on_epoch) {
  validate(config);
  if (train.empty()) throw Error(ErrorCode::EmptySeries, "empty training split");
  const auto val = validation.empty() ? train : validation;
  const std::string key = primary_metric(task.task, model.config().n_classes);
  const bool lower = lower_is_better(task.task);
  auto better = [&](double v) {
    if (std::isnan(v)) return false;
    if (!state.best_metric) return true;
    return lower ? v < *state.best_metric : v > *state.best_metric;
  };

  if (state.epoch == 0 && !state.best_metric) {
    MetricsRecord rec;
    const auto start = Clock::now();
    rec.epoch = 0;
    rec.train_loss = mean_loss(model, train, task, config, 0);
    rec.metrics = evaluate(model, val, task, stats, config.batch_size).metrics;
    rec.lr = learning_rate(state.optimizer, 0);
    rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    const double v = rec.metrics.count(key) ? rec.metrics.at(key) : NAN;
    const bool improved = better(v);
    if (improved) state.best_metric = v;
    state.best_epoch = 0;
    state.since_best = 0;
    if (on_epoch) on_epoch(rec, improved);
  }

  for (std::size_t epoch = state.epoch + 1; epoch <= config.epochs; ++epoch) {
    if (state.since_best >= config.patience) break;
    MetricsRecord rec = train_epoch(model, train, val, task, config, state.optimizer, epoch, stats);
    const double v = metric_or_nan(EvalResult{rec.metrics, {}}, key);
    const bool improved = better(v);
    state.epoch = epoch;
    if (improved) {
      state.best_metric = v;
      state.best_epoch = epoch;
      state.since_best = 0;
    } else {
      ++state.since_best;
    }
    if (on_epoch) on_epoch(rec, improved);
  }
}

}  // namespace tempo::training
