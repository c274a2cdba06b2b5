#include "tempo/models.hpp"

#include <numeric>

#include "tempo/ops.hpp"

namespace tempo::models {

namespace {

std::unique_ptr<WeightLayer> make_layer(const std::string& name, std::size_t d_in, std::size_t d_out, bool temporal,
                                        const TemporalOptions& options, std::mt19937_64& rng) {
  if (temporal) return std::make_unique<TemporalWeightLayer>(name, d_in, d_out, options, rng);
  return std::make_unique<StaticLayer>(name, d_in, d_out, rng);
}

std::vector<std::size_t> widths_for(std::size_t dim, std::size_t units, std::size_t layers) {
  if (layers == 0) throw Error(ErrorCode::InvalidConfig, "ODE function needs at least one layer");
  std::vector<std::size_t> w{dim};
  for (std::size_t i = 1; i < layers; ++i) w.push_back(units);
  w.push_back(dim);
  return w;
}

void append(ParameterList& dst, const ParameterList& src) { dst.insert(dst.end(), src.begin(), src.end()); }

}  // namespace

// ---------------------------------------------------------------- OdeFuncNet

OdeFuncNet::OdeFuncNet(std::string name, std::size_t dim, std::size_t units, std::size_t layers, bool temporal,
                       const TemporalOptions& options, std::mt19937_64& rng)
    : OdeFuncNet(std::move(name), widths_for(dim, units, layers), temporal, options, rng) {}

OdeFuncNet::OdeFuncNet(std::string name, const std::vector<std::size_t>& widths, bool temporal,
                       const TemporalOptions& options, std::mt19937_64& rng)
    : dim_(widths.front()), temporal_(temporal) {
  if (widths.size() < 2 || widths.front() != widths.back()) {
    throw Error(ErrorCode::InvalidConfig, name + ": widths must start and end at the state width");
  }
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    layers_.push_back(
        make_layer(name + ".layer" + std::to_string(i), widths[i], widths[i + 1], temporal, options, rng));
  }
}

ParameterList OdeFuncNet::parameters() {
  ParameterList out;
  for (auto& l : layers_) append(out, l->parameters());
  return out;
}

Tensor OdeFuncNet::forward(double t, const Tensor& h, Tape* tape) {
  if (h.rank() != 2 || h.cols() != dim_) {
    throw Error(ErrorCode::ShapeMismatch,
                "ODE function expects batch x " + std::to_string(dim_) + ", got " + shape_string(h.shape()));
  }
  Tensor x = h;
  for (auto& l : layers_) x = ops::tanh(l->forward(x, t, tape));
  return x;
}

ode::Rhs OdeFuncNet::rhs(Tape* tape) {
  return [this, tape](double t, const Tensor& h) { return forward(t, h, tape); };
}

Tensor ode_func_forward(OdeFuncNet& net, double t, const Tensor& h, Tape* tape) {
  if (h.rank() == 1) return net.forward(t, h.reshaped({1, h.size()}), tape).reshaped({net.dim()});
  return net.forward(t, h, tape);
}

// ---------------------------------------------------------------- GRU

GruCell::GruCell(std::string name, std::size_t features, std::size_t hidden, bool temporal,
                 const TemporalOptions& options, std::mt19937_64& rng)
    : features_(features), hidden_(hidden) {
  const std::size_t in = 2 * features;
  in_reset_ = make_layer(name + ".in_reset", in, hidden, temporal, options, rng);
  in_update_ = make_layer(name + ".in_update", in, hidden, temporal, options, rng);
  in_cand_ = make_layer(name + ".in_candidate", in, hidden, temporal, options, rng);
  hid_reset_ = make_layer(name + ".hidden_reset", hidden, hidden, temporal, options, rng);
  hid_update_ = make_layer(name + ".hidden_update", hidden, hidden, temporal, options, rng);
  hid_cand_ = make_layer(name + ".hidden_candidate", hidden, hidden, temporal, options, rng);
}

ParameterList GruCell::parameters() {
  ParameterList out;
  for (auto* l : {in_reset_.get(), in_update_.get(), in_cand_.get(), hid_reset_.get(), hid_update_.get(),
                  hid_cand_.get()}) {
    append(out, l->parameters());
  }
  return out;
}

GruCell::Gates GruCell::step(const Tensor& h, const Tensor& x, const Tensor& mask, double t, Tape* tape) {
  if (x.shape() != mask.shape() || x.rank() != 2 || x.cols() != features_ || h.rank() != 2 ||
      h.cols() != hidden_ || h.rows() != x.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "GRU step: h " + shape_string(h.shape()) + ", x " +
                                              shape_string(x.shape()) + ", mask " + shape_string(mask.shape()));
  }
  const Tensor input = ops::concat_cols(ops::mul(x, mask), mask);
  Gates g;
  g.reset = ops::sigmoid(ops::add(in_reset_->forward(input, t, tape), hid_reset_->forward(h, t, tape)));
  g.update = ops::sigmoid(ops::add(in_update_->forward(input, t, tape), hid_update_->forward(h, t, tape)));
  g.candidate = ops::tanh(
      ops::add(in_cand_->forward(input, t, tape), ops::mul(g.reset, hid_cand_->forward(h, t, tape))));
  // (1 − z)∘n + z∘h
  g.hidden = ops::add(g.candidate, ops::mul(g.update, ops::sub(h, g.candidate)));
  return g;
}

Tensor GruCell::update(const Tensor& h, const Tensor& x, const Tensor& mask, double t, Tape* tape) {
  const std::size_t rows = mask.rows();
  std::vector<bool> observed(rows, false);
  std::size_t n_observed = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t f = 0; f < mask.cols(); ++f) observed[r] = observed[r] || mask.at(r, f) != 0.0;
    n_observed += observed[r] ? 1 : 0;
  }
  if (n_observed == 0) return h;
  const Tensor h_new = step(h, x, mask, t, tape).hidden;
  if (n_observed == rows) return h_new;

  Buffer keep(rows * hidden_), take(rows * hidden_);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < hidden_; ++j) {
      take[r * hidden_ + j] = observed[r] ? 1.0 : 0.0;
      keep[r * hidden_ + j] = observed[r] ? 0.0 : 1.0;
    }
  }
  return ops::add(ops::mul(h_new, Tensor({rows, hidden_}, std::move(take))),
                  ops::mul(h, Tensor({rows, hidden_}, std::move(keep))));
}

Tensor gru_update(GruCell& cell, const Tensor& h, const Tensor& x, const Tensor& mask, double t, Tape* tape) {
  return cell.update(h, x, mask, t, tape);
}

std::string to_string(ClassifierInput c) {
  switch (c) {
    case ClassifierInput::z0: return "z0";
    case ClassifierInput::final_latent: return "final";
    case ClassifierInput::pooled: return "pooled";
  }
  return "z0";
}

ClassifierInput parse_classifier_input(const std::string& s) {
  if (s == "z0") return ClassifierInput::z0;
  if (s == "final") return ClassifierInput::final_latent;
  if (s == "pooled") return ClassifierInput::pooled;
  throw Error(ErrorCode::InvalidConfig, "unknown classifier input '" + s + "'");
}

// ---------------------------------------------------------------- Latent ODE

OdeRnnEncoder::OdeRnnEncoder(const ModelConfig& c, std::size_t features, std::mt19937_64& rng)
    : gru_("encoder.gru", features, c.encoder_hidden, c.temporal && c.temporal_gru, c.temporal_options, rng),
      dynamics_("encoder.dynamics", c.encoder_hidden, c.encoder_ode_units, c.encoder_ode_layers, c.temporal,
                c.temporal_options, rng),
      mu_head_("encoder.mu_head", c.encoder_hidden, c.latent_dim, rng),
      sigma_head_("encoder.sigma_head", c.encoder_hidden, c.latent_dim, rng) {}

namespace {

std::mt19937_64& seeded(std::mt19937_64& rng, std::uint64_t seed) {
  rng.seed(seed);
  return rng;
}

thread_local std::mt19937_64 init_rng;

}  // namespace

LatentOdeModel::LatentOdeModel(const ModelConfig& config, std::size_t features, std::uint64_t seed)
    : config_(config),
      features_(features),
      encoder_(config, features, seeded(init_rng, seed)),
      decoder_("decoder.dynamics", config.latent_dim, config.decoder_ode_units, config.decoder_ode_layers,
               config.temporal, config.temporal_options, init_rng),
      output_proj_("output_proj", config.latent_dim, features, init_rng) {
  if (features == 0 || config.latent_dim == 0 || config.encoder_hidden == 0) {
    throw Error(ErrorCode::InvalidConfig, "model widths must be positive");
  }
  if (config.n_classes > 0) task_head_.emplace("task_head", config.latent_dim, config.n_classes, init_rng);
}

std::vector<std::pair<std::string, ParameterList>> LatentOdeModel::components() {
  std::vector<std::pair<std::string, ParameterList>> out{
      {"encoder.gru", encoder_.gru().parameters()},
      {"encoder.dynamics", encoder_.dynamics().parameters()},
      {"encoder.mu_head", encoder_.mu_head().parameters()},
      {"encoder.sigma_head", encoder_.sigma_head().parameters()},
      {"decoder.dynamics", decoder_.parameters()},
      {"output_proj", output_proj_.parameters()},
  };
  if (task_head_) out.emplace_back("task_head", task_head_->parameters());
  return out;
}

ParameterList LatentOdeModel::parameters() {
  ParameterList out;
  for (auto& [name, params] : components()) append(out, params);
  return out;
}

Posterior encode(LatentOdeModel& model, const data::Batch& batch, Tape* tape, std::optional<double> cutoff) {
  auto& enc = model.encoder();
  if (batch.features != model.features()) {
    throw Error(ErrorCode::ShapeMismatch, "batch has " + std::to_string(batch.features) + " features, model " +
                                              std::to_string(model.features()));
  }
  std::vector<std::size_t> obs;
  for (std::size_t k = 0; k < batch.times.size(); ++k) {
    if (cutoff && batch.times[k] > *cutoff) continue;
    if (batch.any_observed(k)) obs.push_back(k);
  }
  if (obs.empty()) throw Error(ErrorCode::EmptySeries, "no observations to encode");

  const ode::Rhs rhs = enc.dynamics().rhs(tape);
  Tensor h = Tensor::zeros({batch.size, enc.gru().hidden()});
  std::optional<double> prev;
  for (auto it = obs.rbegin(); it != obs.rend(); ++it) {
    const double t = batch.times[*it];
    if (prev) h = ode::integrate(rhs, h, *prev, t, model.solver);
    h = enc.gru().update(h, batch.observed_values(*it), batch.observed_mask(*it), t, tape);
    prev = t;
  }
  if (*prev > batch.times.front()) h = ode::integrate(rhs, h, *prev, batch.times.front(), model.solver);

  Posterior post;
  post.mu = enc.mu_head().forward(h, 0.0, tape);
  post.sigma = ops::add(ops::softplus(enc.sigma_head().forward(h, 0.0, tape)), 1e-4);
  return post;
}

Posterior encode(LatentOdeModel& model, const data::IrregularSeries& series, Tape* tape,
                 std::optional<double> cutoff) {
  if (series.observed_count() == 0) throw Error(ErrorCode::EmptySeries, "series " + series.id + " has no observations");
  const data::IrregularSeries one[] = {series};
  return encode(model, data::make_batch(one), tape, cutoff);
}

Tensor sample_z0(const Tensor& mu, const Tensor& sigma, const Tensor& noise) {
  if (mu.shape() != sigma.shape() || mu.shape() != noise.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "sample_z0 shapes differ");
  }
  return ops::add(mu, ops::mul(sigma, noise));
}

Trajectory decode_batch(LatentOdeModel& model, const Tensor& z0, double t0, std::span<const double> times,
                        Tape* tape) {
  if (z0.rank() != 2 || z0.cols() != model.latent_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "z0 must be batch x latent, got " + shape_string(z0.shape()));
  }
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (times[i] < times[i - 1]) throw Error(ErrorCode::NonMonotoneTimes, "decode times must ascend");
  }
  ode::OdeProblem problem{model.decoder_dynamics().rhs(tape), z0, t0, times.empty() ? t0 : times.back()};
  Trajectory traj;
  traj.latents = ode::odesolve_at(problem, times, model.solver);
  traj.outputs.reserve(traj.latents.size());
  for (const auto& z : traj.latents) traj.outputs.push_back(model.output_proj().forward(z, 0.0, tape));
  return traj;
}

Tensor decode(LatentOdeModel& model, const Tensor& z0, std::span<const double> times, Tape* tape) {
  if (times.empty()) throw Error(ErrorCode::InvalidArgument, "decode needs at least one time");
  const Tensor z = z0.rank() == 1 ? z0.reshaped({1, z0.size()}) : z0;
  if (z.rows() != 1) throw Error(ErrorCode::ShapeMismatch, "decode takes a single latent; use decode_batch");
  const Trajectory traj = decode_batch(model, z, times.front(), times, tape);
  return ops::stack_rows(traj.outputs);
}

Tensor classify(LatentOdeModel& model, const Tensor& z, Tape* tape) {
  StaticLayer* head = model.task_head();
  if (!head) throw Error(ErrorCode::NoTaskHead, "model has no task head");
  const Tensor z2 = z.rank() == 1 ? z.reshaped({1, z.size()}) : z;
  return head->forward(z2, 0.0, tape);
}

std::size_t param_count(const ParameterList& params) {
  return std::accumulate(params.begin(), params.end(), std::size_t{0},
                         [](std::size_t acc, const Parameter* p) { return acc + p->size(); });
}

ParamCount param_count(LatentOdeModel& model) {
  ParamCount pc;
  for (auto& [name, params] : model.components()) {
    const std::size_t n = param_count(params);
    pc.breakdown[name] = n;
    pc.total += n;
  }
  return pc;
}

}  // namespace tempo::models
