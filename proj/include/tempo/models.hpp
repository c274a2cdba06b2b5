#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tempo/data.hpp"
#include "tempo/ode.hpp"
#include "tempo/temporal.hpp"

namespace tempo::models {

/// Stack of dense layers defining a vector field on the state space; tanh
/// follows every layer, the last one included. With temporal layers the
/// weights are rebuilt at the time of each call.
class OdeFuncNet {
 public:
  OdeFuncNet(std::string name, std::size_t dim, std::size_t units, std::size_t layers, bool temporal,
             const TemporalOptions& options, std::mt19937_64& rng);
  /// Explicit layer stack (widths[0] = widths.back() = state width).
  OdeFuncNet(std::string name, const std::vector<std::size_t>& widths, bool temporal,
             const TemporalOptions& options, std::mt19937_64& rng);

  std::size_t dim() const { return dim_; }
  bool temporal() const { return temporal_; }
  std::size_t depth() const { return layers_.size(); }
  WeightLayer& layer(std::size_t i) { return *layers_[i]; }
  ParameterList parameters();

  Tensor forward(double t, const Tensor& h, Tape* tape);
  ode::Rhs rhs(Tape* tape);

 private:
  std::size_t dim_;
  bool temporal_;
  std::vector<std::unique_ptr<WeightLayer>> layers_;
};

Tensor ode_func_forward(OdeFuncNet& net, double t, const Tensor& h, Tape* tape = nullptr);

/// GRU with reset/update/candidate gates. Inputs are the observed values
/// concatenated with their mask.
class GruCell {
 public:
  GruCell(std::string name, std::size_t features, std::size_t hidden, bool temporal, const TemporalOptions& options,
          std::mt19937_64& rng);

  std::size_t features() const { return features_; }
  std::size_t hidden() const { return hidden_; }
  ParameterList parameters();

  struct Gates {
    Tensor reset, update, candidate, hidden;
  };
  /// Raw GRU step without the skip rule.
  Gates step(const Tensor& h, const Tensor& x, const Tensor& mask, double t, Tape* tape);
  /// GRU step; rows whose mask is entirely zero keep their previous hidden state.
  Tensor update(const Tensor& h, const Tensor& x, const Tensor& mask, double t, Tape* tape);

 private:
  std::size_t features_, hidden_;
  std::unique_ptr<WeightLayer> in_reset_, in_update_, in_cand_;
  std::unique_ptr<WeightLayer> hid_reset_, hid_update_, hid_cand_;
};

Tensor gru_update(GruCell& cell, const Tensor& h, const Tensor& x, const Tensor& mask, double t = 0.0,
                  Tape* tape = nullptr);

enum class ClassifierInput { z0, final_latent, pooled };
std::string to_string(ClassifierInput c);
ClassifierInput parse_classifier_input(const std::string& s);

struct ModelConfig {
  std::size_t latent_dim = 4;
  std::size_t encoder_hidden = 8;  // GRU hidden width = encoder ODE state width
  std::size_t encoder_ode_units = 8;
  std::size_t encoder_ode_layers = 2;
  std::size_t decoder_ode_units = 8;
  std::size_t decoder_ode_layers = 2;
  bool temporal = true;          // temporal weights in the ODE functions
  bool temporal_gru = false;     // also in the GRU weight matrices
  TemporalOptions temporal_options;
  std::size_t n_classes = 0;     // 0 = no task head
  ClassifierInput classifier_input = ClassifierInput::z0;
};

struct Posterior {
  Tensor mu;     // B×L
  Tensor sigma;  // B×L, strictly positive
};

class OdeRnnEncoder {
 public:
  OdeRnnEncoder(const ModelConfig& config, std::size_t features, std::mt19937_64& rng);

  GruCell& gru() { return gru_; }
  OdeFuncNet& dynamics() { return dynamics_; }
  StaticLayer& mu_head() { return mu_head_; }
  StaticLayer& sigma_head() { return sigma_head_; }

 private:
  GruCell gru_;
  OdeFuncNet dynamics_;
  StaticLayer mu_head_;
  StaticLayer sigma_head_;
};

class LatentOdeModel {
 public:
  LatentOdeModel(const ModelConfig& config, std::size_t features, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t features() const { return features_; }
  std::size_t latent_dim() const { return config_.latent_dim; }

  OdeRnnEncoder& encoder() { return encoder_; }
  OdeFuncNet& decoder_dynamics() { return decoder_; }
  StaticLayer& output_proj() { return output_proj_; }
  StaticLayer* task_head() { return task_head_ ? &*task_head_ : nullptr; }

  /// Solver used by both the encoder and the decoder.
  ode::SolverConfig solver;

  /// (component path, parameters) in a fixed order.
  std::vector<std::pair<std::string, ParameterList>> components();
  ParameterList parameters();

 private:
  ModelConfig config_;
  std::size_t features_;
  OdeRnnEncoder encoder_;
  OdeFuncNet decoder_;
  StaticLayer output_proj_;
  std::optional<StaticLayer> task_head_;
};

/// Runs the ODE-RNN latest-first over every batch time that carries an
/// observation (at or before cutoff when given), then evolves the hidden state
/// back to the batch's first time. Returns posterior parameters at that time.
Posterior encode(LatentOdeModel& model, const data::Batch& batch, Tape* tape = nullptr,
                 std::optional<double> cutoff = std::nullopt);
Posterior encode(LatentOdeModel& model, const data::IrregularSeries& series, Tape* tape = nullptr,
                 std::optional<double> cutoff = std::nullopt);

/// mu + sigma∘noise.
Tensor sample_z0(const Tensor& mu, const Tensor& sigma, const Tensor& noise);

struct Trajectory {
  std::vector<Tensor> latents;  // per time, B×L
  std::vector<Tensor> outputs;  // per time, B×D
};

/// Solves the decoder ODE from z0 (at t0) through the ascending times and projects to feature space.
Trajectory decode_batch(LatentOdeModel& model, const Tensor& z0, double t0, std::span<const double> times,
                        Tape* tape = nullptr);
/// Single-sample decode: z0 of L entries at times.front(); returns |times|×D.
Tensor decode(LatentOdeModel& model, const Tensor& z0, std::span<const double> times, Tape* tape = nullptr);

/// Affine task head on latents (B×L) → logits (B×C).
Tensor classify(LatentOdeModel& model, const Tensor& z, Tape* tape = nullptr);

struct ParamCount {
  std::size_t total = 0;
  std::map<std::string, std::size_t> breakdown;  // component path → count
};

ParamCount param_count(LatentOdeModel& model);
std::size_t param_count(const ParameterList& params);

}  // namespace tempo::models
