#pragma once

// Time-dependent layer weights. A TemporalWeightLayer stores base weights w
// (flattened to length N = d_in·d_out) plus coupling and timing parameters,
// and rebuilds its effective weight matrix at every time t:
//
//   w'_i(t) = Σ_j (K_ij / N) · sin( α·t·(w_i − w_j) + β·t + γ )
//
// The result depends only on pairwise differences of the base weights, so it
// behaves like a bank of coupled phase oscillators whose phases are driven by
// the solver time.

#include <cstdint>
#include <memory>
#include <random>
#include <string>

#include "tempo/kernels.hpp"
#include "tempo/tensor.hpp"

namespace tempo {

using kernels::CouplingMode;
using kernels::ScaleEval;

enum class RangeMode { symmetric, unit };  // [-1,1]-style or mapped to [0,1]

enum class EvalPolicy { automatic, streamed, materialized, factored };

struct TemporalOptions {
  CouplingMode coupling = CouplingMode::rank1;
  RangeMode range = RangeMode::symmetric;
  /// Use W + S(W,t) instead of S(W,t).
  bool residual = false;
  /// One time scale per weight instead of one per layer.
  bool per_weight_rate = false;
  /// Full coupling stores N² values; refuse it above this N.
  std::size_t full_coupling_cap = 4096;
  EvalPolicy eval = EvalPolicy::automatic;
  /// automatic policy materializes pairwise terms up to this N, streams above.
  std::size_t materialize_cap = 4096;
};

std::string to_string(CouplingMode mode);
std::string to_string(RangeMode mode);
std::string to_string(EvalPolicy policy);
CouplingMode parse_coupling(const std::string& s);
RangeMode parse_range(const std::string& s);
EvalPolicy parse_eval(const std::string& s);

/// Common interface of the dense layers used inside ODE functions and GRUs.
class WeightLayer {
 public:
  virtual ~WeightLayer() = default;

  virtual std::size_t in_dim() const = 0;
  virtual std::size_t out_dim() const = 0;
  virtual bool temporal() const = 0;

  /// Effective d_in×d_out weight matrix at time t.
  virtual Tensor weight(double t, Tape* tape) = 0;
  virtual Parameter& bias() = 0;
  virtual ParameterList parameters() = 0;

  /// h·W(t) + bias for h of shape batch×d_in.
  Tensor forward(const Tensor& h, double t, Tape* tape);
};

class StaticLayer final : public WeightLayer {
 public:
  StaticLayer(std::string name, std::size_t d_in, std::size_t d_out, std::mt19937_64& rng);

  std::size_t in_dim() const override { return d_in_; }
  std::size_t out_dim() const override { return d_out_; }
  bool temporal() const override { return false; }
  Tensor weight(double t, Tape* tape) override;
  Parameter& bias() override { return bias_; }
  ParameterList parameters() override { return {&weight_, &bias_}; }

  Parameter& weight_param() { return weight_; }

 private:
  std::size_t d_in_, d_out_;
  Parameter weight_;
  Parameter bias_;
};

class TemporalWeightLayer final : public WeightLayer {
 public:
  TemporalWeightLayer(std::string name, std::size_t d_in, std::size_t d_out, const TemporalOptions& options,
                      std::mt19937_64& rng);

  std::size_t in_dim() const override { return d_in_; }
  std::size_t out_dim() const override { return d_out_; }
  bool temporal() const override { return true; }
  Tensor weight(double t, Tape* tape) override;
  Parameter& bias() override { return bias_; }
  ParameterList parameters() override;

  std::size_t weight_count() const { return d_in_ * d_out_; }
  const TemporalOptions& options() const { return options_; }
  /// Evaluation strategy the layer's options resolve to for its size.
  ScaleEval resolved_eval() const;

  Parameter& base() { return base_; }
  Parameter& coupling() { return coupling_; }
  Parameter& freq_scale() { return freq_scale_; }    // α
  Parameter& phase_rate() { return phase_rate_; }    // β
  Parameter& phase_offset() { return phase_offset_; }  // γ

 private:
  std::size_t d_in_, d_out_;
  TemporalOptions options_;
  Parameter base_;
  Parameter coupling_;
  Parameter freq_scale_;
  Parameter phase_rate_;
  Parameter phase_offset_;
  Parameter bias_;
};

/// Reconstructed d_in×d_out weights at time t (a scalar tensor, which may be
/// tracked so the result is differentiable in t as well).
Tensor scale(TemporalWeightLayer& layer, const Tensor& t, Tape* tape);
Tensor scale(TemporalWeightLayer& layer, double t, Tape* tape);

Tensor static_forward(StaticLayer& layer, const Tensor& h, Tape* tape = nullptr);

struct ScaleCost {
  std::size_t pairwise_terms = 0;  // sine terms evaluated per forward pass
  std::size_t flops = 0;           // arithmetic + trig operations per forward pass
  std::size_t buffer_entries = 0;  // peak scratch doubles
};

/// Operation and memory footprint of one forward evaluation of the layer's
/// scaling function under the given strategy.
ScaleCost scale_complexity_probe(const TemporalWeightLayer& layer, ScaleEval eval);
ScaleCost scale_complexity_probe(const TemporalWeightLayer& layer);

}  // namespace tempo
