#include "tempo/temporal.hpp"

#include <cmath>
#include <numbers>

#include "tempo/ops.hpp"

namespace tempo {

std::string to_string(CouplingMode mode) {
  switch (mode) {
    case CouplingMode::scalar: return "scalar";
    case CouplingMode::rank1: return "rank1";
    case CouplingMode::full: return "full";
  }
  return "rank1";
}

std::string to_string(RangeMode mode) { return mode == RangeMode::unit ? "unit" : "signed"; }

std::string to_string(EvalPolicy policy) {
  switch (policy) {
    case EvalPolicy::automatic: return "auto";
    case EvalPolicy::streamed: return "streamed";
    case EvalPolicy::materialized: return "materialized";
    case EvalPolicy::factored: return "factored";
  }
  return "auto";
}

CouplingMode parse_coupling(const std::string& s) {
  if (s == "scalar") return CouplingMode::scalar;
  if (s == "rank1") return CouplingMode::rank1;
  if (s == "full") return CouplingMode::full;
  throw Error(ErrorCode::InvalidConfig, "unknown coupling mode '" + s + "'");
}

RangeMode parse_range(const std::string& s) {
  if (s == "signed") return RangeMode::symmetric;
  if (s == "unit") return RangeMode::unit;
  throw Error(ErrorCode::InvalidConfig, "unknown range mode '" + s + "'");
}

EvalPolicy parse_eval(const std::string& s) {
  if (s == "auto") return EvalPolicy::automatic;
  if (s == "streamed") return EvalPolicy::streamed;
  if (s == "materialized") return EvalPolicy::materialized;
  if (s == "factored") return EvalPolicy::factored;
  throw Error(ErrorCode::InvalidConfig, "unknown scale evaluation '" + s + "'");
}

namespace {

Tensor uniform(const Shape& shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Buffer v(shape_size(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(shape, std::move(v));
}

}  // namespace

Tensor WeightLayer::forward(const Tensor& h, double t, Tape* tape) {
  if (h.rank() != 2 || h.cols() != in_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "layer expects batch x " + std::to_string(in_dim()) + ", got " +
                                              shape_string(h.shape()));
  }
  return ops::add(ops::matmul(h, weight(t, tape)), use(bias(), tape));
}

// ---------------------------------------------------------------- StaticLayer

StaticLayer::StaticLayer(std::string name, std::size_t d_in, std::size_t d_out, std::mt19937_64& rng)
    : d_in_(d_in), d_out_(d_out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
  weight_ = Parameter(name + ".weight", uniform({d_in, d_out}, bound, rng));
  bias_ = Parameter(name + ".bias", uniform({d_out}, bound, rng));
}

Tensor StaticLayer::weight(double, Tape* tape) { return use(weight_, tape); }

Tensor static_forward(StaticLayer& layer, const Tensor& h, Tape* tape) {
  const Tensor h2 = h.rank() == 1 ? h.reshaped({1, h.size()}) : h;
  Tensor out = layer.forward(h2, 0.0, tape);
  return h.rank() == 1 ? out.reshaped({layer.out_dim()}) : out;
}

// ---------------------------------------------------------------- TemporalWeightLayer

TemporalWeightLayer::TemporalWeightLayer(std::string name, std::size_t d_in, std::size_t d_out,
                                         const TemporalOptions& options, std::mt19937_64& rng)
    : d_in_(d_in), d_out_(d_out), options_(options) {
  const std::size_t n = d_in * d_out;
  if (n == 0) throw Error(ErrorCode::InvalidConfig, name + ": layer has no weights");
  if (options.coupling == CouplingMode::full && n > options.full_coupling_cap) {
    throw Error(ErrorCode::InvalidConfig, name + ": full coupling needs N <= " +
                                              std::to_string(options.full_coupling_cap) + ", N = " +
                                              std::to_string(n));
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
  base_ = Parameter(name + ".W", uniform({d_in, d_out}, bound, rng));

  Shape k_shape;
  switch (options.coupling) {
    case CouplingMode::scalar: k_shape = {}; break;
    case CouplingMode::rank1: k_shape = {n}; break;
    case CouplingMode::full: k_shape = {n, n}; break;
  }
  coupling_ = Parameter(name + ".K", Tensor::full(k_shape, 1.0));
  freq_scale_ = Parameter(name + ".alpha", Tensor::full(options.per_weight_rate ? Shape{n} : Shape{}, 1.0));
  phase_rate_ = Parameter(name + ".beta", Tensor::scalar(0.0));
  phase_offset_ = Parameter(name + ".gamma", Tensor::scalar(std::numbers::pi / 2));
  bias_ = Parameter(name + ".bias", uniform({d_out}, bound, rng));
}

ParameterList TemporalWeightLayer::parameters() {
  return {&base_, &coupling_, &freq_scale_, &phase_rate_, &phase_offset_, &bias_};
}

ScaleEval TemporalWeightLayer::resolved_eval() const {
  switch (options_.eval) {
    case EvalPolicy::streamed: return ScaleEval::streamed;
    case EvalPolicy::materialized: return ScaleEval::materialized;
    case EvalPolicy::factored: return ScaleEval::factored;
    case EvalPolicy::automatic: break;
  }
  if (!options_.per_weight_rate) return ScaleEval::factored;
  return weight_count() <= options_.materialize_cap ? ScaleEval::materialized : ScaleEval::streamed;
}

Tensor TemporalWeightLayer::weight(double t, Tape* tape) { return scale(*this, t, tape); }

Tensor scale(TemporalWeightLayer& layer, const Tensor& t, Tape* tape) {
  if (!t.is_scalar()) throw Error(ErrorCode::NotScalar, "scale time must be a scalar");
  const double tv = t.item();
  if (!std::isfinite(tv)) throw Error(ErrorCode::NonFinite, "scale time");

  const Tensor base = use(layer.base(), tape);
  const Tensor coupling = use(layer.coupling(), tape);
  const Tensor alpha = use(layer.freq_scale(), tape);
  const Tensor beta = use(layer.phase_rate(), tape);
  const Tensor gamma = use(layer.phase_offset(), tape);

  Buffer rate(alpha.size());
  for (std::size_t i = 0; i < rate.size(); ++i) rate[i] = alpha[i] * tv;
  const double phase = beta.item() * tv + gamma.item();

  const ScaleEval eval = layer.resolved_eval();
  const CouplingMode mode = layer.options().coupling;
  kernels::ScaleArgs args{base.data(), mode, coupling.data(), rate, phase};
  Buffer out = kernels::scale_forward(args, eval);

  const Shape shape{layer.in_dim(), layer.out_dim()};
  Tensor w_scaled;
  const Tensor inputs[] = {base, coupling, alpha, beta, gamma, t};
  if (auto rec = common_tape(inputs)) {
    w_scaled = rec->record(
        shape, std::move(out), inputs,
        [wbuf = base.buffer(), kbuf = coupling.buffer(), abuf = alpha.buffer(), beta_v = beta.item(), tv, phase,
         rate, mode, eval](std::span<const double> g, std::span<Buffer* const> gin) {
          kernels::ScaleArgs a{*wbuf, mode, *kbuf, rate, phase};
          const kernels::ScaleGrads sg = kernels::scale_backward(a, g, eval);
          auto accumulate = [](Buffer* dst, const Buffer& src) {
            if (!dst) return;
            for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
          };
          accumulate(gin[0], sg.weights);
          accumulate(gin[1], sg.coupling);
          if (gin[2]) {
            for (std::size_t i = 0; i < sg.rate.size(); ++i) (*gin[2])[i] += sg.rate[i] * tv;
          }
          if (gin[3]) (*gin[3])[0] += sg.phase * tv;
          if (gin[4]) (*gin[4])[0] += sg.phase;
          if (gin[5]) {
            double dt = sg.phase * beta_v;
            for (std::size_t i = 0; i < sg.rate.size(); ++i) dt += sg.rate[i] * (*abuf)[i];
            (*gin[5])[0] += dt;
          }
        });
  } else {
    w_scaled = Tensor(shape, std::move(out));
  }

  if (layer.options().range == RangeMode::unit) w_scaled = ops::scale(ops::add(w_scaled, 1.0), 0.5);
  if (layer.options().residual) w_scaled = ops::add(base, w_scaled);
  return w_scaled;
}

Tensor scale(TemporalWeightLayer& layer, double t, Tape* tape) { return scale(layer, Tensor::scalar(t), tape); }

ScaleCost scale_complexity_probe(const TemporalWeightLayer& layer, ScaleEval eval) {
  const std::size_t n = layer.weight_count();
  const bool full = layer.options().coupling == CouplingMode::full;
  ScaleCost cost;
  if (eval == ScaleEval::factored && !layer.options().per_weight_rate) {
    // 2 ops for the two angles + 4 trig per weight, 2 running sums, the
    // coupling products, then 4 ops to combine each output.
    cost.pairwise_terms = 0;
    cost.flops = 6 * n + 2 * n + (full ? 4 * n * n : 2 * n) + 4 * n;
    cost.buffer_entries = 6 * n;
    return cost;
  }
  // Each pairwise term: difference, rate multiply, phase add, sine, coupling
  // multiply, accumulate. Plus one 1/N multiply per output.
  cost.pairwise_terms = n * n;
  cost.flops = 6 * n * n + n;
  cost.buffer_entries = eval == ScaleEval::materialized ? n * n : n;
  return cost;
}

ScaleCost scale_complexity_probe(const TemporalWeightLayer& layer) {
  return scale_complexity_probe(layer, layer.resolved_eval());
}

}  // namespace tempo
