#include "tempo/ode.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "tempo/ops.hpp"

namespace tempo::ode {

std::string to_string(Method m) { return m == Method::rk4 ? "rk4" : "dopri5"; }

Method parse_method(const std::string& s) {
  if (s == "rk4") return Method::rk4;
  if (s == "dopri5") return Method::dopri5;
  throw Error(ErrorCode::InvalidConfig, "unknown solver method '" + s + "'");
}

void validate(const SolverConfig& c) {
  if (!(c.step > 0) || !(c.rtol > 0) || !(c.atol > 0) || !(c.initial_step > 0) || c.max_steps == 0) {
    throw Error(ErrorCode::InvalidConfig, "solver settings must all be positive");
  }
}

namespace {

Tensor checked_rhs(const Rhs& rhs, double t, const Tensor& h, SolveStats* stats) {
  Tensor d = rhs(t, h);
  if (d.shape() != h.shape()) {
    throw Error(ErrorCode::ShapeMismatch,
                "rhs returned " + shape_string(d.shape()) + " for state " + shape_string(h.shape()));
  }
  if (stats) ++stats->rhs_evals;
  return d;
}

Tensor rk4_step_impl(const Rhs& rhs, double t, const Tensor& h, double dt, SolveStats* stats) {
  const double half = 0.5 * dt;
  const Tensor k1 = checked_rhs(rhs, t, h, stats);
  const double c1[] = {half};
  const Tensor t1[] = {k1};
  const Tensor k2 = checked_rhs(rhs, t + half, ops::lincomb(h, c1, t1), stats);
  const Tensor t2[] = {k2};
  const Tensor k3 = checked_rhs(rhs, t + half, ops::lincomb(h, c1, t2), stats);
  const double c3[] = {dt};
  const Tensor t3[] = {k3};
  const Tensor k4 = checked_rhs(rhs, t + dt, ops::lincomb(h, c3, t3), stats);
  const double c[] = {dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0};
  const Tensor ks[] = {k1, k2, k3, k4};
  return ops::lincomb(h, c, ks);
}

// Forward-time fixed-step integration over [a, b], a <= b.
Tensor rk4_segment(const Rhs& rhs, const Tensor& h, double a, double b, const SolverConfig& config,
                   SolveStats* stats, std::size_t& steps_used) {
  const double span = b - a;
  if (span <= 0) return h;
  const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(span / config.step - 1e-9)));
  if (steps_used + n > config.max_steps) {
    throw Error(ErrorCode::MaxStepsExceeded, "rk4 needs " + std::to_string(steps_used + n) + " steps, cap " +
                                                 std::to_string(config.max_steps));
  }
  Tensor state = h;
  for (std::size_t k = 0; k < n; ++k) {
    const double t0 = a + span * static_cast<double>(k) / static_cast<double>(n);
    const double t1 = k + 1 == n ? b : a + span * static_cast<double>(k + 1) / static_cast<double>(n);
    state = rk4_step_impl(rhs, t0, state, t1 - t0, stats);
  }
  steps_used += n;
  if (stats) stats->accepted += n;
  return state;
}

// Dormand–Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

constexpr double kSafety = 0.9;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 5.0;
constexpr double kBeta = 0.04;           // PI memory exponent
constexpr double kAlpha = 0.2 - 0.75 * kBeta;

Tensor dopri5_segment(const Rhs& rhs, const Tensor& h, double a, double b, const SolverConfig& config,
                      SolveStats* stats, std::size_t& steps_used, std::size_t* accepted_out = nullptr,
                      std::size_t* rejected_out = nullptr) {
  const double span = b - a;
  if (span <= 0) return h;
  const double min_step = 1e-12 * span;
  double dt = std::min(config.initial_step, span / 10.0);
  double err_prev = 1e-4;
  bool last_rejected = false;
  std::size_t accepted = 0, rejected = 0;

  double t = a;
  Tensor y = h;
  Tensor k1 = checked_rhs(rhs, t, y, stats);
  while (t < b) {
    if (steps_used >= config.max_steps) {
      throw Error(ErrorCode::MaxStepsExceeded, "dopri5 exceeded " + std::to_string(config.max_steps) + " steps");
    }
    if (dt < min_step) throw Error(ErrorCode::StepUnderflow, "dopri5 step fell below 1e-12 of the span");
    const bool final_step = t + dt >= b;
    if (final_step) dt = b - t;
    ++steps_used;

    auto stage = [&](std::initializer_list<double> cs, std::initializer_list<Tensor> ks) {
      std::vector<double> coeffs;
      for (double c : cs) coeffs.push_back(c * dt);
      const std::vector<Tensor> terms(ks);
      return ops::lincomb(y, coeffs, terms);
    };
    const Tensor k2 = checked_rhs(rhs, t + c2 * dt, stage({a21}, {k1}), stats);
    const Tensor k3 = checked_rhs(rhs, t + c3 * dt, stage({a31, a32}, {k1, k2}), stats);
    const Tensor k4 = checked_rhs(rhs, t + c4 * dt, stage({a41, a42, a43}, {k1, k2, k3}), stats);
    const Tensor k5 = checked_rhs(rhs, t + c5 * dt, stage({a51, a52, a53, a54}, {k1, k2, k3, k4}), stats);
    const Tensor k6 = checked_rhs(rhs, t + dt, stage({a61, a62, a63, a64, a65}, {k1, k2, k3, k4, k5}), stats);
    const Tensor y_new = stage({b1, b3, b4, b5, b6}, {k1, k3, k4, k5, k6});
    const double t_new = final_step ? b : t + dt;
    const Tensor k7 = checked_rhs(rhs, t_new, y_new, stats);

    // RMS of the embedded error estimate relative to the per-component tolerance.
    const auto y0 = y.data();
    const auto y1 = y_new.data();
    double sq = 0.0;
    for (std::size_t i = 0; i < y0.size(); ++i) {
      const double e = dt * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
      const double sc = std::max(config.atol, config.rtol * std::max(std::abs(y0[i]), std::abs(y1[i])));
      sq += (e / sc) * (e / sc);
    }
    const double err = std::sqrt(sq / static_cast<double>(std::max<std::size_t>(1, y0.size())));

    if (err <= 1.0) {
      t = t_new;
      y = y_new;
      k1 = k7;
      ++accepted;
      double factor = kMaxFactor;
      if (err > 0) {
        factor = kSafety * std::pow(err, -kAlpha) * std::pow(err_prev, kBeta);
        factor = std::clamp(factor, kMinFactor, kMaxFactor);
      }
      if (last_rejected) factor = std::min(factor, 1.0);
      err_prev = std::max(err, 1e-4);
      last_rejected = false;
      dt *= factor;
    } else {
      ++rejected;
      last_rejected = true;
      dt *= std::max(kMinFactor, kSafety * std::pow(err, -0.2));
    }
  }
  if (stats) {
    stats->accepted += accepted;
    stats->rejected += rejected;
  }
  if (accepted_out) *accepted_out = accepted;
  if (rejected_out) *rejected_out = rejected;
  return y;
}

Tensor forward_segment(const Rhs& rhs, const Tensor& h, double a, double b, const SolverConfig& config,
                       SolveStats* stats, std::size_t& steps_used) {
  if (config.method == Method::rk4) return rk4_segment(rhs, h, a, b, config, stats, steps_used);
  return dopri5_segment(rhs, h, a, b, config, stats, steps_used);
}

}  // namespace

Tensor rk4_step(const Rhs& rhs, double t, const Tensor& h, double dt) {
  if (!(dt > 0)) throw Error(ErrorCode::InvalidArgument, "rk4_step needs dt > 0");
  return rk4_step_impl(rhs, t, h, dt, nullptr);
}

DopriResult dopri5_solve(const OdeProblem& problem, const SolverConfig& config) {
  validate(config);
  if (problem.t_end < problem.t_start) throw Error(ErrorCode::NonMonotoneTimes, "t_end before t_start");
  std::size_t used = 0;
  DopriResult r;
  r.state = dopri5_segment(problem.rhs, problem.h0, problem.t_start, problem.t_end, config, nullptr, used,
                           &r.steps, &r.rejected);
  return r;
}

Tensor integrate(const Rhs& rhs, const Tensor& h, double t_from, double t_to, const SolverConfig& config,
                 SolveStats* stats) {
  validate(config);
  std::size_t used = 0;
  if (t_to >= t_from) return forward_segment(rhs, h, t_from, t_to, config, stats, used);
  // s = −t runs forward; dh/ds = −f(−s, h).
  const Rhs reversed = [&rhs](double s, const Tensor& state) { return ops::neg(rhs(-s, state)); };
  return forward_segment(reversed, h, -t_from, -t_to, config, stats, used);
}

std::vector<Tensor> odesolve_at(const OdeProblem& problem, std::span<const double> output_times,
                                const SolverConfig& config, SolveStats* stats) {
  validate(config);
  std::vector<Tensor> out;
  out.reserve(output_times.size());
  double t = problem.t_start;
  Tensor state = problem.h0;
  std::size_t used = 0;
  for (double target : output_times) {
    if (!std::isfinite(target) || target < t) {
      throw Error(ErrorCode::NonMonotoneTimes, "output time " + std::to_string(target) + " precedes " +
                                                   std::to_string(t));
    }
    state = forward_segment(problem.rhs, state, t, target, config, stats, used);
    t = target;
    out.push_back(state);
  }
  return out;
}

}  // namespace tempo::ode
