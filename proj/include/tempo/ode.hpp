#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tempo/tensor.hpp"

namespace tempo::ode {

/// dh/dt = rhs(t, h). The returned tensor must have h's shape.
using Rhs = std::function<Tensor(double t, const Tensor& h)>;

struct OdeProblem {
  Rhs rhs;
  Tensor h0;
  double t_start = 0.0;
  double t_end = 1.0;
};

enum class Method { rk4, dopri5 };

std::string to_string(Method m);
Method parse_method(const std::string& s);

struct SolverConfig {
  Method method = Method::rk4;
  double step = 0.05;  // fixed rk4 step
  double rtol = 1e-5;
  double atol = 1e-5;
  std::size_t max_steps = 100000;  // accepted + rejected steps per solve
  double initial_step = 0.1;       // dopri5 first trial step cap
};

void validate(const SolverConfig& config);

struct SolveStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t rhs_evals = 0;
};

/// One classical RK4 step; stages see t, t+dt/2, t+dt/2, t+dt.
Tensor rk4_step(const Rhs& rhs, double t, const Tensor& h, double dt);

struct DopriResult {
  Tensor state;
  std::size_t steps = 0;  // accepted
  std::size_t rejected = 0;
};

/// Dormand–Prince 5(4) with PI step-size control over [t_start, t_end].
DopriResult dopri5_solve(const OdeProblem& problem, const SolverConfig& config);

/// Integrates h from t_from to t_to (either direction) with the configured
/// method. Backward-in-time integration solves ds = −dt with the negated rhs.
Tensor integrate(const Rhs& rhs, const Tensor& h, double t_from, double t_to, const SolverConfig& config,
                 SolveStats* stats = nullptr);

/// States at each requested time (non-decreasing, none before t_start).
/// Every output time is an exact step endpoint: integration proceeds segment
/// by segment, never interpolating.
std::vector<Tensor> odesolve_at(const OdeProblem& problem, std::span<const double> output_times,
                                const SolverConfig& config, SolveStats* stats = nullptr);

}  // namespace tempo::ode
