#pragma once

// Independent reference computations used by the tests. None of these call
// into the library's numeric code.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "tempo/tensor.hpp"

namespace oracle {

inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                        std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

enum class Coupling { scalar, rank1, full };

/// Direct double loop over w'_i = Σ_j (K_ij/N) sin(a_i·t·(w_i − w_j) + b·t + g).
inline std::vector<double> coupled_sine(const std::vector<double>& w, Coupling mode, const std::vector<double>& k,
                                        const std::vector<double>& alpha, double beta, double gamma, double t) {
  const std::size_t n = w.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = alpha.size() == 1 ? alpha[0] : alpha[i];
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double kij = mode == Coupling::scalar ? k[0] : mode == Coupling::rank1 ? k[i] : k[i * n + j];
      s += kij / static_cast<double>(n) * std::sin(a * t * (w[i] - w[j]) + beta * t + gamma);
    }
    out[i] = s;
  }
  return out;
}

/// Counts positive-over-negative pairs, ties as one half.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

/// Central difference of f with respect to one parameter entry.
inline double central_diff(tempo::Parameter& p, std::size_t i, const std::function<double()>& f, double eps = 1e-6) {
  auto v = p.mutable_value();
  const double saved = v[i];
  v[i] = saved + eps;
  const double up = f();
  v[i] = saved - eps;
  const double down = f();
  v[i] = saved;
  return (up - down) / (2.0 * eps);
}

/// |analytic − numeric| / max(1e-8, |analytic|)
inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic));
}

/// Worst relative error over every entry of every parameter. grad_of(p) must
/// return the analytic gradient computed before the call.
inline double worst_grad_error(const std::vector<tempo::Parameter*>& params,
                               const std::vector<std::vector<double>>& analytic,
                               const std::function<double()>& f, double eps = 1e-6) {
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k]->size(); ++i) {
      worst = std::max(worst, rel_err(analytic[k][i], central_diff(*params[k], i, f, eps)));
    }
  }
  return worst;
}

inline std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

}  // namespace oracle
