#include "tempo/kernels.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "tempo/error.hpp"

namespace tempo::kernels {

namespace {

// Below these sizes thread start-up costs more than the loop.
constexpr std::size_t kMatmulParallelFlops = 32 * 1024;
constexpr std::size_t kScaleParallelN = 128;

long as_long(std::size_t n) { return static_cast<long>(n); }

double serial_sum(const Buffer& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

// ---------------------------------------------------------------- matmul

Buffer matmul(std::span<const double> a, std::span<const double> b, std::size_t m, std::size_t k,
              std::size_t n) {
  Buffer c(m * n, 0.0);
  const bool par = m * k * n >= kMatmulParallelFlops;
#pragma omp parallel for if (par) schedule(static)
  for (long il = 0; il < as_long(m); ++il) {
    const auto i = static_cast<std::size_t>(il);
    double* row = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return c;
}

Buffer matmul_tn(std::span<const double> a, std::span<const double> g, std::size_t m, std::size_t k,
                 std::size_t n) {
  Buffer c(k * n, 0.0);
  const bool par = m * k * n >= kMatmulParallelFlops;
#pragma omp parallel for if (par) schedule(static)
  for (long pl = 0; pl < as_long(k); ++pl) {
    const auto p = static_cast<std::size_t>(pl);
    double* row = c.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double aip = a[i * k + p];
      const double* grow = g.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * grow[j];
    }
  }
  return c;
}

Buffer matmul_nt(std::span<const double> g, std::span<const double> b, std::size_t m, std::size_t k,
                 std::size_t n) {
  Buffer c(m * k, 0.0);
  const bool par = m * k * n >= kMatmulParallelFlops;
#pragma omp parallel for if (par) schedule(static)
  for (long il = 0; il < as_long(m); ++il) {
    const auto i = static_cast<std::size_t>(il);
    const double* grow = g.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b.data() + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] = acc;
    }
  }
  return c;
}

// ---------------------------------------------------------------- scaling

double ScaleArgs::coupling_at(std::size_t i, std::size_t j) const {
  switch (mode) {
    case CouplingMode::scalar: return coupling[0];
    case CouplingMode::rank1: return coupling[i];
    case CouplingMode::full: return coupling[i * n() + j];
  }
  return 0.0;
}

void validate(const ScaleArgs& args) {
  const std::size_t n = args.n();
  if (n == 0) throw Error(ErrorCode::ShapeMismatch, "scaling needs at least one weight");
  std::size_t expected = 0;
  switch (args.mode) {
    case CouplingMode::scalar: expected = 1; break;
    case CouplingMode::rank1: expected = n; break;
    case CouplingMode::full: expected = n * n; break;
  }
  if (args.coupling.size() != expected) {
    throw Error(ErrorCode::ShapeMismatch, "coupling has " + std::to_string(args.coupling.size()) +
                                              " values, mode needs " + std::to_string(expected));
  }
  if (args.rate.size() != 1 && args.rate.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "rate must have 1 or N entries");
  }
}

namespace {

Buffer pairwise_forward(const ScaleArgs& args) {
  const std::size_t n = args.n();
  const double inv_n = 1.0 / static_cast<double>(n);
  Buffer out(n);
#pragma omp parallel for if (n >= kScaleParallelN) schedule(static)
  for (long il = 0; il < as_long(n); ++il) {
    const auto i = static_cast<std::size_t>(il);
    const double wi = args.weights[i];
    const double a = args.rate_at(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      acc += args.coupling_at(i, j) * std::sin(a * (wi - args.weights[j]) + args.phase);
    }
    out[i] = acc * inv_n;
  }
  return out;
}

ScaleGrads alloc_grads(const ScaleArgs& args) {
  ScaleGrads g;
  g.weights.assign(args.n(), 0.0);
  g.coupling.assign(args.coupling.size(), 0.0);
  g.rate.assign(args.rate.size(), 0.0);
  return g;
}

// Shared epilogue: dw from row/column sums, rate and phase from per-row partials.
void finish_pairwise(const ScaleArgs& args, const Buffer& row_t, const Buffer& col_t,
                     const Buffer& rate_rows, const Buffer& k_rows, ScaleGrads& g) {
  const std::size_t n = args.n();
  for (std::size_t m = 0; m < n; ++m) g.weights[m] = args.rate_at(m) * row_t[m] - col_t[m];
  if (args.rate.size() == 1) {
    g.rate[0] = serial_sum(rate_rows);
  } else {
    g.rate = rate_rows;
  }
  g.phase = serial_sum(row_t);
  if (args.mode == CouplingMode::scalar) g.coupling[0] = serial_sum(k_rows);
  if (args.mode == CouplingMode::rank1) g.coupling = k_rows;
}

ScaleGrads pairwise_backward_streamed(const ScaleArgs& args, std::span<const double> grad_out) {
  const std::size_t n = args.n();
  const double inv_n = 1.0 / static_cast<double>(n);
  ScaleGrads g = alloc_grads(args);
  Buffer row_t(n), col_t(n), rate_rows(n), k_rows(n);
  const bool par = n >= kScaleParallelN;

#pragma omp parallel for if (par) schedule(static)
  for (long il = 0; il < as_long(n); ++il) {
    const auto i = static_cast<std::size_t>(il);
    const double gi = grad_out[i] * inv_n;
    const double wi = args.weights[i];
    const double a = args.rate_at(i);
    double sum_t = 0.0, sum_rate = 0.0, sum_k = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double diff = wi - args.weights[j];
      const double theta = a * diff + args.phase;
      const double t = gi * args.coupling_at(i, j) * std::cos(theta);
      sum_t += t;
      sum_rate += t * diff;
      const double dk = gi * std::sin(theta);
      if (args.mode == CouplingMode::full) {
        g.coupling[i * n + j] = dk;
      } else {
        sum_k += dk;
      }
    }
    row_t[i] = sum_t;
    rate_rows[i] = sum_rate;
    k_rows[i] = sum_k;
  }

#pragma omp parallel for if (par) schedule(static)
  for (long ml = 0; ml < as_long(n); ++ml) {
    const auto m = static_cast<std::size_t>(ml);
    const double wm = args.weights[m];
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = args.rate_at(i);
      const double theta = a * (args.weights[i] - wm) + args.phase;
      acc += a * grad_out[i] * inv_n * args.coupling_at(i, m) * std::cos(theta);
    }
    col_t[m] = acc;
  }

  finish_pairwise(args, row_t, col_t, rate_rows, k_rows, g);
  return g;
}

ScaleGrads pairwise_backward_materialized(const ScaleArgs& args, std::span<const double> grad_out) {
  const std::size_t n = args.n();
  const double inv_n = 1.0 / static_cast<double>(n);
  ScaleGrads g = alloc_grads(args);
  Buffer terms(n * n);  // a_i · T_ij, T_ij = g_i K_ij cos θ_ij
  Buffer row_t(n), col_t(n), rate_rows(n), k_rows(n);
  const bool par = n >= kScaleParallelN;

#pragma omp parallel for if (par) schedule(static)
  for (long il = 0; il < as_long(n); ++il) {
    const auto i = static_cast<std::size_t>(il);
    const double gi = grad_out[i] * inv_n;
    const double wi = args.weights[i];
    const double a = args.rate_at(i);
    double sum_t = 0.0, sum_rate = 0.0, sum_k = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double diff = wi - args.weights[j];
      const double theta = a * diff + args.phase;
      const double t = gi * args.coupling_at(i, j) * std::cos(theta);
      terms[i * n + j] = a * t;
      sum_t += t;
      sum_rate += t * diff;
      const double dk = gi * std::sin(theta);
      if (args.mode == CouplingMode::full) {
        g.coupling[i * n + j] = dk;
      } else {
        sum_k += dk;
      }
    }
    row_t[i] = sum_t;
    rate_rows[i] = sum_rate;
    k_rows[i] = sum_k;
  }

#pragma omp parallel for if (par) schedule(static)
  for (long ml = 0; ml < as_long(n); ++ml) {
    const auto m = static_cast<std::size_t>(ml);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += terms[i * n + m];
    col_t[m] = acc;
  }

  finish_pairwise(args, row_t, col_t, rate_rows, k_rows, g);
  return g;
}

struct Factors {
  Buffer sin_u, cos_u, sin_v, cos_v, p, q;
  double sum_cos_v = 0.0, sum_sin_v = 0.0;
};

Factors factor(const ScaleArgs& args) {
  const std::size_t n = args.n();
  const double a = args.rate[0];
  const bool par = n >= kScaleParallelN;
  Factors f;
  f.sin_u.resize(n);
  f.cos_u.resize(n);
  f.sin_v.resize(n);
  f.cos_v.resize(n);
  f.p.resize(n);
  f.q.resize(n);
#pragma omp parallel for if (par) schedule(static)
  for (long il = 0; il < as_long(n); ++il) {
    const auto i = static_cast<std::size_t>(il);
    const double v = a * args.weights[i];
    const double u = v + args.phase;
    f.sin_u[i] = std::sin(u);
    f.cos_u[i] = std::cos(u);
    f.sin_v[i] = std::sin(v);
    f.cos_v[i] = std::cos(v);
  }
  f.sum_cos_v = serial_sum(f.cos_v);
  f.sum_sin_v = serial_sum(f.sin_v);
  if (args.mode == CouplingMode::full) {
#pragma omp parallel for if (par) schedule(static)
    for (long il = 0; il < as_long(n); ++il) {
      const auto i = static_cast<std::size_t>(il);
      const double* krow = args.coupling.data() + i * n;
      double pc = 0.0, qs = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        pc += krow[j] * f.cos_v[j];
        qs += krow[j] * f.sin_v[j];
      }
      f.p[i] = pc;
      f.q[i] = qs;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double k = args.mode == CouplingMode::scalar ? args.coupling[0] : args.coupling[i];
      f.p[i] = k * f.sum_cos_v;
      f.q[i] = k * f.sum_sin_v;
    }
  }
  return f;
}

Buffer factored_forward(const ScaleArgs& args) {
  const std::size_t n = args.n();
  const double inv_n = 1.0 / static_cast<double>(n);
  const Factors f = factor(args);
  Buffer out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (f.sin_u[i] * f.p[i] - f.cos_u[i] * f.q[i]) * inv_n;
  return out;
}

ScaleGrads factored_backward(const ScaleArgs& args, std::span<const double> grad_out) {
  const std::size_t n = args.n();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double a = args.rate[0];
  const Factors f = factor(args);
  ScaleGrads g = alloc_grads(args);
  const bool par = n >= kScaleParallelN;

  Buffer du(n), dp(n), dq(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double gi = grad_out[i] * inv_n;
    du[i] = gi * (f.cos_u[i] * f.p[i] + f.sin_u[i] * f.q[i]);
    dp[i] = gi * f.sin_u[i];
    dq[i] = -gi * f.cos_u[i];
  }

  Buffer dcos_v(n), dsin_v(n);
  if (args.mode == CouplingMode::full) {
#pragma omp parallel for if (par) schedule(static)
    for (long il = 0; il < as_long(n); ++il) {
      const auto i = static_cast<std::size_t>(il);
      for (std::size_t j = 0; j < n; ++j) {
        g.coupling[i * n + j] = dp[i] * f.cos_v[j] + dq[i] * f.sin_v[j];
      }
    }
#pragma omp parallel for if (par) schedule(static)
    for (long jl = 0; jl < as_long(n); ++jl) {
      const auto j = static_cast<std::size_t>(jl);
      double c = 0.0, s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        c += args.coupling[i * n + j] * dp[i];
        s += args.coupling[i * n + j] * dq[i];
      }
      dcos_v[j] = c;
      dsin_v[j] = s;
    }
  } else {
    Buffer k_rows(n), kdp(n), kdq(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double k = args.mode == CouplingMode::scalar ? args.coupling[0] : args.coupling[i];
      k_rows[i] = dp[i] * f.sum_cos_v + dq[i] * f.sum_sin_v;
      kdp[i] = k * dp[i];
      kdq[i] = k * dq[i];
    }
    if (args.mode == CouplingMode::scalar) {
      g.coupling[0] = serial_sum(k_rows);
    } else {
      g.coupling = k_rows;
    }
    const double c = serial_sum(kdp);
    const double s = serial_sum(kdq);
    dcos_v.assign(n, c);
    dsin_v.assign(n, s);
  }

  Buffer rate_terms(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dv = -f.sin_v[i] * dcos_v[i] + f.cos_v[i] * dsin_v[i];
    const double dw = du[i] + dv;
    g.weights[i] = a * dw;
    rate_terms[i] = args.weights[i] * dw;
  }
  g.rate[0] = serial_sum(rate_terms);
  g.phase = serial_sum(du);
  return g;
}

}  // namespace

Buffer scale_forward(const ScaleArgs& args, ScaleEval eval) {
  validate(args);
  if (eval == ScaleEval::factored && args.rate.size() == 1) return factored_forward(args);
  return pairwise_forward(args);
}

ScaleGrads scale_backward(const ScaleArgs& args, std::span<const double> grad_out, ScaleEval eval) {
  validate(args);
  if (grad_out.size() != args.n()) throw Error(ErrorCode::ShapeMismatch, "scale grad size");
  switch (eval) {
    case ScaleEval::factored:
      if (args.rate.size() == 1) return factored_backward(args, grad_out);
      return pairwise_backward_streamed(args, grad_out);
    case ScaleEval::materialized: return pairwise_backward_materialized(args, grad_out);
    case ScaleEval::streamed: return pairwise_backward_streamed(args, grad_out);
  }
  return pairwise_backward_streamed(args, grad_out);
}

// ---------------------------------------------------------------- reference

namespace reference {

Buffer matmul(std::span<const double> a, std::span<const double> b, std::size_t m, std::size_t k,
              std::size_t n) {
  Buffer c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  return c;
}

Buffer scale_forward(const ScaleArgs& args) {
  validate(args);
  const std::size_t n = args.n();
  Buffer out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double theta = args.rate_at(i) * (args.weights[i] - args.weights[j]) + args.phase;
      out[i] += args.coupling_at(i, j) / static_cast<double>(n) * std::sin(theta);
    }
  }
  return out;
}

ScaleGrads scale_backward(const ScaleArgs& args, std::span<const double> grad_out) {
  validate(args);
  const std::size_t n = args.n();
  const double dn = static_cast<double>(n);
  ScaleGrads g;
  g.weights.assign(n, 0.0);
  g.coupling.assign(args.coupling.size(), 0.0);
  g.rate.assign(args.rate.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double a = args.rate_at(i);
      const double diff = args.weights[i] - args.weights[j];
      const double theta = a * diff + args.phase;
      const double k = args.coupling_at(i, j);
      const double dtheta = grad_out[i] * k / dn * std::cos(theta);
      g.weights[i] += dtheta * a;
      g.weights[j] -= dtheta * a;
      g.rate[args.rate.size() == 1 ? 0 : i] += dtheta * diff;
      g.phase += dtheta;
      const double dk = grad_out[i] / dn * std::sin(theta);
      switch (args.mode) {
        case CouplingMode::scalar: g.coupling[0] += dk; break;
        case CouplingMode::rank1: g.coupling[i] += dk; break;
        case CouplingMode::full: g.coupling[i * n + j] += dk; break;
      }
    }
  }
  return g;
}

}  // namespace reference

}  // namespace tempo::kernels
