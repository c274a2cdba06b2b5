#pragma once

// Numeric inner loops shared by the ops layer. Everything in tempo::kernels is
// OpenMP-parallel over independent output elements; tempo::kernels::reference
// holds the plain serial loops the parallel versions are tested and
// benchmarked against. Each output element is produced by exactly one thread
// in a fixed order, and cross-element reductions go through per-element
// partials summed serially, so results do not depend on the thread count.

#include <cstddef>
#include <span>
#include <vector>

namespace tempo::kernels {

using Buffer = std::vector<double>;

/// C(m×n) = A(m×k) · B(k×n)
Buffer matmul(std::span<const double> a, std::span<const double> b, std::size_t m, std::size_t k,
              std::size_t n);
/// C(k×n) = Aᵀ · G where A is m×k and G is m×n
Buffer matmul_tn(std::span<const double> a, std::span<const double> g, std::size_t m, std::size_t k,
                 std::size_t n);
/// C(m×k) = G · Bᵀ where G is m×n and B is k×n
Buffer matmul_nt(std::span<const double> g, std::span<const double> b, std::size_t m, std::size_t k,
                 std::size_t n);

enum class CouplingMode { scalar, rank1, full };

/// Coupled-sine weight reconstruction over a flat weight vector w (length N):
///
///   out_i = Σ_j (K_ij / N) · sin(rate_i · (w_i − w_j) + phase)
///
/// K_ij is k (scalar), k_i (rank1) or the full matrix. rate has length 1
/// (shared by all weights) or N (per-weight time scale).
struct ScaleArgs {
  std::span<const double> weights;
  CouplingMode mode = CouplingMode::rank1;
  std::span<const double> coupling;
  std::span<const double> rate;
  double phase = 0.0;

  std::size_t n() const { return weights.size(); }
  double coupling_at(std::size_t i, std::size_t j) const;
  double rate_at(std::size_t i) const { return rate.size() == 1 ? rate[0] : rate[i]; }
};

struct ScaleGrads {
  Buffer weights;
  Buffer coupling;
  Buffer rate;
  double phase = 0.0;
};

/// How the pairwise sum is evaluated.
///  - streamed: one row of pairwise terms at a time; the backward pass
///    recomputes terms for its row and column sums (O(N) scratch).
///  - materialized: backward builds the N×N term matrix once (O(N²) scratch).
///  - factored: sin(u_i − v_j) = sin u_i cos v_j − cos u_i sin v_j reduces the
///    sum to per-weight sums; O(N) for scalar/rank1, an N×N matvec for full.
///    Only valid when rate is shared (length 1).
enum class ScaleEval { streamed, materialized, factored };

void validate(const ScaleArgs& args);
Buffer scale_forward(const ScaleArgs& args, ScaleEval eval);
ScaleGrads scale_backward(const ScaleArgs& args, std::span<const double> grad_out, ScaleEval eval);

namespace reference {

Buffer matmul(std::span<const double> a, std::span<const double> b, std::size_t m, std::size_t k,
              std::size_t n);
Buffer scale_forward(const ScaleArgs& args);
ScaleGrads scale_backward(const ScaleArgs& args, std::span<const double> grad_out);

}  // namespace reference

}  // namespace tempo::kernels
