#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "tempo/kernels.hpp"

using namespace tempo;
using namespace tempo::kernels;

namespace {

std::vector<double> transpose(const std::vector<double>& a, std::size_t r, std::size_t c) {
  std::vector<double> t(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = a[i * c + j];
  return t;
}

void check_close(std::span<const double> a, std::span<const double> b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= tol);
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("matmul variants match the naive loop") {
  std::mt19937_64 rng(1);
  for (auto [m, k, n] : {std::tuple{1ul, 1ul, 1ul}, {3ul, 4ul, 2ul}, {17ul, 9ul, 33ul}, {64ul, 50ul, 3ul}}) {
    const auto a = oracle::uniform(rng, m * k, -1, 1), b = oracle::uniform(rng, k * n, -1, 1);
    const auto want = oracle::naive_matmul(a, b, m, k, n);
    check_close(matmul(a, b, m, k, n), want, 1e-12);
    check_close(reference::matmul(a, b, m, k, n), want, 1e-12);
    // Aᵀ·G with A m×k and G m×n
    const auto g = oracle::uniform(rng, m * n, -1, 1);
    check_close(matmul_tn(a, g, m, k, n), oracle::naive_matmul(transpose(a, m, k), g, k, m, n), 1e-12);
    // G·Bᵀ with G m×n and B k×n
    const auto bt = oracle::uniform(rng, k * n, -1, 1);
    check_close(matmul_nt(g, bt, m, k, n), oracle::naive_matmul(g, transpose(bt, k, n), m, n, k), 1e-12);
  }
}

TEST_CASE("scale strategies agree with the double loop") {
  std::mt19937_64 rng(2);
  for (CouplingMode mode : {CouplingMode::scalar, CouplingMode::rank1, CouplingMode::full}) {
    for (bool per_weight : {false, true}) {
      const std::size_t n = 12;
      const auto w = oracle::uniform(rng, n, -1, 1);
      const std::size_t kn = mode == CouplingMode::scalar ? 1 : mode == CouplingMode::rank1 ? n : n * n;
      const auto k = oracle::uniform(rng, kn, -1.5, 1.5);
      const auto rate = oracle::uniform(rng, per_weight ? n : 1, -2, 2);
      const double phase = 0.7;
      const ScaleArgs args{w, mode, k, rate, phase};
      const auto want = oracle::coupled_sine(w, static_cast<oracle::Coupling>(mode), k, rate, 0.0, phase, 1.0);
      check_close(reference::scale_forward(args), want, 1e-12);
      std::vector<ScaleEval> evals{ScaleEval::streamed, ScaleEval::materialized};
      if (!per_weight) evals.push_back(ScaleEval::factored);
      const auto g = oracle::uniform(rng, n, -1, 1);
      const ScaleGrads ref = reference::scale_backward(args, g);
      for (ScaleEval e : evals) {
        CAPTURE(static_cast<int>(e));
        check_close(scale_forward(args, e), want, 1e-12);
        const ScaleGrads got = scale_backward(args, g, e);
        check_close(got.weights, ref.weights, 1e-12);
        check_close(got.coupling, ref.coupling, 1e-12);
        check_close(got.rate, ref.rate, 1e-12);
        CHECK(std::abs(got.phase - ref.phase) < 1e-12);
      }
    }
  }
}

}  // TEST_SUITE
