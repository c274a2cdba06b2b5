#pragma once

#include <optional>
#include <span>

#include "tempo/tensor.hpp"

namespace tempo::ops {

enum class Op { add, sub, mul, div, sin, cos, tanh, sigmoid, exp, log, softplus, square, neg, scale };

/// Binary ops accept equal shapes, a scalar on either side, or (add/sub only)
/// a rank-1 row vector added to every row of a matrix. Unary ops ignore b;
/// `scale` multiplies by the scalar b.
Tensor elementwise(Op op, const Tensor& a, const Tensor& b);
Tensor elementwise(Op op, const Tensor& a, double b);
Tensor elementwise(Op op, const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor scale(const Tensor& a, double b);

Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor square(const Tensor& a);
Tensor neg(const Tensor& a);

/// Rank-2 product; backward dA = G·Bᵀ, dB = Aᵀ·G.
Tensor matmul(const Tensor& a, const Tensor& b);

enum class Reduce { sum, mean, max };

/// Full reduction to a scalar when axis is empty, otherwise along that axis.
Tensor reduce(Reduce kind, const Tensor& a, std::optional<std::size_t> axis = std::nullopt);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// base + Σ coeffs[i]·terms[i] as one tape node (solver stage combinations).
Tensor lincomb(const Tensor& base, std::span<const double> coeffs, std::span<const Tensor> terms);

/// Column-wise concatenation of two matrices with equal row counts.
Tensor concat_cols(const Tensor& a, const Tensor& b);
/// Rows [begin, end) of a matrix.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
/// Stack equally-shaped rank-1 (or 1×n) tensors into a k×n matrix.
Tensor stack_rows(std::span<const Tensor> rows);
/// Vertical concatenation of matrices with equal column counts.
Tensor concat_rows(std::span<const Tensor> blocks);

}  // namespace tempo::ops

namespace tempo {

inline Tensor operator+(const Tensor& a, const Tensor& b) { return ops::add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return ops::sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return ops::mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return ops::div(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return ops::add(a, b); }
inline Tensor operator-(const Tensor& a, double b) { return ops::add(a, -b); }
inline Tensor operator*(const Tensor& a, double b) { return ops::scale(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return ops::scale(b, a); }
inline Tensor operator-(const Tensor& a) { return ops::neg(a); }

}  // namespace tempo
