#include "tempo/ops.hpp"

#include <algorithm>
#include <cmath>

#include "tempo/kernels.hpp"

namespace tempo::ops {

namespace {

using BufPtr = std::shared_ptr<const Buffer>;

Tensor make_result(Shape shape, Buffer data, std::span<const Tensor> inputs, Tape::BackwardFn fn) {
  if (auto tape = common_tape(inputs)) return tape->record(std::move(shape), std::move(data), inputs, std::move(fn));
  return Tensor(std::move(shape), std::move(data));
}

bool is_binary(Op op) {
  return op == Op::add || op == Op::sub || op == Op::mul || op == Op::div;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

enum class Bcast { same, scalar_a, scalar_b, row_a, row_b };

Bcast broadcast_kind(Op op, const Tensor& a, const Tensor& b, Shape& out) {
  if (a.shape() == b.shape()) {
    out = a.shape();
    return Bcast::same;
  }
  if (b.is_scalar()) {
    out = a.shape();
    return Bcast::scalar_b;
  }
  if (a.is_scalar()) {
    out = b.shape();
    return Bcast::scalar_a;
  }
  if (op == Op::add || op == Op::sub) {
    if (a.rank() == 2 && b.rank() == 1 && b.shape()[0] == a.shape()[1]) {
      out = a.shape();
      return Bcast::row_b;
    }
    if (b.rank() == 2 && a.rank() == 1 && a.shape()[0] == b.shape()[1]) {
      out = b.shape();
      return Bcast::row_a;
    }
  }
  throw Error(ErrorCode::ShapeMismatch,
              "cannot broadcast " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
}

std::size_t index_a(Bcast k, std::size_t i, std::size_t cols) {
  switch (k) {
    case Bcast::scalar_a: return 0;
    case Bcast::row_a: return i % cols;
    default: return i;
  }
}

std::size_t index_b(Bcast k, std::size_t i, std::size_t cols) {
  switch (k) {
    case Bcast::scalar_b: return 0;
    case Bcast::row_b: return i % cols;
    default: return i;
  }
}

Tensor binary(Op op, const Tensor& a, const Tensor& b) {
  Shape shape;
  const Bcast kind = broadcast_kind(op, a, b, shape);
  const std::size_t n = shape_size(shape);
  const std::size_t cols = shape.empty() ? 1 : shape.back();
  const auto av = a.data();
  const auto bv = b.data();
  Buffer out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[index_a(kind, i, cols)];
    const double y = bv[index_b(kind, i, cols)];
    switch (op) {
      case Op::add: out[i] = x + y; break;
      case Op::sub: out[i] = x - y; break;
      case Op::mul: out[i] = x * y; break;
      case Op::div: out[i] = x / y; break;
      default: break;
    }
  }
  BufPtr abuf = a.buffer();
  BufPtr bbuf = b.buffer();
  const Tensor inputs[] = {a, b};
  return make_result(std::move(shape), std::move(out), inputs,
                     [op, kind, cols, abuf, bbuf](std::span<const double> g, std::span<Buffer* const> gin) {
                       Buffer* ga = gin[0];
                       Buffer* gb = gin[1];
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const std::size_t ia = index_a(kind, i, cols);
                         const std::size_t ib = index_b(kind, i, cols);
                         const double x = (*abuf)[ia];
                         const double y = (*bbuf)[ib];
                         double da = 0.0, db = 0.0;
                         switch (op) {
                           case Op::add: da = g[i]; db = g[i]; break;
                           case Op::sub: da = g[i]; db = -g[i]; break;
                           case Op::mul: da = g[i] * y; db = g[i] * x; break;
                           case Op::div: da = g[i] / y; db = -g[i] * x / (y * y); break;
                           default: break;
                         }
                         if (ga) (*ga)[ia] += da;
                         if (gb) (*gb)[ib] += db;
                       }
                     });
}

Tensor unary(Op op, const Tensor& a, double param) {
  const auto av = a.data();
  Buffer out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double x = av[i];
    switch (op) {
      case Op::sin: out[i] = std::sin(x); break;
      case Op::cos: out[i] = std::cos(x); break;
      case Op::tanh: out[i] = std::tanh(x); break;
      case Op::sigmoid: out[i] = stable_sigmoid(x); break;
      case Op::exp: out[i] = std::exp(x); break;
      case Op::log: out[i] = std::log(x); break;
      case Op::softplus: out[i] = stable_softplus(x); break;
      case Op::square: out[i] = x * x; break;
      case Op::neg: out[i] = -x; break;
      case Op::scale: out[i] = x * param; break;
      default: break;
    }
  }
  if (!a.tracked()) return Tensor(a.shape(), std::move(out));

  BufPtr in = a.buffer();
  auto res = std::make_shared<const Buffer>(out);
  const Tensor inputs[] = {a};
  return make_result(a.shape(), std::move(out), inputs,
                     [op, param, in, res](std::span<const double> g, std::span<Buffer* const> gin) {
                       Buffer& ga = *gin[0];
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double x = (*in)[i];
                         const double y = (*res)[i];
                         double d = 0.0;
                         switch (op) {
                           case Op::sin: d = std::cos(x); break;
                           case Op::cos: d = -std::sin(x); break;
                           case Op::tanh: d = 1.0 - y * y; break;
                           case Op::sigmoid: d = y * (1.0 - y); break;
                           case Op::exp: d = y; break;
                           case Op::log: d = 1.0 / x; break;
                           case Op::softplus: d = stable_sigmoid(x); break;
                           case Op::square: d = 2.0 * x; break;
                           case Op::neg: d = -1.0; break;
                           case Op::scale: d = param; break;
                           default: break;
                         }
                         ga[i] += g[i] * d;
                       }
                     });
}

}  // namespace

Tensor elementwise(Op op, const Tensor& a, const Tensor& b) {
  if (is_binary(op)) return binary(op, a, b);
  if (op == Op::scale) {
    if (!b.is_scalar()) throw Error(ErrorCode::ShapeMismatch, "scale factor must be a scalar");
    if (b.tracked()) return binary(Op::mul, a, b);
    return unary(op, a, b.item());
  }
  return unary(op, a, 0.0);
}

Tensor elementwise(Op op, const Tensor& a, double b) {
  if (is_binary(op)) return binary(op, a, Tensor::scalar(b));
  return unary(op, a, b);
}

Tensor elementwise(Op op, const Tensor& a) {
  if (is_binary(op) || op == Op::scale) {
    throw Error(ErrorCode::InvalidArgument, "binary op called with one operand");
  }
  return unary(op, a, 0.0);
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(Op::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(Op::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(Op::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(Op::div, a, b); }
Tensor add(const Tensor& a, double b) { return binary(Op::add, a, Tensor::scalar(b)); }
Tensor scale(const Tensor& a, double b) { return unary(Op::scale, a, b); }
Tensor sin(const Tensor& a) { return unary(Op::sin, a, 0.0); }
Tensor cos(const Tensor& a) { return unary(Op::cos, a, 0.0); }
Tensor tanh(const Tensor& a) { return unary(Op::tanh, a, 0.0); }
Tensor sigmoid(const Tensor& a) { return unary(Op::sigmoid, a, 0.0); }
Tensor exp(const Tensor& a) { return unary(Op::exp, a, 0.0); }
Tensor log(const Tensor& a) { return unary(Op::log, a, 0.0); }
Tensor softplus(const Tensor& a) { return unary(Op::softplus, a, 0.0); }
Tensor square(const Tensor& a) { return unary(Op::square, a, 0.0); }
Tensor neg(const Tensor& a) { return unary(Op::neg, a, 0.0); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw Error(ErrorCode::ShapeMismatch,
                "matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Buffer out = kernels::matmul(a.data(), b.data(), m, k, n);
  BufPtr abuf = a.buffer();
  BufPtr bbuf = b.buffer();
  const Tensor inputs[] = {a, b};
  return make_result({m, n}, std::move(out), inputs,
                     [m, k, n, abuf, bbuf](std::span<const double> g, std::span<Buffer* const> gin) {
                       if (gin[0]) {
                         const Buffer da = kernels::matmul_nt(g, *bbuf, m, k, n);
                         for (std::size_t i = 0; i < da.size(); ++i) (*gin[0])[i] += da[i];
                       }
                       if (gin[1]) {
                         const Buffer db = kernels::matmul_tn(*abuf, g, m, k, n);
                         for (std::size_t i = 0; i < db.size(); ++i) (*gin[1])[i] += db[i];
                       }
                     });
}

Tensor reduce(Reduce kind, const Tensor& a, std::optional<std::size_t> axis) {
  Shape out_shape;
  std::size_t outer = 1, extent = a.size(), inner = 1;
  if (axis) {
    if (*axis >= a.rank()) {
      throw Error(ErrorCode::InvalidArgument,
                  "axis " + std::to_string(*axis) + " for shape " + shape_string(a.shape()));
    }
    for (std::size_t d = 0; d < a.rank(); ++d) {
      if (d < *axis) outer *= a.shape()[d];
      if (d > *axis) inner *= a.shape()[d];
      if (d != *axis) out_shape.push_back(a.shape()[d]);
    }
    extent = a.shape()[*axis];
  }
  if (extent == 0) throw Error(ErrorCode::EmptyReduction, "reduced extent is 0");

  const auto av = a.data();
  Buffer out(outer * inner);
  std::vector<std::size_t> argmax(out.size(), 0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t slot = o * inner + in;
      double acc = kind == Reduce::max ? av[o * extent * inner + in] : 0.0;
      for (std::size_t e = 0; e < extent; ++e) {
        const std::size_t idx = (o * extent + e) * inner + in;
        if (kind == Reduce::max) {
          if (av[idx] > acc) {
            acc = av[idx];
            argmax[slot] = e;
          }
        } else {
          acc += av[idx];
        }
      }
      out[slot] = kind == Reduce::mean ? acc / static_cast<double>(extent) : acc;
    }
  }
  if (!a.tracked()) return Tensor(std::move(out_shape), std::move(out));

  const Tensor inputs[] = {a};
  return make_result(std::move(out_shape), std::move(out), inputs,
                     [kind, outer, extent, inner, argmax = std::move(argmax)](
                         std::span<const double> g, std::span<Buffer* const> gin) {
                       Buffer& ga = *gin[0];
                       const double w = kind == Reduce::mean ? 1.0 / static_cast<double>(extent) : 1.0;
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t in = 0; in < inner; ++in) {
                           const std::size_t slot = o * inner + in;
                           if (kind == Reduce::max) {
                             ga[(o * extent + argmax[slot]) * inner + in] += g[slot];
                             continue;
                           }
                           for (std::size_t e = 0; e < extent; ++e) {
                             ga[(o * extent + e) * inner + in] += g[slot] * w;
                           }
                         }
                       }
                     });
}

Tensor sum(const Tensor& a) { return reduce(Reduce::sum, a); }
Tensor mean(const Tensor& a) { return reduce(Reduce::mean, a); }

Tensor lincomb(const Tensor& base, std::span<const double> coeffs, std::span<const Tensor> terms) {
  if (coeffs.size() != terms.size()) throw Error(ErrorCode::InvalidArgument, "lincomb arity");
  for (const auto& t : terms) {
    if (t.shape() != base.shape()) {
      throw Error(ErrorCode::ShapeMismatch,
                  "lincomb " + shape_string(base.shape()) + " with " + shape_string(t.shape()));
    }
  }
  Buffer out(base.data().begin(), base.data().end());
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const auto tv = terms[k].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += coeffs[k] * tv[i];
  }
  std::vector<Tensor> inputs;
  inputs.reserve(terms.size() + 1);
  inputs.push_back(base);
  inputs.insert(inputs.end(), terms.begin(), terms.end());
  std::vector<double> c(coeffs.begin(), coeffs.end());
  return make_result(base.shape(), std::move(out), inputs,
                     [c = std::move(c)](std::span<const double> g, std::span<Buffer* const> gin) {
                       if (gin[0]) {
                         for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                       }
                       for (std::size_t k = 0; k < c.size(); ++k) {
                         Buffer* gk = gin[k + 1];
                         if (!gk) continue;
                         for (std::size_t i = 0; i < g.size(); ++i) (*gk)[i] += c[k] * g[i];
                       }
                     });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows()) {
    throw Error(ErrorCode::ShapeMismatch,
                "concat_cols " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), na = a.cols(), nb = b.cols();
  Buffer out(m * (na + nb));
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.data().begin() + i * na, na, out.begin() + i * (na + nb));
    std::copy_n(b.data().begin() + i * nb, nb, out.begin() + i * (na + nb) + na);
  }
  const Tensor inputs[] = {a, b};
  return make_result({m, na + nb}, std::move(out), inputs,
                     [m, na, nb](std::span<const double> g, std::span<Buffer* const> gin) {
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t j = 0; j < na; ++j) {
                           if (gin[0]) (*gin[0])[i * na + j] += g[i * (na + nb) + j];
                         }
                         for (std::size_t j = 0; j < nb; ++j) {
                           if (gin[1]) (*gin[1])[i * nb + j] += g[i * (na + nb) + na + j];
                         }
                       }
                     });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() != 2 || begin > end || end > a.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "slice_rows out of range for " + shape_string(a.shape()));
  }
  const std::size_t n = a.cols();
  Buffer out(a.data().begin() + begin * n, a.data().begin() + end * n);
  const Tensor inputs[] = {a};
  return make_result({end - begin, n}, std::move(out), inputs,
                     [begin, n](std::span<const double> g, std::span<Buffer* const> gin) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[begin * n + i] += g[i];
                     });
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw Error(ErrorCode::EmptyReduction, "stack_rows of nothing");
  const std::size_t n = rows[0].size();
  for (const auto& r : rows) {
    const bool row_like = r.rank() == 1 || (r.rank() == 2 && r.shape()[0] == 1);
    if (!row_like || r.size() != n) {
      throw Error(ErrorCode::ShapeMismatch, "stack_rows element " + shape_string(r.shape()));
    }
  }
  Buffer out;
  out.reserve(rows.size() * n);
  for (const auto& r : rows) out.insert(out.end(), r.data().begin(), r.data().end());
  return make_result({rows.size(), n}, std::move(out), rows,
                     [n](std::span<const double> g, std::span<Buffer* const> gin) {
                       for (std::size_t k = 0; k < gin.size(); ++k) {
                         if (!gin[k]) continue;
                         for (std::size_t j = 0; j < n; ++j) (*gin[k])[j] += g[k * n + j];
                       }
                     });
}

Tensor concat_rows(std::span<const Tensor> blocks) {
  if (blocks.empty()) throw Error(ErrorCode::EmptyReduction, "concat_rows of nothing");
  const std::size_t n = blocks[0].rank() == 2 ? blocks[0].cols() : 0;
  std::vector<std::size_t> offsets{0};
  for (const auto& b : blocks) {
    if (b.rank() != 2 || b.cols() != n) throw Error(ErrorCode::ShapeMismatch, "concat_rows block " + shape_string(b.shape()));
    offsets.push_back(offsets.back() + b.size());
  }
  Buffer out;
  out.reserve(offsets.back());
  for (const auto& b : blocks) out.insert(out.end(), b.data().begin(), b.data().end());
  return make_result({offsets.back() / std::max<std::size_t>(n, 1), n}, std::move(out), blocks,
                     [offsets](std::span<const double> g, std::span<Buffer* const> gin) {
                       for (std::size_t k = 0; k < gin.size(); ++k) {
                         if (!gin[k]) continue;
                         for (std::size_t j = offsets[k]; j < offsets[k + 1]; ++j) (*gin[k])[j - offsets[k]] += g[j];
                       }
                     });
}

}  // namespace tempo::ops
