#include <cmath>
#include <numbers>
#include <random>

#include "checks.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "tempo/error.hpp"
#include "tempo/ops.hpp"
#include "tempo/temporal.hpp"

using namespace tempo;

namespace {

TemporalWeightLayer make_layer(std::size_t d_in, std::size_t d_out, CouplingMode mode, std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  TemporalOptions opt;
  opt.coupling = mode;
  return TemporalWeightLayer("l", d_in, d_out, opt, rng);
}

void set(Parameter& p, std::vector<double> v) { p.assign(v); }

}  // namespace

TEST_SUITE("temporal") {

TEST_CASE("all-equal base with zero phase gives zero weights") {
  for (std::size_t n : {1ul, 3ul, 8ul}) {
    auto l = make_layer(n, 2, CouplingMode::rank1);
    set(l.base(), std::vector<double>(2 * n, 0.37));
    set(l.phase_offset(), {0.0});
    const Tensor w = scale(l, 1.3, nullptr);
    for (double x : w.data()) CHECK(std::abs(x) <= 1e-15);
  }
}

TEST_CASE("two-weight hand sum") {
  auto l = make_layer(1, 2, CouplingMode::scalar);
  set(l.base(), {0.0, 1.0});
  set(l.freq_scale(), {std::numbers::pi / 2});
  set(l.phase_offset(), {0.0});
  const Tensor w = scale(l, 1.0, nullptr);
  CHECK(w[0] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(w[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(w.shape() == Shape{1, 2});
}

TEST_CASE("matches the double loop on small layers") {
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t d_in = 1 + rep % 4, d_out = 1 + rep % 3;
    const auto mode = static_cast<CouplingMode>(rep % 3);
    TemporalOptions opt;
    opt.coupling = mode;
    opt.per_weight_rate = rep % 2;
    TemporalWeightLayer l("l", d_in, d_out, opt, rng);
    l.coupling().assign(oracle::uniform(rng, l.coupling().size(), -1.5, 1.5));
    l.freq_scale().assign(oracle::uniform(rng, l.freq_scale().size(), -2, 2));
    set(l.phase_rate(), oracle::uniform(rng, 1, -1, 1));
    set(l.phase_offset(), oracle::uniform(rng, 1, -3, 3));
    const double t = oracle::uniform(rng, 1, -4, 4)[0];
    const std::vector<double> w(l.base().value().begin(), l.base().value().end());
    const std::vector<double> k(l.coupling().value().begin(), l.coupling().value().end());
    const std::vector<double> a(l.freq_scale().value().begin(), l.freq_scale().value().end());
    const auto want = oracle::coupled_sine(w, static_cast<oracle::Coupling>(mode), k, a, l.phase_rate().value()[0],
                                           l.phase_offset().value()[0], t);
    const Tensor got = scale(l, t, nullptr);
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12);
  }
}

TEST_CASE("algebraic invariants") {
  const auto r = checks::scale_algebra(21, 300);
  CHECK(r.translation <= 1e-12);
  CHECK(r.periodicity <= 1e-12);
  CHECK(r.bound_excess <= 1e-12);
  CHECK(r.coupling <= 1e-12);
}

TEST_CASE("gradients match finite differences") { CHECK(checks::scale_gradient_error(8, 3) < 1e-5); }

TEST_CASE("differentiable in t") {
  auto l = make_layer(2, 3, CouplingMode::rank1, 4);
  set(l.phase_rate(), {0.4});
  const Tensor c = Tensor::matrix(2, 3, {1, -2, 0.5, 0.3, 1, -1});
  auto tape = Tape::create();
  const Tensor t = tape->leaf(Tensor::scalar(0.8));
  tape->backward(ops::sum(ops::mul(scale(l, t, tape.get()), c)));
  const double analytic = tape->grad(t).item();
  auto f = [&](double tv) { return ops::sum(ops::mul(scale(l, tv, nullptr), c)).item(); };
  const double numeric = (f(0.8 + 1e-6) - f(0.8 - 1e-6)) / 2e-6;
  CHECK(oracle::rel_err(analytic, numeric) < 1e-6);
}

TEST_CASE("weights change with time") {
  std::mt19937_64 rng(6);
  for (CouplingMode mode : {CouplingMode::scalar, CouplingMode::rank1, CouplingMode::full}) {
    auto l = make_layer(3, 4, mode, 7);
    std::vector<Tensor> outs;
    for (double t : oracle::uniform(rng, 8, 0, 10)) outs.push_back(scale(l, t, nullptr));
    double spread = 0.0;
    for (const Tensor& o : outs)
      for (std::size_t i = 0; i < o.size(); ++i) spread = std::max(spread, std::abs(o[i] - outs[0][i]));
    CHECK(spread > 1e-6);
  }
}

TEST_CASE("unit range stays inside [0,1]") {
  std::mt19937_64 rng(2);
  TemporalOptions opt;
  opt.range = RangeMode::unit;
  TemporalWeightLayer l("u", 4, 4, opt, rng);
  for (double t : oracle::uniform(rng, 20, -5, 5)) {
    const Tensor w = scale(l, t, nullptr);
    for (double x : w.data()) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
  }
}

TEST_CASE("residual adds the base weights") {
  std::mt19937_64 rng(1);
  TemporalOptions opt;
  TemporalWeightLayer plain("p", 3, 2, opt, rng);
  opt.residual = true;
  TemporalWeightLayer res("r", 3, 2, opt, rng);
  res.base().assign(plain.base().value());
  const Tensor a = scale(plain, 0.6, nullptr), b = scale(res, 0.6, nullptr);
  for (std::size_t i = 0; i < 6; ++i) CHECK(b[i] == doctest::Approx(a[i] + plain.base().value()[i]).epsilon(1e-15));
}

TEST_CASE("full coupling is refused above the cap") {
  std::mt19937_64 rng(0);
  TemporalOptions opt;
  opt.coupling = CouplingMode::full;
  opt.full_coupling_cap = 16;
  CHECK_NOTHROW(TemporalWeightLayer("ok", 4, 4, opt, rng));
  CHECK_THROWS_AS(TemporalWeightLayer("big", 4, 5, opt, rng), Error);
}

TEST_CASE("initialization") {
  auto l = make_layer(4, 3, CouplingMode::rank1, 12);
  for (double w : l.base().value()) CHECK(std::abs(w) <= 0.5);
  for (double k : l.coupling().value()) CHECK(k == 1.0);
  CHECK(l.freq_scale().value()[0] == 1.0);
  CHECK(l.phase_rate().value()[0] == 0.0);
  CHECK(l.phase_offset().value()[0] == doctest::Approx(std::numbers::pi / 2));
}

TEST_CASE("parameter counts") {
  std::mt19937_64 rng(0);
  StaticLayer s("s", 3, 2, rng);
  std::size_t n = 0;
  for (auto* p : s.parameters()) n += p->size();
  CHECK(n == 8);
  auto count = [](TemporalWeightLayer&& l) {
    std::size_t c = 0;
    for (auto* p : l.parameters()) c += p->size();
    return c;
  };
  CHECK(count(make_layer(3, 2, CouplingMode::rank1)) == 17);
  CHECK(count(make_layer(3, 2, CouplingMode::full)) == 47);
  CHECK(count(make_layer(3, 2, CouplingMode::scalar)) == 12);
}

TEST_CASE("static_forward") {
  std::mt19937_64 rng(0);
  StaticLayer s("s", 2, 2, rng);
  s.weight_param().assign(std::vector<double>{1, 0, 0, 1});
  s.bias().assign(std::vector<double>{0, 0});
  const Tensor y = static_forward(s, Tensor::matrix(1, 2, {1, 2}));
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 2.0);
  s.bias().assign(std::vector<double>{0.5, -1});
  const Tensor z = static_forward(s, Tensor::matrix(1, 2, {0, 0}));
  CHECK(z[0] == 0.5);
  CHECK(z[1] == -1.0);

  StaticLayer r("r", 3, 2, rng);
  const std::vector<double> h{0.2, -0.7, 1.1};
  const Tensor out = static_forward(r, Tensor::matrix(1, 3, h));
  const std::vector<double> w(r.weight_param().value().begin(), r.weight_param().value().end());
  const auto want = oracle::naive_matmul(h, w, 1, 3, 2);
  for (std::size_t j = 0; j < 2; ++j) CHECK(out[j] == doctest::Approx(want[j] + r.bias().value()[j]).epsilon(1e-14));
  CHECK_THROWS_AS(static_forward(r, Tensor::matrix(1, 2, {1, 2})), Error);
}

TEST_CASE("complexity probe") {
  TemporalOptions opt;
  opt.coupling = CouplingMode::full;
  std::mt19937_64 rng(0);
  TemporalWeightLayer big("b", 25, 25, opt, rng);
  CHECK(scale_complexity_probe(big, ScaleEval::materialized).buffer_entries == 390625);
  CHECK(scale_complexity_probe(big, ScaleEval::streamed).buffer_entries == 625);

  // Instrumented loop: count each arithmetic or trig operation of the direct sum.
  for (CouplingMode mode : {CouplingMode::scalar, CouplingMode::rank1, CouplingMode::full}) {
    auto l = make_layer(2, 2, mode);
    const auto w = l.base().value();
    std::size_t ops = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double d = w[i] - w[j];
        ++ops;
        const double a = d * 1.0;
        ++ops;
        const double p = a + 0.5;
        ++ops;
        const double v = std::sin(p);
        ++ops;
        const double kv = v * 1.0;
        ++ops;
        s += kv;
        ++ops;
      }
      s *= 0.25;
      ++ops;
    }
    CHECK(scale_complexity_probe(l, ScaleEval::materialized).flops == ops);
    CHECK(scale_complexity_probe(l, ScaleEval::streamed).flops == ops);
    CHECK(scale_complexity_probe(l, ScaleEval::materialized).pairwise_terms == 16);
  }
}

TEST_CASE("parse and print options") {
  CHECK(parse_coupling("full") == CouplingMode::full);
  CHECK(to_string(parse_range("signed")) == "signed");
  CHECK(to_string(parse_eval("streamed")) == "streamed");
  CHECK_THROWS_AS(parse_coupling("dense"), Error);
}

}  // TEST_SUITE
