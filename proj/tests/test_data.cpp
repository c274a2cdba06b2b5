#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "doctest.h"
#include "tempo/data.hpp"
#include "tempo/error.hpp"
#include "tempo/training.hpp"

using namespace tempo;
using namespace tempo::data;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "tempo_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_text(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

ErrorCode load_error(const std::string& text) {
  const auto p = scratch("bad.csv");
  write_text(p, text);
  try {
    load_csv(p);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a load error");
  return ErrorCode::InvalidArgument;
}

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.n_samples = 12;
  s.grid_size = 40;
  s.seed = 3;
  return s;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("full sparsity observes everything") {
  auto spec = small_spec();
  spec.sparsity = 1.0;
  for (const auto& s : generate_synthetic(spec)) {
    CHECK(s.observed_count() == s.length());
    CHECK(s.heldout_count() == 0);
  }
}

TEST_CASE("noise-free samples are exact sinusoids") {
  auto spec = small_spec();
  spec.noise_sigma = 0.0;
  spec.discontinuity_prob = 0.0;
  for (const auto& s : generate_synthetic(spec)) {
    // a sinusoid sampled on a uniform grid satisfies y[k-1] + y[k+1] = 2cos(ωΔ)·y[k]
    std::optional<double> ratio;
    for (std::size_t k = 1; k + 1 < s.length(); ++k) {
      if (std::abs(s.values[k]) < 0.2) continue;
      const double r = (s.values[k - 1] + s.values[k + 1]) / s.values[k];
      if (ratio) CHECK(std::abs(r - *ratio) < 1e-9);
      ratio = r;
    }
  }
}

TEST_CASE("a fixed phase range pins the starting value") {
  auto spec = small_spec();
  spec.noise_sigma = 0.0;
  spec.discontinuity_prob = 0.0;
  spec.phase_lo = spec.phase_hi = std::numbers::pi / 2;
  for (const auto& s : generate_synthetic(spec)) {
    CHECK(s.values[0] >= spec.amp_lo - 1e-12);
    CHECK(s.values[0] <= spec.amp_hi + 1e-12);
  }
  spec.phase_lo = 1.0;
  spec.phase_hi = 0.5;
  CHECK_THROWS_AS(validate(spec), Error);
}

TEST_CASE("sparsity 0.1 on a 100-point grid observes 10 points") {
  SyntheticSpec spec;
  spec.n_samples = 5;
  for (const auto& s : generate_synthetic(spec)) {
    CHECK(s.length() == 100);
    CHECK(s.observed_count() == 10);
    CHECK(s.heldout_count() == 90);
    validate(s);
  }
}

TEST_CASE("generation is deterministic and seed dependent") {
  const auto a = generate_synthetic(small_spec()), b = generate_synthetic(small_spec());
  auto other = small_spec();
  other.seed = 4;
  const auto c = generate_synthetic(other);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].values == b[i].values);
    CHECK(a[i].mask == b[i].mask);
  }
  CHECK(a[0].values != c[0].values);
}

TEST_CASE("invalid specs are rejected") {
  auto spec = small_spec();
  spec.sparsity = 0.0;
  CHECK_THROWS_AS(generate_synthetic(spec), Error);
  spec = small_spec();
  spec.freq_lo = 4.0;
  CHECK_THROWS_AS(generate_synthetic(spec), Error);
}

TEST_CASE("csv examples") {
  const auto p = scratch("ok.csv");
  write_text(p, "sample_id,time,a,b\ns1,0.5,1,2\ns1,0.1,3,\n");
  const auto series = load_csv(p);
  REQUIRE(series.size() == 1);
  const auto& s = series[0];
  CHECK(s.times == std::vector<double>{0.1, 0.5});
  CHECK(s.mask == std::vector<std::uint8_t>{1, 0, 1, 1});
  CHECK(s.values[0] == 3.0);

  write_text(p, "sample_id,time,a\nx,0,1\nx,1,2\n");
  CHECK(load_csv(p)[0].mask == std::vector<std::uint8_t>{1, 1});
}

TEST_CASE("csv errors") {
  CHECK(load_error("sample_id,time,a\ns,0,1\ns,0,2\n") == ErrorCode::DuplicateTime);
  CHECK(load_error("sample_id,time,a\ns,0,abc\n") == ErrorCode::ParseError);
  CHECK(load_error("sample_id,time,a\ns,0,1,2\n") == ErrorCode::ParseError);
  CHECK(load_error("id,t,a\ns,0,1\n") == ErrorCode::ParseError);
}

TEST_CASE("csv round trip with labels") {
  auto series = generate_synthetic(small_spec());
  for (std::size_t i = 0; i < series.size(); ++i) series[i].label = static_cast<int>(i % 2);
  const auto p = scratch("round.csv");
  write_csv(p, series);
  const auto back = load_csv(p);
  REQUIRE(back.size() == series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& a = series[i];
    const auto& b = back[i];
    CHECK(a.id == b.id);
    CHECK(a.label == b.label);
    CHECK(b.times == a.times);
    CHECK(b.mask == a.mask);
    for (std::size_t c = 0; c < a.values.size(); ++c)
      if (a.mask[c]) CHECK(b.values[c] == a.values[c]);
  }
}

TEST_CASE("dataset round trip keeps heldout cells") {
  const auto series = generate_synthetic(small_spec());
  const auto p = scratch("set.csv");
  write_dataset(p, series);
  CHECK(std::filesystem::exists(heldout_path(p)));
  const auto back = load_dataset(p);
  REQUIRE(back.size() == series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    CHECK(back[i].times == series[i].times);
    CHECK(back[i].mask == series[i].mask);
    CHECK(back[i].heldout == series[i].heldout);
    for (std::size_t c = 0; c < series[i].values.size(); ++c) {
      if (series[i].mask[c] || series[i].heldout[c]) CHECK(back[i].values[c] == series[i].values[c]);
    }
  }
}

TEST_CASE("normalization") {
  auto split = split_dataset(generate_synthetic(small_spec()), 0.5, 0.25, 9);
  CHECK(split.train.size() == 6);
  CHECK(split.validation.size() == 3);
  CHECK(split.test.size() == 3);
  std::set<std::string> ids;
  for (auto* part : {&split.train, &split.validation, &split.test})
    for (auto& s : *part) CHECK(ids.insert(s.id).second);

  const auto original = split;
  const auto norm = normalize(split);
  // stats come from observed train cells only
  double sum = 0, n = 0;
  for (auto& s : original.train)
    for (std::size_t c = 0; c < s.values.size(); ++c)
      if (s.mask[c]) sum += s.values[c], n += 1;
  CHECK(norm.stats.mean[0] == doctest::Approx(sum / n).epsilon(1e-12));

  const auto again = compute_stats(norm.train);
  CHECK(std::abs(again.mean[0]) < 1e-9);
  CHECK(std::abs(again.std[0] - 1.0) < 1e-9);

  const auto back = denormalize(norm);
  for (std::size_t i = 0; i < back.test.size(); ++i)
    for (std::size_t c = 0; c < back.test[i].values.size(); ++c)
      if (back.test[i].mask[c] || back.test[i].heldout[c])
        CHECK(std::abs(back.test[i].values[c] - original.test[i].values[c]) <= 1e-12);
}

TEST_CASE("constant features stay unscaled") {
  auto s = IrregularSeries::empty("c", {0, 1, 2}, 1);
  s.values = {4, 4, 4};
  s.mask = {1, 1, 1};
  const IrregularSeries one[] = {s};
  const NormStats st = compute_stats(one);
  CHECK(st.std[0] == 1.0);
  auto t = s;
  apply_normalization(t, st);
  CHECK(t.values == s.values);
}

TEST_CASE("batching") {
  auto a = IrregularSeries::empty("a", {1, 3}, 1), b = IrregularSeries::empty("b", {2}, 1);
  a.mask = {1, 1};
  b.mask = {1};
  const std::vector<IrregularSeries> pair{a, b};
  const Batch batch = make_batch(pair);
  CHECK(batch.times == std::vector<double>{1, 2, 3});
  std::vector<int> ma, mb;
  for (std::size_t t = 0; t < 3; ++t) {
    ma.push_back(batch.mask[batch.offset(t, 0)]);
    mb.push_back(batch.mask[batch.offset(t, 1)]);
  }
  CHECK(ma == std::vector<int>{1, 0, 1});
  CHECK(mb == std::vector<int>{0, 1, 0});

  const std::vector<IrregularSeries> single{a};
  const Batch one = make_batch(single);
  CHECK(one.times == a.times);
  CHECK(one.mask == a.mask);

  const auto series = generate_synthetic(small_spec());
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < series.size(); ++i)
      if (rng() % 2) idx.push_back(i);
    if (idx.empty()) continue;
    const Batch bb = make_batch(series, idx);
    for (std::size_t t = 1; t < bb.times.size(); ++t) CHECK(bb.times[t] > bb.times[t - 1]);
    std::size_t want = 0;
    for (auto i : idx) want += series[i].observed_count();
    CHECK(bb.observed_count() == want);
  }
}

TEST_CASE("training loss never reads heldout cells") {
  auto spec = small_spec();
  spec.n_samples = 4;
  const auto series = generate_synthetic(spec);
  auto scrambled = series;
  std::mt19937_64 rng(5);
  for (auto& s : scrambled)
    for (std::size_t c = 0; c < s.values.size(); ++c)
      if (s.heldout[c]) s.values[c] = std::uniform_real_distribution<double>(-50, 50)(rng);
  models::ModelConfig mc;
  mc.latent_dim = 3;
  models::LatentOdeModel model(mc, 1, 1);
  training::LossSpec loss;
  for (auto task : {training::Task::reconstruction, training::Task::extrapolation}) {
    const training::TaskSpec ts{task, 0.5};
    std::mt19937_64 r1(2), r2(2);
    const double a = training::batch_loss(model, make_batch(series), ts, loss, 3, r1, nullptr).item();
    const double b = training::batch_loss(model, make_batch(scrambled), ts, loss, 3, r2, nullptr).item();
    CHECK(a == b);
  }
}

}  // TEST_SUITE
