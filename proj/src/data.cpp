#include "tempo/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace tempo::data {

// ---------------------------------------------------------------- series

std::size_t IrregularSeries::observed_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

std::size_t IrregularSeries::heldout_count() const {
  return static_cast<std::size_t>(std::count(heldout.begin(), heldout.end(), 1));
}

IrregularSeries IrregularSeries::empty(std::string id, std::vector<double> times, std::size_t features) {
  IrregularSeries s;
  s.id = std::move(id);
  s.features = features;
  s.times = std::move(times);
  s.values.assign(s.times.size() * features, 0.0);
  s.mask.assign(s.times.size() * features, 0);
  s.heldout.assign(s.times.size() * features, 0);
  return s;
}

void validate(const IrregularSeries& s) {
  const std::size_t cells = s.times.size() * s.features;
  if (s.values.size() != cells || s.mask.size() != cells || s.heldout.size() != cells) {
    throw Error(ErrorCode::ShapeMismatch, "series " + s.id + ": cell arrays do not match T×D");
  }
  if (!s.time_labels.empty() && s.time_labels.size() != s.times.size()) {
    throw Error(ErrorCode::ShapeMismatch, "series " + s.id + ": per-time labels do not match T");
  }
  for (std::size_t t = 0; t < s.times.size(); ++t) {
    if (!std::isfinite(s.times[t])) throw Error(ErrorCode::NonFinite, "series " + s.id + ": time");
    if (t > 0 && !(s.times[t] > s.times[t - 1])) {
      throw Error(ErrorCode::NonMonotoneTimes, "series " + s.id + ": times not strictly increasing");
    }
  }
  for (std::size_t c = 0; c < cells; ++c) {
    if (s.mask[c] > 1 || s.heldout[c] > 1) throw Error(ErrorCode::InvalidArgument, "series " + s.id + ": mask not 0/1");
    if (s.mask[c] && s.heldout[c]) {
      throw Error(ErrorCode::InvalidArgument, "series " + s.id + ": cell both observed and heldout");
    }
    if ((s.mask[c] || s.heldout[c]) && !std::isfinite(s.values[c])) {
      throw Error(ErrorCode::NonFinite, "series " + s.id + ": non-finite value at a used cell");
    }
  }
}

// ---------------------------------------------------------------- synthetic

void validate(const SyntheticSpec& s) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidSpec, what); };
  if (s.n_samples == 0) fail("n_samples must be positive");
  if (s.grid_size < 2) fail("grid_size must be at least 2");
  if (s.n_features == 0) fail("n_features must be positive");
  if (!(s.t_end > s.t_start)) fail("time span must be increasing");
  if (!(s.sparsity > 0.0 && s.sparsity <= 1.0)) fail("sparsity must lie in (0, 1]");
  if (s.freq_lo > s.freq_hi || s.amp_lo > s.amp_hi || s.phase_lo > s.phase_hi || s.jump_lo > s.jump_hi) fail("ranges must be ordered");
  if (s.noise_sigma < 0) fail("noise_sigma must be non-negative");
  if (s.discontinuity_prob < 0 || s.discontinuity_prob > 1) fail("discontinuity_prob must lie in [0, 1]");
}

std::vector<IrregularSeries> generate_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  const std::size_t t_count = spec.grid_size;
  const std::size_t d = spec.n_features;
  const double span = spec.t_end - spec.t_start;
  std::vector<double> grid(t_count);
  for (std::size_t k = 0; k < t_count; ++k) {
    grid[k] = spec.t_start + span * static_cast<double>(k) / static_cast<double>(t_count - 1);
  }
  const auto n_observed =
      static_cast<std::size_t>(std::ceil(spec.sparsity * static_cast<double>(t_count) - 1e-9));

  std::vector<IrregularSeries> out;
  out.reserve(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    std::mt19937_64 rng(spec.seed + i);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto draw = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    std::normal_distribution<double> noise(0.0, 1.0);

    IrregularSeries s = IrregularSeries::empty("s" + std::to_string(i), grid, d);
    for (std::size_t f = 0; f < d; ++f) {
      const double freq = draw(spec.freq_lo, spec.freq_hi) / span;
      const double amp = draw(spec.amp_lo, spec.amp_hi);
      const double phase0 = draw(spec.phase_lo, spec.phase_hi);
      const bool jump = unit(rng) < spec.discontinuity_prob;
      const double jump_time = draw(spec.t_start, spec.t_end);
      const double jump_size = draw(spec.jump_lo, spec.jump_hi);
      for (std::size_t k = 0; k < t_count; ++k) {
        double y = amp * std::sin(2.0 * std::numbers::pi * freq * (grid[k] - spec.t_start) + phase0);
        if (jump && grid[k] >= jump_time) y += jump_size;
        if (spec.noise_sigma > 0) y += spec.noise_sigma * noise(rng);
        s.values[s.cell(k, f)] = y;
      }
    }

    std::vector<std::size_t> order(t_count);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::fill(s.heldout.begin(), s.heldout.end(), 1);
    for (std::size_t r = 0; r < n_observed; ++r) {
      for (std::size_t f = 0; f < d; ++f) {
        s.mask[s.cell(order[r], f)] = 1;
        s.heldout[s.cell(order[r], f)] = 0;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------- CSV

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  for (auto& c : cells) {
    if (!c.empty() && c.back() == '\r') c.pop_back();
  }
  return cells;
}

double parse_double(const std::string& text, std::size_t row, std::size_t col) {
  double v = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end || !std::isfinite(v)) {
    throw Error(ErrorCode::ParseError,
                "row " + std::to_string(row) + ", col " + std::to_string(col) + ": '" + text + "' is not a number");
  }
  return v;
}

struct ParsedRow {
  std::string time_text;
  double time = 0.0;
  std::vector<std::optional<double>> cells;
  std::optional<int> label;
  std::size_t line = 0;
};

struct ParsedFile {
  std::vector<std::string> feature_names;
  bool has_label = false;
  std::vector<std::string> order;  // sample ids by first appearance
  std::unordered_map<std::string, std::vector<ParsedRow>> rows;
};

ParsedFile parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, path.string() + ": missing header");
  const auto header = split_line(line);
  if (header.size() < 3 || header[0] != "sample_id" || header[1] != "time") {
    throw Error(ErrorCode::ParseError, path.string() + ": header must start with sample_id,time and name a feature");
  }
  ParsedFile file;
  file.has_label = header.back() == "label";
  file.feature_names.assign(header.begin() + 2, header.end() - (file.has_label ? 1 : 0));
  if (file.feature_names.empty()) throw Error(ErrorCode::ParseError, path.string() + ": no feature columns");

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::ParseError, "row " + std::to_string(line_no) + ": expected " +
                                             std::to_string(header.size()) + " columns, got " +
                                             std::to_string(cells.size()));
    }
    ParsedRow row;
    row.line = line_no;
    row.time_text = cells[1];
    row.time = parse_double(cells[1], line_no, 2);
    for (std::size_t f = 0; f < file.feature_names.size(); ++f) {
      const auto& c = cells[2 + f];
      row.cells.push_back(c.empty() ? std::nullopt : std::optional<double>(parse_double(c, line_no, 3 + f)));
    }
    if (file.has_label && !cells.back().empty()) {
      const double lv = parse_double(cells.back(), line_no, cells.size());
      if (lv != std::floor(lv)) {
        throw Error(ErrorCode::ParseError, "row " + std::to_string(line_no) + ": label must be an integer");
      }
      row.label = static_cast<int>(lv);
    }
    auto [it, inserted] = file.rows.try_emplace(cells[0]);
    if (inserted) file.order.push_back(cells[0]);
    it->second.push_back(std::move(row));
  }
  return file;
}

void sort_rows(const std::string& id, std::vector<ParsedRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const ParsedRow& a, const ParsedRow& b) { return a.time < b.time; });
  for (std::size_t k = 1; k < rows.size(); ++k) {
    if (rows[k].time == rows[k - 1].time) {
      if (rows[k].time_text == rows[k - 1].time_text) {
        throw Error(ErrorCode::DuplicateTime, "sample " + id + " repeats time " + rows[k].time_text + " (rows " +
                                                  std::to_string(rows[k - 1].line) + ", " +
                                                  std::to_string(rows[k].line) + ")");
      }
      throw Error(ErrorCode::NonMonotoneAfterSort, "sample " + id + ": times '" + rows[k - 1].time_text + "' and '" +
                                                       rows[k].time_text + "' coincide");
    }
  }
}

void write_rows(std::ostream& os, std::span<const IrregularSeries> series, const std::vector<std::string>& names,
                bool heldout_cells) {
  if (series.empty()) throw Error(ErrorCode::InvalidArgument, "nothing to write");
  const std::size_t d = series[0].features;
  bool any_label = false;
  for (const auto& s : series) {
    if (s.features != d) throw Error(ErrorCode::ShapeMismatch, "series disagree on feature width");
    any_label = any_label || s.label.has_value() || !s.time_labels.empty();
  }
  os << "sample_id,time";
  for (std::size_t f = 0; f < d; ++f) os << ',' << (f < names.size() ? names[f] : "f" + std::to_string(f + 1));
  if (any_label) os << ",label";
  os << '\n';
  for (const auto& s : series) {
    validate(s);
    const auto& use = heldout_cells ? s.heldout : s.mask;
    for (std::size_t t = 0; t < s.length(); ++t) {
      os << s.id << ',' << format_double(s.times[t]);
      for (std::size_t f = 0; f < d; ++f) {
        os << ',';
        if (use[s.cell(t, f)]) os << format_double(s.values[s.cell(t, f)]);
      }
      if (any_label) {
        os << ',';
        if (!s.time_labels.empty()) {
          os << s.time_labels[t];
        } else if (s.label) {
          os << *s.label;
        }
      }
      os << '\n';
    }
  }
}

}  // namespace

std::vector<IrregularSeries> load_csv(const std::filesystem::path& path) {
  ParsedFile file = parse_file(path);
  const std::size_t d = file.feature_names.size();
  std::vector<IrregularSeries> out;
  for (const auto& id : file.order) {
    auto& rows = file.rows[id];
    sort_rows(id, rows);
    std::vector<double> times;
    for (const auto& r : rows) times.push_back(r.time);
    IrregularSeries s = IrregularSeries::empty(id, std::move(times), d);
    bool labelled = false;
    for (std::size_t t = 0; t < rows.size(); ++t) {
      for (std::size_t f = 0; f < d; ++f) {
        if (rows[t].cells[f]) {
          s.values[s.cell(t, f)] = *rows[t].cells[f];
          s.mask[s.cell(t, f)] = 1;
        }
      }
      labelled = labelled || rows[t].label.has_value();
    }
    if (labelled) {
      for (const auto& r : rows) s.time_labels.push_back(r.label.value_or(-1));
      s.label = rows.front().label;
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_csv(const std::filesystem::path& path, std::span<const IrregularSeries> series,
               const std::vector<std::string>& feature_names) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  write_rows(os, series, feature_names, false);
  if (!os) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::filesystem::path heldout_path(const std::filesystem::path& path) {
  auto p = path;
  p.replace_filename(path.stem().string() + ".heldout.csv");
  return p;
}

void write_dataset(const std::filesystem::path& path, std::span<const IrregularSeries> series,
                   const std::vector<std::string>& feature_names) {
  write_csv(path, series, feature_names);
  std::ofstream os(heldout_path(path));
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + heldout_path(path).string());
  write_rows(os, series, feature_names, true);
}

std::vector<IrregularSeries> load_dataset(const std::filesystem::path& path) {
  auto series = load_csv(path);
  const auto hpath = heldout_path(path);
  if (!std::filesystem::exists(hpath)) return series;
  const auto held = load_csv(hpath);
  if (held.size() != series.size()) throw Error(ErrorCode::ParseError, hpath.string() + ": sample count differs");
  for (std::size_t i = 0; i < series.size(); ++i) {
    auto& s = series[i];
    const auto& h = held[i];
    if (h.id != s.id || h.times != s.times || h.features != s.features) {
      throw Error(ErrorCode::ParseError, hpath.string() + ": layout differs for sample " + s.id);
    }
    for (std::size_t c = 0; c < s.mask.size(); ++c) {
      if (!h.mask[c]) continue;
      if (s.mask[c]) throw Error(ErrorCode::ParseError, "sample " + s.id + ": cell both observed and heldout");
      s.heldout[c] = 1;
      s.values[c] = h.values[c];
    }
  }
  return series;
}

// ---------------------------------------------------------------- normalization

DatasetSplit split_dataset(std::vector<IrregularSeries> series, double train_fraction, double val_fraction,
                           std::uint64_t seed) {
  if (train_fraction <= 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0 + 1e-12) {
    throw Error(ErrorCode::InvalidConfig, "split fractions must be positive and sum to at most 1");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(series.begin(), series.end(), rng);
  const std::size_t n = series.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  const auto n_val = std::min(n - std::min(n, n_train),
                              static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n))));
  DatasetSplit split;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? split.train : (i < n_train + n_val ? split.validation : split.test);
    dst.push_back(std::move(series[i]));
  }
  if (split.train.empty()) throw Error(ErrorCode::InvalidConfig, "train split is empty");
  return split;
}

NormStats compute_stats(std::span<const IrregularSeries> train) {
  if (train.empty()) throw Error(ErrorCode::InvalidArgument, "no training series for normalization");
  const std::size_t d = train[0].features;
  NormStats st;
  st.mean.assign(d, 0.0);
  st.std.assign(d, 1.0);
  for (std::size_t f = 0; f < d; ++f) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& s : train) {
      for (std::size_t t = 0; t < s.length(); ++t) {
        if (s.mask[s.cell(t, f)]) {
          sum += s.values[s.cell(t, f)];
          ++count;
        }
      }
    }
    if (count < 2) {
      st.mean[f] = 0.0;
      continue;
    }
    const double mu = sum / static_cast<double>(count);
    double ss = 0.0;
    for (const auto& s : train) {
      for (std::size_t t = 0; t < s.length(); ++t) {
        if (s.mask[s.cell(t, f)]) ss += (s.values[s.cell(t, f)] - mu) * (s.values[s.cell(t, f)] - mu);
      }
    }
    const double sd = std::sqrt(ss / static_cast<double>(count - 1));
    if (sd > 0) {
      st.mean[f] = mu;
      st.std[f] = sd;
    } else {
      // Degenerate: leave unscaled.
      st.mean[f] = 0.0;
    }
  }
  return st;
}

void apply_normalization(IrregularSeries& s, const NormStats& st) {
  for (std::size_t t = 0; t < s.length(); ++t)
    for (std::size_t f = 0; f < s.features; ++f) {
      const std::size_t c = s.cell(t, f);
      if (s.mask[c] || s.heldout[c]) s.values[c] = (s.values[c] - st.mean[f]) / st.std[f];
    }
}

void apply_denormalization(IrregularSeries& s, const NormStats& st) {
  for (std::size_t t = 0; t < s.length(); ++t)
    for (std::size_t f = 0; f < s.features; ++f) {
      const std::size_t c = s.cell(t, f);
      if (s.mask[c] || s.heldout[c]) s.values[c] = s.values[c] * st.std[f] + st.mean[f];
    }
}

DatasetSplit normalize(DatasetSplit split) {
  split.stats = compute_stats(split.train);
  for (auto* part : {&split.train, &split.validation, &split.test})
    for (auto& s : *part) apply_normalization(s, split.stats);
  return split;
}

DatasetSplit denormalize(DatasetSplit split) {
  for (auto* part : {&split.train, &split.validation, &split.test})
    for (auto& s : *part) apply_denormalization(s, split.stats);
  return split;
}

// ---------------------------------------------------------------- batching

namespace {

Tensor gather(const Batch& b, std::size_t t, bool values, bool heldout) {
  const std::size_t n = b.size * b.features;
  Buffer out(n, 0.0);
  const std::size_t off = b.offset(t, 0);
  const auto& m = heldout ? b.heldout : b.mask;
  for (std::size_t i = 0; i < n; ++i) {
    if (m[off + i]) out[i] = values ? b.values[off + i] : 1.0;
  }
  return Tensor({b.size, b.features}, std::move(out));
}

}  // namespace

Tensor Batch::observed_values(std::size_t t) const { return gather(*this, t, true, false); }
Tensor Batch::observed_mask(std::size_t t) const { return gather(*this, t, false, false); }
Tensor Batch::heldout_values(std::size_t t) const { return gather(*this, t, true, true); }
Tensor Batch::heldout_mask(std::size_t t) const { return gather(*this, t, false, true); }

bool Batch::any_observed(std::size_t t) const {
  const std::size_t off = offset(t, 0);
  return std::any_of(mask.begin() + static_cast<std::ptrdiff_t>(off),
                     mask.begin() + static_cast<std::ptrdiff_t>(off + size * features),
                     [](std::uint8_t v) { return v != 0; });
}

std::size_t Batch::observed_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

Batch make_batch(std::span<const IrregularSeries> series, std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error(ErrorCode::InvalidArgument, "empty batch");
  Batch b;
  b.features = series[indices[0]].features;
  for (auto i : indices) {
    if (i >= series.size()) throw Error(ErrorCode::InvalidArgument, "batch index out of range");
    if (series[i].features != b.features) throw Error(ErrorCode::ShapeMismatch, "feature width differs in batch");
    b.times.insert(b.times.end(), series[i].times.begin(), series[i].times.end());
  }
  std::sort(b.times.begin(), b.times.end());
  b.times.erase(std::unique(b.times.begin(), b.times.end()), b.times.end());

  b.size = indices.size();
  b.indices.assign(indices.begin(), indices.end());
  const std::size_t cells = b.times.size() * b.size * b.features;
  b.values.assign(cells, 0.0);
  b.mask.assign(cells, 0);
  b.heldout.assign(cells, 0);
  b.labels.resize(b.size);
  b.time_labels.assign(b.size, std::vector<int>(b.times.size(), -1));

  for (std::size_t k = 0; k < b.size; ++k) {
    const auto& s = series[indices[k]];
    b.labels[k] = s.label;
    std::size_t u = 0;
    for (std::size_t t = 0; t < s.length(); ++t) {
      while (b.times[u] != s.times[t]) ++u;
      for (std::size_t f = 0; f < b.features; ++f) {
        const std::size_t src = s.cell(t, f);
        const std::size_t dst = b.offset(u, k) + f;
        b.values[dst] = s.values[src];
        b.mask[dst] = s.mask[src];
        b.heldout[dst] = s.heldout[src];
      }
      if (!s.time_labels.empty()) b.time_labels[k][u] = s.time_labels[t];
    }
  }
  return b;
}

Batch make_batch(std::span<const IrregularSeries> series) {
  std::vector<std::size_t> idx(series.size());
  std::iota(idx.begin(), idx.end(), 0);
  return make_batch(series, idx);
}

}  // namespace tempo::data
