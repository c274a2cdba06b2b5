#pragma once

#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tempo/tensor.hpp"

namespace tempo::data {

/// One irregularly sampled multivariate series. Cells are either observed
/// (mask = 1, usable for training), heldout (evaluation only) or absent.
struct IrregularSeries {
  std::string id;
  std::size_t features = 0;
  std::vector<double> times;           // strictly increasing, length T
  std::vector<double> values;          // T×D row-major
  std::vector<std::uint8_t> mask;      // T×D
  std::vector<std::uint8_t> heldout;   // T×D
  std::optional<int> label;            // whole-series class
  std::vector<int> time_labels;        // per-time classes (empty if none)

  std::size_t length() const { return times.size(); }
  std::size_t cell(std::size_t t, std::size_t f) const { return t * features + f; }
  std::size_t observed_count() const;
  std::size_t heldout_count() const;

  /// Empty series of T times with every cell absent.
  static IrregularSeries empty(std::string id, std::vector<double> times, std::size_t features);
};

/// Throws if any structural invariant is broken.
void validate(const IrregularSeries& s);

struct SyntheticSpec {
  std::size_t n_samples = 100;
  std::size_t grid_size = 100;
  std::size_t n_features = 1;
  double t_start = 0.0;
  double t_end = 1.0;
  double freq_lo = 1.0;  // cycles per span
  double freq_hi = 3.0;
  double amp_lo = 0.5;
  double amp_hi = 1.5;
  double phase_lo = 0.0;  // radians
  double phase_hi = 2.0 * std::numbers::pi;
  double noise_sigma = 0.05;
  double discontinuity_prob = 0.3;
  double jump_lo = -1.0;
  double jump_hi = 1.0;
  double sparsity = 0.1;  // fraction of grid points observed
  std::uint64_t seed = 0;
};

void validate(const SyntheticSpec& spec);

/// Noisy sinusoids with optional step jumps on a dense grid; a random
/// ⌈sparsity·grid⌉ subset of grid times is observed, the rest is heldout.
/// Sample i draws from its own generator seeded with seed + i.
std::vector<IrregularSeries> generate_synthetic(const SyntheticSpec& spec);

// ---------------------------------------------------------------- CSV

/// Header: sample_id,time,<f1>,...,<fD>[,label]. Empty cell = missing.
std::vector<IrregularSeries> load_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, std::span<const IrregularSeries> series,
               const std::vector<std::string>& feature_names = {});

/// Writes observed cells to path and heldout cells to the sibling
/// <stem>.heldout.csv, with identical row layout.
void write_dataset(const std::filesystem::path& path, std::span<const IrregularSeries> series,
                   const std::vector<std::string>& feature_names = {});
/// Reads a dataset written by write_dataset; the heldout file is optional.
std::vector<IrregularSeries> load_dataset(const std::filesystem::path& path);
std::filesystem::path heldout_path(const std::filesystem::path& path);

// ---------------------------------------------------------------- normalization

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
};

struct DatasetSplit {
  std::vector<IrregularSeries> train, validation, test;
  NormStats stats;
};

/// Shuffles with seed, then takes the given fractions for train/validation;
/// the rest goes to test.
DatasetSplit split_dataset(std::vector<IrregularSeries> series, double train_fraction, double val_fraction,
                           std::uint64_t seed);

/// Per-feature mean/std over observed train cells. Features with fewer than
/// two observations or zero spread keep std = 1.
NormStats compute_stats(std::span<const IrregularSeries> train);
void apply_normalization(IrregularSeries& s, const NormStats& stats);
void apply_denormalization(IrregularSeries& s, const NormStats& stats);
/// Computes stats from train and standardizes observed and heldout cells of every split.
DatasetSplit normalize(DatasetSplit split);
DatasetSplit denormalize(DatasetSplit split);

// ---------------------------------------------------------------- batching

/// Samples aligned on the sorted union of their times. Cells at times a
/// sample lacks are absent (mask and heldout 0).
struct Batch {
  std::vector<double> times;  // union grid, strictly increasing
  std::size_t size = 0;       // samples
  std::size_t features = 0;
  std::vector<std::size_t> indices;  // source indices
  std::vector<double> values;        // T×B×D
  std::vector<std::uint8_t> mask;    // T×B×D
  std::vector<std::uint8_t> heldout; // T×B×D
  std::vector<std::optional<int>> labels;          // per sample
  std::vector<std::vector<int>> time_labels;       // per sample, aligned to union times (-1 = none)

  std::size_t offset(std::size_t t, std::size_t b) const { return (t * size + b) * features; }

  /// B×D values at observed cells, zero elsewhere. Heldout values never leave the batch through this.
  Tensor observed_values(std::size_t t) const;
  Tensor observed_mask(std::size_t t) const;
  /// B×D values at heldout cells, zero elsewhere (evaluation only).
  Tensor heldout_values(std::size_t t) const;
  Tensor heldout_mask(std::size_t t) const;
  bool any_observed(std::size_t t) const;
  std::size_t observed_count() const;
};

Batch make_batch(std::span<const IrregularSeries> series, std::span<const std::size_t> indices);
Batch make_batch(std::span<const IrregularSeries> series);

}  // namespace tempo::data
