#pragma once

#include "dartclean/series_io.hpp"
#include "dartclean/types.hpp"

#include <cmath>
#include <optional>

namespace dartclean {

struct NormStats
{
  double mean = 0.0;
  double std = 1.0; // population definition
};

// Gap-free series: flagged samples replaced by interpolation.
struct FilledSeries
{
  std::vector<std::int64_t> timestamps;
  Vector values;
  Mask interpolated;
};

struct NormalizedSeries
{
  Vector values;
  NormStats stats;
  Mask interpolated;
};

struct WindowBatch
{
  Matrix windows; // [num_windows x width], row i = series[origin_i .. origin_i + width - 1]
  std::vector<Index> origins;
  Index width = 0;
  Index series_length = 0;
};

inline constexpr Index kDefaultWindow = 48;

template <typename Derived> double mean_of(Eigen::DenseBase<Derived> const &x)
{
  return x.derived().sum() / static_cast<double>(x.size());
}

// Population standard deviation, two-pass.
template <typename Derived> double population_std(Eigen::DenseBase<Derived> const &x)
{
  double const m = mean_of(x);
  return std::sqrt((x.derived().array() - m).square().sum() / static_cast<double>(x.size()));
}

// Interior gaps are linearly interpolated between the nearest valid neighbours;
// leading gaps are back-filled and trailing gaps forward-filled.
FilledSeries fill_gaps(RawSeries const &series);

NormStats compute_norm_stats(Vector const &values);

// x~ = (x - mean) / std. With stats supplied they are used verbatim.
NormalizedSeries zscore_normalize(Vector const &values, std::optional<NormStats> stats = std::nullopt);
NormalizedSeries zscore_normalize(FilledSeries const &series, std::optional<NormStats> stats = std::nullopt);

// x = x~ * std + mean
template <typename Derived> Vector invert_zscore(Eigen::MatrixBase<Derived> const &normalized, NormStats const &stats)
{
  return (normalized.derived().array() * stats.std + stats.mean).matrix();
}

// Local z-score over the clamped window [t - half_width, t + half_width];
// std floored at 1e-8.
Vector sliding_window_normalize(Vector const &values, Index half_width);

WindowBatch make_windows(Vector const &series, Index width = kDefaultWindow, Index stride = 1);

} // namespace dartclean
