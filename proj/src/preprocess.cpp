#include "dartclean/preprocess.hpp"

#include "dartclean/error.hpp"

#include <algorithm>

namespace dartclean {

FilledSeries fill_gaps(RawSeries const &series)
{
  Index const n = series.size();
  if (static_cast<Index>(series.flags.size()) != n || static_cast<Index>(series.timestamps.size()) != n)
    throw ShapeError("raw series columns differ in length");

  std::vector<Index> valid;
  valid.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    if (!series.flagged(i))
      valid.push_back(i);
  if (valid.empty())
    throw DataError("series has no valid samples");

  FilledSeries out;
  out.timestamps = series.timestamps;
  out.values = series.values;
  out.interpolated = Mask::Constant(n, false);

  Index const first = valid.front();
  Index const last = valid.back();
  for (Index i = 0; i < first; ++i) {
    out.values[i] = series.values[first];
    out.interpolated[i] = true;
  }
  for (Index i = last + 1; i < n; ++i) {
    out.values[i] = series.values[last];
    out.interpolated[i] = true;
  }
  for (std::size_t k = 1; k < valid.size(); ++k) {
    Index const a = valid[k - 1];
    Index const b = valid[k];
    if (b - a < 2)
      continue;
    double const va = series.values[a];
    double const vb = series.values[b];
    for (Index i = a + 1; i < b; ++i) {
      double const frac = static_cast<double>(i - a) / static_cast<double>(b - a);
      out.values[i] = va + frac * (vb - va);
      out.interpolated[i] = true;
    }
  }
  return out;
}

NormStats compute_norm_stats(Vector const &values)
{
  if (values.size() == 0)
    throw DataError("cannot normalize an empty series");
  if (!values.allFinite())
    throw NumericError("series contains non-finite values");
  // One refinement pass of the mean keeps mean(x~) near zero when the level
  // dwarfs the spread, as with ~2.5 km water columns and cm-scale tides.
  double mean = mean_of(values);
  mean += mean_of(values.array() - mean);
  NormStats stats{mean, population_std(values)};
  if (stats.std <= 1e-12)
    throw DataError("degenerate series: standard deviation is zero");
  return stats;
}

NormalizedSeries zscore_normalize(Vector const &values, std::optional<NormStats> stats)
{
  NormStats const s = stats ? *stats : compute_norm_stats(values);
  if (s.std <= 1e-12)
    throw DataError("degenerate normalization: standard deviation is zero");
  NormalizedSeries out;
  out.values = ((values.array() - s.mean) / s.std).matrix();
  out.stats = s;
  out.interpolated = Mask::Constant(values.size(), false);
  return out;
}

NormalizedSeries zscore_normalize(FilledSeries const &series, std::optional<NormStats> stats)
{
  NormalizedSeries out = zscore_normalize(series.values, stats);
  out.interpolated = series.interpolated;
  return out;
}

Vector sliding_window_normalize(Vector const &values, Index half_width)
{
  if (half_width < 2)
    throw ConfigError("sliding-window half width must be at least 2");
  Index const n = values.size();
  if (n <= 2 * half_width)
    throw DataError("series too short for the sliding window");
  Vector out(n);
  for (Index t = 0; t < n; ++t) {
    Index const lo = std::max<Index>(0, t - half_width);
    Index const hi = std::min<Index>(n - 1, t + half_width);
    auto const window = values.segment(lo, hi - lo + 1);
    double const m = mean_of(window);
    double const s = std::max(population_std(window), 1e-8);
    out[t] = (values[t] - m) / s;
  }
  return out;
}

WindowBatch make_windows(Vector const &series, Index width, Index stride)
{
  if (width < 1 || stride < 1)
    throw ConfigError("window width and stride must be positive");
  Index const n = series.size();
  if (n < width)
    throw DataError("insufficient data: " + std::to_string(n) + " samples for window " + std::to_string(width));
  Index const count = (n - width) / stride + 1;
  WindowBatch batch;
  batch.windows.resize(count, width);
  batch.origins.resize(static_cast<std::size_t>(count));
  for (Index k = 0; k < count; ++k) {
    Index const origin = k * stride;
    batch.windows.row(k) = series.segment(origin, width).transpose();
    batch.origins[static_cast<std::size_t>(k)] = origin;
  }
  batch.width = width;
  batch.series_length = n;
  return batch;
}

} // namespace dartclean
