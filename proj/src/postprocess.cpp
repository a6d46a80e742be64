#include "dartclean/postprocess.hpp"

#include "dartclean/error.hpp"

#include <algorithm>
#include <cmath>

namespace dartclean {

void SmoothConfig::validate() const
{
  if (window < 1)
    throw ConfigError("smoothing window must be positive");
  if (!(sigma > 0.0))
    throw ConfigError("smoothing sigma must be positive");
}

Index kernel_origin(SmoothConfig const &config) { return config.window / 2; }

Vector gaussian_kernel(SmoothConfig const &config)
{
  config.validate();
  Index const origin = kernel_origin(config);
  Vector k(config.window);
  for (Index j = 0; j < config.window; ++j) {
    double const o = static_cast<double>(j - origin);
    k[j] = std::exp(-o * o / (2.0 * config.sigma * config.sigma));
  }
  return k / k.sum();
}

Vector gaussian_smooth(Vector const &x, SmoothConfig const &config)
{
  Vector const kernel = gaussian_kernel(config);
  Index const n = x.size();
  if (n < config.window)
    throw DataError("insufficient data: " + std::to_string(n) + " samples for smoothing window " +
                    std::to_string(config.window));
  Index const origin = kernel_origin(config);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    double acc = 0.0;
    double weight = 0.0;
    for (Index j = 0; j < config.window; ++j) {
      Index const src = i - (j - origin);
      if (src < 0 || src >= n)
        continue;
      acc += kernel[j] * x[src];
      weight += kernel[j];
    }
    y[i] = acc / weight;
  }
  return y;
}

StepValidation validate_steps(Vector const &x, Mask const &steps, Mask const &spikes, DetectConfig const &config)
{
  Index const n = x.size();
  if (steps.size() != n || spikes.size() != n)
    throw ShapeError("masks and series lengths differ");
  Index const h = config.step_window / 2;
  StepValidation out;
  out.mask = Mask::Constant(n, false);
  for (Index i = 0; i < n; ++i) {
    if (!steps[i])
      continue;
    if (i < h || i + h > n) {
      out.unvalidated.push_back(i);
      out.mask[i] = true;
      continue;
    }
    Index const lo = std::max<Index>(0, i - config.spike_window);
    Index const hi = std::min<Index>(n - 1, i + config.spike_window);
    bool const near_spike = spikes.segment(lo, hi - lo + 1).any();
    double const delta = std::abs(step_statistic_at(x, i, h, config.step_trend_compensation));
    if (!near_spike && delta >= config.step_threshold) {
      out.retained.push_back(i);
      out.mask[i] = true;
    } else {
      out.dropped.push_back(i);
    }
  }
  return out;
}

Vector align_steps(Vector const &x, std::span<Index const> steps, DetectConfig const &config)
{
  Index const n = x.size();
  std::vector<Index> sorted(steps.begin(), steps.end());
  std::sort(sorted.begin(), sorted.end());
  Vector y = x;
  for (Index i : sorted) {
    if (i <= 0 || i >= n)
      throw ShapeError("step location outside the series");
    Index const h = std::min({config.step_window / 2, i, n - i});
    if (h < 1)
      continue;
    double const delta = step_statistic_at(x, i, h, config.step_trend_compensation && h > 2);
    y.tail(n - i).array() -= delta;
  }
  return y;
}

Vector denormalize(Vector const &normalized, std::optional<NormStats> const &stats)
{
  if (!stats)
    throw StateError("denormalization needs the statistics of the original normalization");
  return invert_zscore(normalized, *stats);
}

} // namespace dartclean
