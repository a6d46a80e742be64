#include "dartclean/detector.hpp"

#include "dartclean/error.hpp"
#include "dartclean/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dartclean {

void DetectConfig::validate() const
{
  if (spike_window < 3 || step_window < 3)
    throw ConfigError("detector windows must be at least 3 samples");
  if (!(spike_threshold > 0.0) || !(step_threshold > 0.0))
    throw ConfigError("detector thresholds must be positive");
  if (kappa < 0.0)
    throw ConfigError("kappa must be non-negative");
  if (!(hybrid_alpha >= 0.0 && hybrid_alpha <= 1.0))
    throw ConfigError("hybrid_alpha must lie in [0, 1]");
  if (merge_gap < 0)
    throw ConfigError("merge_gap must be non-negative");
}

Vector reconstruction_error(Vector const &x, Vector const &reconstruction)
{
  if (x.size() != reconstruction.size())
    throw ShapeError("series and reconstruction lengths differ");
  return (x - reconstruction).cwiseAbs();
}

ReThreshold re_threshold(Vector const &errors, double kappa)
{
  if (errors.size() == 0)
    throw DataError("empty reconstruction error");
  ReThreshold out;
  out.threshold = mean_of(errors) + kappa * population_std(errors);
  out.anomalies = errors.array() > out.threshold;
  return out;
}

Index rolling_window_start(Index i, Index n, Index window)
{
  return std::clamp<Index>(i - window / 2, 0, n - window);
}

RollingStats rolling_median_std(Vector const &x, Index window)
{
  Index const n = x.size();
  if (window < 1)
    throw ConfigError("rolling window must be positive");
  if (n < window)
    throw DataError("insufficient data: " + std::to_string(n) + " samples for rolling window " +
                    std::to_string(window));
  RollingStats out{Vector(n), Vector(n)};
  std::vector<double> buf(static_cast<std::size_t>(window));
  auto const half = static_cast<std::ptrdiff_t>(window / 2);
  for (Index i = 0; i < n; ++i) {
    Index const lo = rolling_window_start(i, n, window);
    double sum = 0.0;
    for (Index k = 0; k < window; ++k) {
      buf[static_cast<std::size_t>(k)] = x[lo + k];
      sum += x[lo + k];
    }
    double const mean = sum / static_cast<double>(window);
    double ss = 0.0;
    for (Index k = 0; k < window; ++k)
      ss += (x[lo + k] - mean) * (x[lo + k] - mean);
    out.std[i] = std::sqrt(ss / static_cast<double>(window));

    std::nth_element(buf.begin(), buf.begin() + half, buf.end());
    double const upper = buf[static_cast<std::size_t>(half)];
    if (window % 2 == 1) {
      out.median[i] = upper;
    } else {
      double const lower = *std::max_element(buf.begin(), buf.begin() + half);
      out.median[i] = 0.5 * (lower + upper);
    }
  }
  return out;
}

SpikeDetection detect_spikes(Vector const &x, DetectConfig const &config)
{
  SpikeDetection out;
  out.stats = rolling_median_std(x, config.spike_window);
  out.deviation = (x - out.stats.median).cwiseAbs().cwiseQuotient(out.stats.std.cwiseMax(kStdFloor));
  out.mask = out.deviation.array() > config.spike_threshold;
  return out;
}

namespace {

// Prefix sums of x_k and k * x_k for O(1) half-window means and slopes.
struct Prefix
{
  std::vector<double> s;
  std::vector<double> ks;

  explicit Prefix(Vector const &x) : s(static_cast<std::size_t>(x.size()) + 1, 0.0), ks(s.size(), 0.0)
  {
    for (Index k = 0; k < x.size(); ++k) {
      s[static_cast<std::size_t>(k + 1)] = s[static_cast<std::size_t>(k)] + x[k];
      ks[static_cast<std::size_t>(k + 1)] = ks[static_cast<std::size_t>(k)] + static_cast<double>(k) * x[k];
    }
  }

  double sum(Index a, Index b) const { return s[static_cast<std::size_t>(b)] - s[static_cast<std::size_t>(a)]; }
  double ksum(Index a, Index b) const { return ks[static_cast<std::size_t>(b)] - ks[static_cast<std::size_t>(a)]; }

  // Least-squares slope of x over [a, b).
  double slope(Index a, Index b) const
  {
    double const h = static_cast<double>(b - a);
    double const sx = sum(a, b);
    double const sjx = ksum(a, b) - static_cast<double>(a) * sx; // sum of (k - a) x_k
    double const jbar = 0.5 * (h - 1.0);
    double const denom = h * (h * h - 1.0) / 12.0;
    return (sjx - jbar * sx) / denom;
  }
};

double statistic(Prefix const &p, Index i, Index h, bool trend)
{
  double const hd = static_cast<double>(h);
  double delta = p.sum(i, i + h) / hd - p.sum(i - h, i) / hd;
  if (trend && h > 1)
    delta -= hd * 0.5 * (p.slope(i - h, i) + p.slope(i, i + h));
  return delta;
}

} // namespace

Vector step_statistic(Vector const &x, Index half_width, bool trend_compensation)
{
  if (half_width < 1)
    throw ConfigError("step half width must be positive");
  Index const n = x.size();
  Vector out = Vector::Constant(n, std::numeric_limits<double>::quiet_NaN());
  if (n < 2 * half_width)
    return out;
  Prefix const p(x);
  for (Index i = half_width; i <= n - half_width && i < n; ++i)
    out[i] = statistic(p, i, half_width, trend_compensation);
  return out;
}

double step_statistic_at(Vector const &x, Index i, Index half_width, bool trend_compensation)
{
  if (i < half_width || i + half_width > x.size())
    return std::numeric_limits<double>::quiet_NaN();
  Prefix const p(x.segment(i - half_width, 2 * half_width));
  return statistic(p, half_width, half_width, trend_compensation);
}

StepDetection detect_steps(Vector const &x, DetectConfig const &config)
{
  Index const n = x.size();
  if (n < config.step_window)
    throw DataError("insufficient data: " + std::to_string(n) + " samples for step window " +
                    std::to_string(config.step_window));
  Index const h = config.step_window / 2;
  Vector const stat = step_statistic(x, h, config.step_trend_compensation);

  StepDetection out;
  out.magnitude = stat.cwiseAbs().unaryExpr([](double v) { return std::isnan(v) ? 0.0 : v; });
  out.mask = Mask::Constant(n, false);
  std::vector<Index> candidates;
  Index i = 0;
  while (i < n) {
    if (!(out.magnitude[i] > config.step_threshold)) {
      ++i;
      continue;
    }
    Index best = i;
    for (; i < n && out.magnitude[i] > config.step_threshold; ++i)
      if (out.magnitude[i] > out.magnitude[best])
        best = i;
    candidates.push_back(best);
  }

  // A compensated step leaves opposite-signed side lobes about h/2 away that
  // survive as separate runs; keep only the strongest peak within h.
  std::vector<Index> order = candidates;
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return out.magnitude[a] > out.magnitude[b]; });
  std::vector<Index> kept;
  for (Index c : order)
    if (std::none_of(kept.begin(), kept.end(), [&](Index k) { return std::abs(k - c) < h; }))
      kept.push_back(c);
  std::sort(kept.begin(), kept.end());
  for (Index k : kept) {
    out.mask[k] = true;
    out.locations.push_back(k);
    out.deltas.push_back(stat[k]);
  }
  return out;
}

namespace {

Vector min_max_scale(Vector const &v)
{
  double const lo = v.minCoeff();
  double const hi = v.maxCoeff();
  if (!(hi > lo))
    return Vector::Zero(v.size());
  return ((v.array() - lo) / (hi - lo)).matrix();
}

} // namespace

HybridScore hybrid_score(Vector const &errors, Vector const &stat_deviation, double alpha, double kappa)
{
  if (errors.size() != stat_deviation.size())
    throw ShapeError("hybrid components differ in length");
  if (errors.size() == 0)
    throw DataError("empty hybrid score input");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ConfigError("hybrid_alpha must lie in [0, 1]");
  HybridScore out;
  out.score = alpha * min_max_scale(errors) + (1.0 - alpha) * min_max_scale(stat_deviation);
  out.threshold = mean_of(out.score) + kappa * population_std(out.score);
  out.anomalies = out.score.array() > out.threshold;
  return out;
}

std::vector<Segment> merge_segments(Mask const &mask, Index merge_gap)
{
  std::vector<Segment> out;
  Index const n = mask.size();
  Index i = 0;
  while (i < n) {
    if (!mask[i]) {
      ++i;
      continue;
    }
    Index const start = i;
    while (i < n && mask[i])
      ++i;
    Segment const run{start, i - 1};
    if (!out.empty() && run.start - out.back().end - 1 <= merge_gap)
      out.back().end = run.end;
    else
      out.push_back(run);
  }
  return out;
}

Mask segments_to_mask(std::vector<Segment> const &segments, Index n)
{
  Mask m = Mask::Constant(n, false);
  for (auto const &s : segments) {
    if (s.start < 0 || s.end >= n || s.end < s.start)
      throw ShapeError("segment outside the series");
    m.segment(s.start, s.end - s.start + 1).setConstant(true);
  }
  return m;
}

} // namespace dartclean
