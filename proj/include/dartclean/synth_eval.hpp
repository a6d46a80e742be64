#pragma once

#include "dartclean/detector.hpp"
#include "dartclean/series_io.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace dartclean {

struct TidalComponent
{
  double amplitude_m = 0.0;
  double period_s = 0.0;
  double phase_rad = 0.0;
};

inline constexpr double kM2Period = 44714.0;
inline constexpr double kS2Period = 43200.0;

struct SpikeSpec
{
  Index count = 0;
  double amplitude_min_sigma = 5.0; // in units of noise_sigma_m
  double amplitude_max_sigma = 25.0;
  Index width_min = 1;
  Index width_max = 3;
  bool both_signs = true;
  double amplitude_max_m = 0.0; // optional absolute cap (0 = none)
  Index min_separation = 60;    // between spikes and from any other anomaly
};

struct StepSpec
{
  Index count = 0;
  double magnitude_min_m = 0.2;
  double magnitude_max_m = 0.6;
  Index min_separation = 3000;
  Index edge_margin = 600;
};

enum class DriftKind
{
  none,
  linear,
  exponential,
};

struct DriftSpec
{
  DriftKind kind = DriftKind::none;
  double slope_m_per_day = 0.0; // linear
  double amplitude_m = 0.0;     // exponential: amplitude * (1 - exp(-rate * t))
  double rate_per_day = 0.0;
};

struct GapSpec
{
  Index count = 0;
  Index length_min = 1;
  Index length_max = 10;
};

struct SynthSpec
{
  Index length = 20000;
  double cadence_s = 15.0;
  std::int64_t start_epoch = 1640995200; // 2022-01-01T00:00:00Z
  double mean_level_m = 2584.0;
  std::vector<TidalComponent> tides{{1.0, kM2Period, 0.0}, {0.5, kS2Period, 1.0}};
  double noise_sigma_m = 0.05;
  SpikeSpec spikes;
  StepSpec steps;
  DriftSpec drift;
  GapSpec gaps;
  std::uint64_t seed = 7;

  void validate() const;
};

struct InjectedSpike
{
  Index start = 0;
  Index width = 1;
  double amplitude_m = 0.0;

  Segment segment() const { return {start, start + width - 1}; }
};

struct InjectedStep
{
  Index index = 0;
  double magnitude_m = 0.0;
};

struct GroundTruth
{
  std::vector<std::int64_t> timestamps;
  Vector clean; // mean level + tides + drift
  Vector noise;
  Vector spike_effect;
  Vector step_effect;
  Vector contaminated; // clean + noise + spike_effect + step_effect
  Vector drift;
  std::vector<InjectedSpike> spikes;
  std::vector<InjectedStep> steps;
  Mask gap;

  std::vector<Segment> spike_segments() const;
  std::vector<Index> step_indices() const;
};

GroundTruth generate(SynthSpec const &spec);

// Contaminated series with gap samples flagged (written as 9999 by write_dart).
RawSeries to_raw_series(GroundTruth const &truth);

// `time_iso8601,clean_m,contaminated_m,spike,step,gap`
void write_ground_truth_csv(std::ostream &out, GroundTruth const &truth);

struct TruthTable
{
  std::vector<std::int64_t> timestamps;
  Vector clean;
  Vector contaminated;
  std::vector<Segment> spikes;
  std::vector<Index> steps;
  Mask gap;
};

TruthTable read_ground_truth_csv(std::istream &in);

struct DetectionScore
{
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Index predicted = 0;         // predicted segments
  Index matched_predicted = 0; // predicted segments matching some true spike
  Index truth = 0;
  Index matched_truth = 0;
};

double f1_score(double precision, double recall);

// Predicted segments are the maximal runs of `predicted`; a segment and a true
// spike match when they lie within `tolerance` samples of each other.
DetectionScore spike_f1(Mask const &predicted, std::span<Segment const> truth, Index tolerance = 2);

// Fraction of true steps with a predicted step within `tolerance` samples.
double step_recall(std::span<Index const> predicted, std::span<Index const> truth, Index tolerance);

// Pearson correlation of first differences.
double temporal_consistency(Vector const &x, Vector const &reconstruction);

double mean_squared_error(Vector const &a, Vector const &b);

struct ResidualStats
{
  double max_abs = 0.0;
  double bound = 0.5;
  Index nonzero = 0;
  double fraction_within = 1.0; // of nonzero residuals, |r| <= bound
  std::vector<double> bin_edges;
  std::vector<Index> counts;
};

ResidualStats residual_stats(Vector const &raw, Vector const &cleaned, double bound = 0.5, Index bins = 50);

struct RateOfChange
{
  Vector rate; // meters per minute, length n - 1
  double min = 0.0;
  double max = 0.0;
  double max_abs = 0.0;
};

RateOfChange rate_of_change(Vector const &series, double cadence_s);

struct LatentProjection
{
  Matrix coordinates; // [windows x 2]
  Matrix directions;  // [dim x 2], orthonormal columns
  Vector eigenvalues; // top two of the sample covariance
  bool fallback = false;
};

// Top-two principal components of the rows of `means`; a rank-deficient
// covariance falls back to the first two coordinate axes.
LatentProjection project_latent(Matrix const &means);

// Classical despiker: detect_spikes on the series, flagged samples replaced by
// the rolling median.
Vector baseline_rolling_median(Vector const &series, DetectConfig const &config);

} // namespace dartclean
