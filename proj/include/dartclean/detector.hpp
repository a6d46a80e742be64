#pragma once

#include "dartclean/types.hpp"

#include <vector>

namespace dartclean {

// Which evidence forms the reported spike mask.
enum class SpikeEvidence
{
  statistical,    // rolling-median deviation only
  reconstruction, // reconstruction-error threshold only
  confirmed,      // both must agree
  hybrid,         // weighted hybrid score
};

struct DetectConfig
{
  Index spike_window = 48;
  Index step_window = 480;
  double spike_threshold = 3.0;
  double step_threshold = 0.05; // normalized units
  double kappa = 3.0;
  double hybrid_alpha = 0.7;
  Index merge_gap = 2;
  bool step_trend_compensation = true;
  SpikeEvidence spike_evidence = SpikeEvidence::confirmed;

  void validate() const;
};

inline constexpr double kStdFloor = 1e-8;

// RE_i = |x_i - xhat_i|
Vector reconstruction_error(Vector const &x, Vector const &reconstruction);

struct ReThreshold
{
  double threshold = 0.0; // mean(RE) + kappa * std(RE)
  Mask anomalies;         // RE_i > threshold
};

ReThreshold re_threshold(Vector const &errors, double kappa);

struct RollingStats
{
  Vector median;
  Vector std; // population, unfloored
};

// Centered window [i - w/2, i - w/2 + w) shifted inside the series at the edges.
Index rolling_window_start(Index i, Index n, Index window);
RollingStats rolling_median_std(Vector const &x, Index window);

struct SpikeDetection
{
  Mask mask;
  Vector deviation; // |x - median| / max(std, 1e-8)
  RollingStats stats;
};

SpikeDetection detect_spikes(Vector const &x, DetectConfig const &config);

// Signed adjacent-window mean difference mean(right) - mean(left) at i, with
// right = x[i, i + h) and left = x[i - h, i). With trend compensation the
// difference expected from the within-half regression slopes is removed.
// Entries outside [h, n - h] are NaN.
Vector step_statistic(Vector const &x, Index half_width, bool trend_compensation);
double step_statistic_at(Vector const &x, Index i, Index half_width, bool trend_compensation);

struct StepDetection
{
  Mask mask;                  // one entry per located step
  std::vector<Index> locations;
  std::vector<double> deltas; // signed statistic at each location
  Vector magnitude;           // |statistic|, 0 where undefined
};

// Flags indices whose |statistic| exceeds the threshold, collapses every run
// of consecutive flags to its argmax, then drops peaks within w_l/2 of a
// stronger one.
StepDetection detect_steps(Vector const &x, DetectConfig const &config);

struct HybridScore
{
  Vector score;
  double threshold = 0.0;
  Mask anomalies;
};

// Min-max scales both components, score = alpha * RE' + (1 - alpha) * stat'.
// A zero-range component contributes 0 everywhere.
HybridScore hybrid_score(Vector const &errors, Vector const &stat_deviation, double alpha, double kappa);

// Maximal true runs, fusing runs separated by at most merge_gap false samples.
std::vector<Segment> merge_segments(Mask const &mask, Index merge_gap);
Mask segments_to_mask(std::vector<Segment> const &segments, Index n);

} // namespace dartclean
