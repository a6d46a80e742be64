#pragma once

#include "dartclean/detector.hpp"
#include "dartclean/preprocess.hpp"

#include <optional>
#include <span>
#include <vector>

namespace dartclean {

struct SmoothConfig
{
  Index window = 6;
  double sigma = 1.5;

  void validate() const;
};

// Taps at offsets -window/2 .. window - window/2 - 1, weight exp(-o^2 / 2 sigma^2),
// normalized to sum 1. Index 0 of the result is the most negative offset.
Vector gaussian_kernel(SmoothConfig const &config);
Index kernel_origin(SmoothConfig const &config);

// Discrete convolution with the kernel; taps falling outside the series are
// dropped and the remaining weights renormalized.
Vector gaussian_smooth(Vector const &x, SmoothConfig const &config = {});

struct StepValidation
{
  Mask mask;
  std::vector<Index> retained;
  std::vector<Index> dropped;
  std::vector<Index> unvalidated; // too close to an edge to recompute; kept
};

// Keeps a step iff its statistic recomputed on `x` is >= step_threshold and no
// spike sample lies within [i - spike_window, i + spike_window].
StepValidation validate_steps(Vector const &x, Mask const &steps, Mask const &spikes, DetectConfig const &config);

// Subtracts the measured level change at each step from every later sample,
// bringing all segments onto the baseline of the first one.
Vector align_steps(Vector const &x, std::span<Index const> steps, DetectConfig const &config);

// Missing stats throw StateError.
Vector denormalize(Vector const &normalized, std::optional<NormStats> const &stats);

} // namespace dartclean
