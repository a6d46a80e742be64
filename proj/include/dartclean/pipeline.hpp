#pragma once

#include "dartclean/detector.hpp"
#include "dartclean/postprocess.hpp"
#include "dartclean/preprocess.hpp"
#include "dartclean/refiner.hpp"
#include "dartclean/series_io.hpp"
#include "dartclean/vae_model.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace dartclean {

struct PipelineConfig
{
  DetectConfig detect;
  RefineConfig refine;
  SmoothConfig smooth;
  bool smooth_output = true;
  bool validate_steps = true;
  bool align_steps = true;
};

struct ReportSegment
{
  std::string kind; // "spike", "step" or "gap"
  Index start = 0;
  Index end = 0;
  double peak_value = 0.0; // meters
};

struct PipelineResult
{
  FilledSeries filled;
  NormalizedSeries normalized;

  // Detection on the input (step 3).
  Vector single_pass; // one infer-mode reconstruction, normalized
  Vector errors;      // |x~ - single_pass|
  ReThreshold re;
  SpikeDetection statistical;
  HybridScore hybrid;
  Mask spike_mask;
  StepDetection steps;

  RefineResult refinement;
  Vector smoothed;
  StepValidation validation;
  Vector cleaned_normalized;
  Vector cleaned; // meters

  std::vector<ReportSegment> segments;
};

// preprocess -> detect -> refine -> smooth -> validate/align steps -> denormalize.
PipelineResult run_pipeline(ModelParams const &params, NormStats const &stats, RawSeries const &raw,
                            PipelineConfig const &config, bool keep_history = false);

// Raw column carries the gap-filled input so residuals are defined everywhere.
CleanedOutput to_cleaned_output(PipelineResult const &result);

// Spike segments (merged with the configured gap), one segment per validated
// step and one per interpolated gap run. peak_value is the raw sample with the
// largest correction for spikes, the level change in meters for steps and the
// largest interpolated value for gaps.
std::vector<ReportSegment> build_segment_report(PipelineResult const &result, PipelineConfig const &config);

void write_segment_report(std::ostream &out, std::vector<ReportSegment> const &segments);

} // namespace dartclean
