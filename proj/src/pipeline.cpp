#include "dartclean/pipeline.hpp"

#include "dartclean/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <ostream>

namespace dartclean {

PipelineResult run_pipeline(ModelParams const &params, NormStats const &stats, RawSeries const &raw,
                            PipelineConfig const &config, bool keep_history)
{
  config.detect.validate();
  config.refine.validate();
  config.smooth.validate();

  PipelineResult r;
  r.filled = fill_gaps(raw);
  r.normalized = zscore_normalize(r.filled, stats);
  Vector const &x = r.normalized.values;
  Index const n = x.size();
  if (n < params.arch.window)
    throw DataError("insufficient data: " + std::to_string(n) + " samples for model window " +
                    std::to_string(params.arch.window));

  r.single_pass = reconstruct_series(params, x);
  r.errors = reconstruction_error(x, r.single_pass);
  r.re = re_threshold(r.errors, config.detect.kappa);
  r.statistical = detect_spikes(x, config.detect);
  r.hybrid = hybrid_score(r.errors, r.statistical.deviation, config.detect.hybrid_alpha, config.detect.kappa);
  switch (config.detect.spike_evidence) {
  case SpikeEvidence::statistical:
    r.spike_mask = r.statistical.mask;
    break;
  case SpikeEvidence::reconstruction:
    r.spike_mask = r.re.anomalies;
    break;
  case SpikeEvidence::confirmed:
    r.spike_mask = r.statistical.mask && r.re.anomalies;
    break;
  case SpikeEvidence::hybrid:
    r.spike_mask = r.hybrid.anomalies;
    break;
  }

  if (n >= config.detect.step_window) {
    r.steps = detect_steps(x, config.detect);
  } else {
    r.steps.mask = Mask::Constant(n, false);
    r.steps.magnitude = Vector::Zero(n);
  }

  r.refinement = refine(params, x, r.spike_mask, r.steps.mask, config.refine, config.detect, keep_history);
  r.smoothed = config.smooth_output ? gaussian_smooth(r.refinement.reconstruction, config.smooth)
                                    : r.refinement.reconstruction;

  if (config.validate_steps) {
    r.validation = validate_steps(r.smoothed, r.steps.mask, r.spike_mask, config.detect);
  } else {
    r.validation.mask = r.steps.mask;
    r.validation.retained = r.steps.locations;
  }

  std::vector<Index> located;
  for (Index i = 0; i < n; ++i)
    if (r.validation.mask[i])
      located.push_back(i);
  r.cleaned_normalized = config.align_steps ? align_steps(r.smoothed, located, config.detect) : r.smoothed;
  r.cleaned = denormalize(r.cleaned_normalized, r.normalized.stats);
  r.segments = build_segment_report(r, config);
  return r;
}

CleanedOutput to_cleaned_output(PipelineResult const &result)
{
  return make_cleaned_output(result.filled.timestamps, result.filled.values, result.cleaned, result.spike_mask,
                             result.validation.mask);
}

std::vector<ReportSegment> build_segment_report(PipelineResult const &result, PipelineConfig const &config)
{
  Vector const &raw = result.filled.values;
  Vector const &cleaned = result.cleaned;
  Index const n = raw.size();
  std::vector<ReportSegment> out;

  for (auto const &s : merge_segments(result.spike_mask, config.detect.merge_gap)) {
    Index peak = s.start;
    for (Index i = s.start; i <= s.end; ++i)
      if (std::abs(raw[i] - cleaned[i]) > std::abs(raw[peak] - cleaned[peak]))
        peak = i;
    out.push_back({"spike", s.start, s.end, raw[peak]});
  }

  Index const h = config.detect.step_window / 2;
  for (Index i = 0; i < n; ++i) {
    if (!result.validation.mask[i])
      continue;
    Index const half = std::min({h, i, n - i});
    double const delta =
        half >= 1 ? step_statistic_at(result.smoothed, i, half, config.detect.step_trend_compensation && half > 2)
                  : 0.0;
    out.push_back({"step", i, i, delta * result.normalized.stats.std});
  }

  for (auto const &s : merge_segments(result.filled.interpolated, 0))
    out.push_back({"gap", s.start, s.end, raw.segment(s.start, s.end - s.start + 1).maxCoeff()});

  std::stable_sort(out.begin(), out.end(),
                   [](ReportSegment const &a, ReportSegment const &b) { return a.start < b.start; });
  return out;
}

void write_segment_report(std::ostream &out, std::vector<ReportSegment> const &segments)
{
  nlohmann::json doc = nlohmann::json::array();
  for (auto const &s : segments)
    doc.push_back({{"kind", s.kind}, {"start", s.start}, {"end", s.end}, {"peak_value", s.peak_value}});
  out << doc.dump(2) << '\n';
}

} // namespace dartclean
