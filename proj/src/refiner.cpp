#include "dartclean/refiner.hpp"

#include "dartclean/error.hpp"
#include "dartclean/preprocess.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <ostream>

namespace dartclean {

void RefineConfig::validate() const
{
  if (iterations < 1)
    throw ConfigError("refinement needs at least one iteration");
  if (!(blend_alpha >= 0.0 && blend_alpha <= 1.0))
    throw ConfigError("blend_alpha must lie in [0, 1]");
  if (!(threshold_decay > 0.0 && threshold_decay <= 1.0))
    throw ConfigError("threshold_decay must lie in (0, 1]");
  if (tolerance < 0.0)
    throw ConfigError("tolerance must be non-negative");
}

Vector windows_to_series(Matrix const &windows, std::span<Index const> origins, Index length)
{
  if (static_cast<Index>(origins.size()) != windows.rows())
    throw ShapeError("one origin per window required");
  Vector sum = Vector::Zero(length);
  Eigen::VectorXi count = Eigen::VectorXi::Zero(length);
  Index const w = windows.cols();
  for (Index r = 0; r < windows.rows(); ++r) {
    Index const o = origins[static_cast<std::size_t>(r)];
    if (o < 0 || o + w > length)
      throw ShapeError("window at origin " + std::to_string(o) + " extends past the series");
    for (Index j = 0; j < w; ++j) {
      sum[o + j] += windows(r, j);
      count[o + j] += 1;
    }
  }
  for (Index i = 0; i < length; ++i) {
    if (count[i] == 0)
      throw DataError("sample " + std::to_string(i) + " is not covered by any window");
    sum[i] /= static_cast<double>(count[i]);
  }
  return sum;
}

Vector reconstruct_series(ModelParams const &params, Vector const &x)
{
  WindowBatch const batch = make_windows(x, params.arch.window);
  return windows_to_series(reconstruct_windows(params, batch.windows), batch.origins, x.size());
}

Matrix blend_latents(Matrix const &current, Matrix const &previous, double blend)
{
  if (current.rows() != previous.rows() || current.cols() != previous.cols())
    throw ShapeError("latent shapes differ between iterations");
  return blend * current + (1.0 - blend) * previous;
}

IterationRecord summarize_iteration(Index iteration, Vector const &previous_candidate, Vector const &candidate,
                                    Vector const &previous, Vector const &current, Mask const &mask)
{
  IterationRecord r;
  r.iteration = iteration;
  r.mean_re = candidate.size() > 0 ? (candidate - previous_candidate).cwiseAbs().mean() : 0.0;
  r.max_correction = current.size() > 0 ? (current - previous).cwiseAbs().maxCoeff() : 0.0;
  r.masked_count = mask.count();
  return r;
}

namespace {

Matrix decode_chunks(ModelParams const &params, Matrix const &z, Matrix const &windows)
{
  Index const chunk = 2048;
  Matrix out(windows.rows(), windows.cols());
  for (Index r = 0; r < windows.rows(); r += chunk) {
    Index const rows = std::min(chunk, windows.rows() - r);
    out.middleRows(r, rows) = decode(params, z.middleRows(r, rows), windows.middleRows(r, rows), Mode::infer);
  }
  return out;
}

Mask refreshed_spikes(Vector const &previous, Vector const &re, double re_limit, DetectConfig const &decayed)
{
  Mask const by_re = (re.array() > re_limit).matrix();
  if (decayed.spike_evidence == SpikeEvidence::reconstruction)
    return by_re;
  Mask const by_stat = detect_spikes(previous, decayed).mask;
  switch (decayed.spike_evidence) {
  case SpikeEvidence::statistical:
    return by_stat;
  case SpikeEvidence::confirmed:
    return by_stat && by_re;
  default:
    return by_stat || by_re;
  }
}

Mask refreshed_steps(Vector const &previous, Vector const &re, double re_limit, DetectConfig const &decayed)
{
  Mask const by_stat = detect_steps(previous, decayed).mask;
  bool const needs_re = decayed.spike_evidence == SpikeEvidence::confirmed ||
                        decayed.spike_evidence == SpikeEvidence::reconstruction;
  return needs_re ? Mask(by_stat && (re.array() > re_limit)) : by_stat;
}

std::string number(double v)
{
  std::array<char, 64> buf{};
  auto const [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return ec == std::errc{} ? std::string(buf.data(), ptr) : std::string("nan");
}

} // namespace

RefineResult refine(ModelParams const &params, Vector const &x, Mask const &spike_mask, Mask const &step_mask,
                    RefineConfig const &config, DetectConfig const &detect, bool keep_history)
{
  config.validate();
  detect.validate();
  Index const n = x.size();
  if (spike_mask.size() != n || step_mask.size() != n)
    throw ShapeError("masks and series lengths differ");
  if (n < params.arch.window)
    throw DataError("series shorter than the model window");

  RefineResult result;
  double base_re_threshold = 0.0;
  Vector previous = x;
  Vector previous_candidate = x;
  Matrix z_previous;
  if (keep_history)
    result.states.push_back(previous);

  for (Index k = 1; k <= config.iterations; ++k) {
    WindowBatch const batch = make_windows(previous, params.arch.window);
    Matrix z = encode_means(params, batch.windows);
    if (k > 1)
      z = blend_latents(z, z_previous, config.blend_alpha);
    Vector const candidate = windows_to_series(decode_chunks(params, z, batch.windows), batch.origins, n);
    if (!candidate.allFinite())
      throw NumericError("non-finite reconstruction in refinement iteration " + std::to_string(k));

    double const scale = std::pow(config.threshold_decay, static_cast<double>(k - 1));
    DetectConfig decayed = detect;
    decayed.spike_threshold = detect.spike_threshold * scale;
    decayed.step_threshold = detect.step_threshold * scale;

    Vector const re = reconstruction_error(candidate, previous_candidate);
    if (k == 1)
      base_re_threshold = re_threshold(re, detect.kappa).threshold;
    double const re_limit = base_re_threshold * scale;

    Mask spikes = spike_mask;
    Mask steps = step_mask;
    if (config.refresh_masks) {
      if (n >= decayed.spike_window)
        spikes = spikes || refreshed_spikes(previous, re, re_limit, decayed);
      if (n >= decayed.step_window)
        steps = steps || refreshed_steps(previous, re, re_limit, decayed);
    }
    Mask const gate = spikes || steps;

    Vector current = gate.select(candidate.array(), previous.array()).matrix();

    IterationRecord rec = summarize_iteration(k, previous_candidate, candidate, previous, current, gate);
    rec.spike_threshold = decayed.spike_threshold;
    rec.step_threshold = decayed.step_threshold;
    rec.re_threshold = re_limit;
    result.log.push_back(rec);
    if (keep_history) {
      result.states.push_back(current);
      result.candidates.push_back(candidate);
      result.masks.push_back(gate);
    }

    result.spike_mask = std::move(spikes);
    result.step_mask = std::move(steps);
    z_previous = std::move(z);
    previous = std::move(current);
    previous_candidate = candidate;
    if (config.early_exit && rec.mean_re < config.tolerance)
      break;
  }
  result.reconstruction = std::move(previous);
  result.latent = std::move(z_previous);
  return result;
}

std::vector<IterationRecord> iteration_log(std::span<Vector const> states, std::span<Vector const> candidates,
                                           std::span<Mask const> masks)
{
  if (masks.empty() || states.size() != masks.size() + 1 || candidates.size() != masks.size())
    throw StateError("iteration history needs one candidate and mask per iteration and one extra state");
  std::vector<IterationRecord> out;
  for (std::size_t k = 0; k < masks.size(); ++k) {
    Vector const &previous_candidate = k == 0 ? states[0] : candidates[k - 1];
    out.push_back(summarize_iteration(static_cast<Index>(k + 1), previous_candidate, candidates[k], states[k],
                                      states[k + 1], masks[k]));
  }
  return out;
}

void write_iteration_log_csv(std::ostream &out, std::vector<IterationRecord> const &log)
{
  out << "iteration,mean_re,masked_count,max_correction,spike_threshold,step_threshold,re_threshold\n";
  for (auto const &r : log)
    out << r.iteration << ',' << number(r.mean_re) << ',' << r.masked_count << ',' << number(r.max_correction)
        << ',' << number(r.spike_threshold) << ',' << number(r.step_threshold) << ',' << number(r.re_threshold) << '\n';
}

} // namespace dartclean
