#pragma once

#include "dartclean/detector.hpp"
#include "dartclean/vae_model.hpp"

#include <iosfwd>
#include <span>
#include <vector>

namespace dartclean {

struct RefineConfig
{
  Index iterations = 10;
  double blend_alpha = 0.5;
  double threshold_decay = 0.95; // gamma, applied as gamma^(k-1)
  double tolerance = 1e-6;       // on mean |xhat^(k) - xhat^(k-1)|
  bool early_exit = false;
  // Rerun the detectors on xhat^(k-1) each iteration. Spike evidence follows
  // DetectConfig::spike_evidence, with RE^(k) compared against gamma^(k-1)
  // times the first iteration's RE threshold; hybrid evidence takes the union
  // of both. Under confirmed or reconstruction evidence a refreshed step
  // location also needs RE^(k) above that threshold.
  bool refresh_masks = true;

  void validate() const;
};

// Uniform overlap-add: each sample is the mean of every window value covering it.
Vector windows_to_series(Matrix const &windows, std::span<Index const> origins, Index length);

// Single infer-mode encode/decode pass over all stride-1 windows of x.
Vector reconstruct_series(ModelParams const &params, Vector const &x);

// blend * current + (1 - blend) * previous
Matrix blend_latents(Matrix const &current, Matrix const &previous, double blend);

struct IterationRecord
{
  Index iteration = 0;
  double mean_re = 0.0;        // mean RE^(k)
  Index masked_count = 0;      // |M_s^(k) u M_l^(k)|
  double max_correction = 0.0; // max |xhat^(k) - xhat^(k-1)|
  double spike_threshold = 0.0;
  double step_threshold = 0.0;
  double re_threshold = 0.0;
};

struct RefineResult
{
  Vector reconstruction;   // xhat^(n)
  Mask spike_mask;         // M_s^(n)
  Mask step_mask;          // M_l^(n)
  Matrix latent;           // blended z^(n), one row per window
  std::vector<IterationRecord> log;
  // Populated when history is requested: states[0] == x, candidates[k-1] is
  // the decoded series and masks[k-1] the correction mask of iteration k.
  std::vector<Vector> states;
  std::vector<Vector> candidates;
  std::vector<Mask> masks;
};

// Iterative encode -> blend -> decode -> mask -> gated correction.
// Samples outside the iteration's mask keep their previous value bit-for-bit.
// RE^(k) = |c^(k) - c^(k-1)| over the decoded candidates c, with c^(0) = x, so
// it measures how much the reconstruction itself still moves.
RefineResult refine(ModelParams const &params, Vector const &x, Mask const &spike_mask, Mask const &step_mask,
                    RefineConfig const &config, DetectConfig const &detect, bool keep_history = false);

IterationRecord summarize_iteration(Index iteration, Vector const &previous_candidate, Vector const &candidate,
                                    Vector const &previous, Vector const &current, Mask const &mask);

// Recomputes the per-iteration summary from a stored history.
std::vector<IterationRecord> iteration_log(std::span<Vector const> states, std::span<Vector const> candidates,
                                           std::span<Mask const> masks);

// `iteration,mean_re,masked_count,max_correction,spike_threshold,step_threshold,re_threshold`
void write_iteration_log_csv(std::ostream &out, std::vector<IterationRecord> const &log);

} // namespace dartclean
