#pragma once

#include "dartclean/error.hpp"
#include "dartclean/neural_numerics.hpp"
#include "dartclean/preprocess.hpp"
#include "dartclean/vae_model.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace dartclean {

struct TrainConfig
{
  Index epochs = 1000;
  Index batch_size = 128;
  double base_lr = 1e-4;
  Index decay_steps = 100;
  nn::DecayKind decay = nn::DecayKind::step;
  bool warmup = true;
  Index warmup_steps = 1000;
  bool plateau = true;
  Index plateau_patience = 5;
  Index patience = 10;
  double min_delta = 1e-4;
  Index t_anneal = 5000;
  double clip_norm = 1.0;
  double weight_decay = 1e-5;
  double lambda_temporal = 0.1;
  double lambda_mean = 0.1;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  Index accumulation_steps = 1;
  bool train_global_skip = false;
  double kl_stable_threshold = 1e-5;
  double grad_norm_threshold = 0.1;

  void validate() const;
  nn::LrSchedule schedule(Index steps_per_epoch) const;
  LossConfig loss() const { return {lambda_temporal, lambda_mean, t_anneal}; }
};

struct EpochRecord
{
  Index epoch = 0; // 1-based
  LossBreakdown train;
  LossBreakdown validation;
  double lr = 0.0;
  double grad_norm = 0.0; // mean post-clip global norm over the epoch's updates
  double wall_time_s = 0.0;
};

struct TrainLog
{
  std::vector<EpochRecord> epochs;
  std::string stop_reason;
  Index best_epoch = 0;
};

// `epoch,recon,kl,temporal,mean,total,val_total,lr,grad_norm`
void write_train_log_csv(std::ostream &out, TrainLog const &log);

class DivergenceError : public NumericError
{
public:
  DivergenceError(std::string const &what, TrainLog log) : NumericError(what), log_(std::move(log)) {}
  TrainLog const &log() const { return log_; }

private:
  TrainLog log_;
};

struct TrainResult
{
  ModelParams params; // best-validation parameters
  TrainLog log;
};

// Windows are split chronologically: the last validation_fraction of them is
// held out. Training stops on early stopping or the epoch limit.
TrainResult train(ModelParams model, WindowBatch const &windows, TrainConfig const &config);

// Validation loss of `params` over a window matrix in infer mode.
LossBreakdown evaluate_loss(ModelParams const &params, Matrix const &windows, Index step, LossConfig const &config);

enum class StopReason
{
  none,
  primary,
  secondary,
  epoch_limit,
};

struct StopDecision
{
  bool stop = false;
  StopReason reason = StopReason::none;
  std::string message;
};

// history[i] is the validation loss after epoch i + 1.
StopDecision early_stop_check(std::span<double const> val_history, std::span<double const> kl_history,
                              double grad_norm, TrainConfig const &config);

struct ConvergenceProfile
{
  double initial = 0.0; // mean |L_n - L_{n-1}| for n in 2..10
  double mid = 0.0;     // n in 11..20
  double late = 0.0;    // n >= 21
};

ConvergenceProfile convergence_profile(std::span<double const> losses);
ConvergenceProfile convergence_profile(TrainLog const &log);

} // namespace dartclean
