#pragma once

#include "dartclean/types.hpp"

#include <random>
#include <span>

namespace dartclean::nn {

using Rng = std::mt19937_64;

struct DenseLayer
{
  Matrix weights; // [out x in]
  Vector bias;    // [out]

  Index in_dim() const { return weights.cols(); }
  Index out_dim() const { return weights.rows(); }
};

// He-normal weights, zero bias.
DenseLayer make_dense(Index in_dim, Index out_dim, Rng &rng);
DenseLayer zeros_like(DenseLayer const &layer);

// Rows of `input` are samples: out = input * W^T + b.
Matrix dense_forward(DenseLayer const &layer, Matrix const &input);

// Accumulates dW, db into `grad` and returns dL/dinput.
Matrix dense_backward(DenseLayer const &layer, Matrix const &input, Matrix const &grad_output, DenseLayer &grad);

struct BatchNormState
{
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  Index dim() const { return gamma.size(); }
};

BatchNormState make_batchnorm(Index dim);

struct BatchNormCache
{
  Matrix normalized;
  Vector inv_std;
  Vector batch_mean;
  Vector batch_var; // population variance of the batch
  bool training = false;
};

// Training mode normalizes with batch statistics, inference with running ones.
Matrix batchnorm_forward(BatchNormState const &bn, Matrix const &input, bool training, BatchNormCache &cache);

// Accumulates dgamma/dbeta into grad.gamma/grad.beta and returns dL/dinput.
Matrix batchnorm_backward(BatchNormState const &bn, BatchNormCache const &cache, Matrix const &grad_output,
                          BatchNormState &grad);

// running = momentum * running + (1 - momentum) * batch
void update_running_stats(BatchNormState &bn, BatchNormCache const &cache);

inline Matrix relu(Matrix const &x) { return x.cwiseMax(0.0); }
inline Matrix relu_backward(Matrix const &pre_activation, Matrix const &grad_output)
{
  return (pre_activation.array() > 0.0).select(grad_output, 0.0);
}

// min(0.1 + 0.05 * layer, 0.3); layer 0 is the first hidden layer.
double dropout_rate(Index layer);

// Inverted-dropout mask: entries are 0 or 1 / (1 - p).
Matrix dropout_mask(Index rows, Index cols, double p, Rng &rng);

// Scales g by min(1, tau / ||g||_2). Returns the norm before clipping.
double clip_global_norm(Vector &gradient, double tau);

Vector accumulate_gradients(std::span<Vector const> gradients);

struct AdamConfig
{
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-5; // decoupled
  double clip_norm = 1.0;
};

struct OptimizerState
{
  AdamConfig config;
  Vector first_moment;
  Vector second_moment;
  long step = 0;
};

OptimizerState make_optimizer(Index num_params, AdamConfig const &config = {});

struct AdamStepInfo
{
  double grad_norm = 0.0;         // before clipping
  double clipped_grad_norm = 0.0; // after clipping
};

// Global-norm clipping, decoupled weight decay, then a bias-corrected Adam
// update. A non-finite gradient throws NumericError and leaves params untouched.
AdamStepInfo adam_step(OptimizerState &opt, Vector &params, Vector gradient, double lr);

// Learning-rate schedules.
enum class DecayKind
{
  none,
  step,
  cosine,
};

double step_decay_lr(double base_lr, Index epoch, Index decay_steps);
double warmup_lr(double base_lr, Index step, Index warmup_steps);
// Floored at kMinLearningRate so the emitted rate stays positive at t = T.
double cosine_lr(double base_lr, Index step, Index total_steps);

inline constexpr double kMinLearningRate = 1e-8;

// Halves its multiplier when the monitored loss fails to improve by
// min_delta for `patience` consecutive observations.
class PlateauTracker
{
public:
  PlateauTracker(Index patience, double min_delta, double factor = 0.5);

  double observe(double monitored);
  double multiplier() const { return multiplier_; }

private:
  Index patience_;
  double min_delta_;
  double factor_;
  double best_;
  Index since_best_ = 0;
  double multiplier_ = 1.0;
};

struct LrSchedule
{
  double base_lr = 1e-4;
  bool warmup = true;
  Index warmup_steps = 1000;
  DecayKind decay = DecayKind::step;
  Index decay_steps = 100; // epochs per halving for the step decay
  Index total_steps = 0;   // cosine horizon T
  bool plateau = true;
  double plateau_factor = 0.5;

  void validate() const;

  // Warm-up, then cosine or step decay, then the plateau multiplier; floored at 1e-8.
  double at(Index epoch, Index step, double plateau_multiplier = 1.0) const;
};

} // namespace dartclean::nn
