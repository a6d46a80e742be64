#include "dartclean/neural_numerics.hpp"

#include "dartclean/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace dartclean::nn {

DenseLayer make_dense(Index in_dim, Index out_dim, Rng &rng)
{
  if (in_dim < 1 || out_dim < 1)
    throw ConfigError("dense layer dimensions must be positive");
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in_dim)));
  DenseLayer layer;
  layer.weights.resize(out_dim, in_dim);
  // Fill row by row so the draw order does not depend on storage order.
  for (Index r = 0; r < out_dim; ++r)
    for (Index c = 0; c < in_dim; ++c)
      layer.weights(r, c) = normal(rng);
  layer.bias = Vector::Zero(out_dim);
  return layer;
}

DenseLayer zeros_like(DenseLayer const &layer)
{
  return {Matrix::Zero(layer.weights.rows(), layer.weights.cols()), Vector::Zero(layer.bias.size())};
}

Matrix dense_forward(DenseLayer const &layer, Matrix const &input)
{
  if (input.cols() != layer.in_dim())
    throw ShapeError("dense input width " + std::to_string(input.cols()) + " != layer input " +
                     std::to_string(layer.in_dim()));
  Matrix out = input * layer.weights.transpose();
  out.rowwise() += layer.bias.transpose();
  return out;
}

Matrix dense_backward(DenseLayer const &layer, Matrix const &input, Matrix const &grad_output, DenseLayer &grad)
{
  if (grad_output.cols() != layer.out_dim() || grad_output.rows() != input.rows() || input.cols() != layer.in_dim())
    throw ShapeError("dense backward shape mismatch");
  grad.weights.noalias() += grad_output.transpose() * input;
  grad.bias += grad_output.colwise().sum().transpose();
  return grad_output * layer.weights;
}

BatchNormState make_batchnorm(Index dim)
{
  BatchNormState bn;
  bn.gamma = Vector::Ones(dim);
  bn.beta = Vector::Zero(dim);
  bn.running_mean = Vector::Zero(dim);
  bn.running_var = Vector::Ones(dim);
  return bn;
}

Matrix batchnorm_forward(BatchNormState const &bn, Matrix const &input, bool training, BatchNormCache &cache)
{
  if (input.cols() != bn.dim())
    throw ShapeError("batch-norm input width mismatch");
  cache.training = training;
  if (training) {
    if (input.rows() < 1)
      throw ShapeError("batch-norm on an empty batch");
    double const inv_b = 1.0 / static_cast<double>(input.rows());
    cache.batch_mean = input.colwise().sum().transpose() * inv_b;
    Matrix const centered = input.rowwise() - cache.batch_mean.transpose();
    cache.batch_var = centered.array().square().colwise().sum().transpose() * inv_b;
    cache.inv_std = (cache.batch_var.array() + bn.epsilon).rsqrt().matrix();
    cache.normalized = centered * cache.inv_std.asDiagonal();
  } else {
    cache.batch_mean = bn.running_mean;
    cache.batch_var = bn.running_var;
    cache.inv_std = (bn.running_var.array() + bn.epsilon).rsqrt().matrix();
    cache.normalized = (input.rowwise() - bn.running_mean.transpose()) * cache.inv_std.asDiagonal();
  }
  Matrix out = cache.normalized * bn.gamma.asDiagonal();
  out.rowwise() += bn.beta.transpose();
  return out;
}

Matrix batchnorm_backward(BatchNormState const &bn, BatchNormCache const &cache, Matrix const &grad_output,
                          BatchNormState &grad)
{
  if (grad_output.rows() != cache.normalized.rows() || grad_output.cols() != bn.dim())
    throw StateError("batch-norm backward without a matching forward cache");
  grad.gamma += (grad_output.array() * cache.normalized.array()).colwise().sum().transpose().matrix();
  grad.beta += grad_output.colwise().sum().transpose();

  Matrix const dxhat = grad_output * bn.gamma.asDiagonal();
  if (!cache.training)
    return dxhat * cache.inv_std.asDiagonal();

  double const b = static_cast<double>(grad_output.rows());
  Eigen::RowVectorXd const sum_dxhat = dxhat.colwise().sum();
  Eigen::RowVectorXd const sum_dxhat_xhat = (dxhat.array() * cache.normalized.array()).colwise().sum().matrix();
  Matrix dx = b * dxhat;
  dx.rowwise() -= sum_dxhat;
  dx -= (cache.normalized.array().rowwise() * sum_dxhat_xhat.array()).matrix();
  return dx * (cache.inv_std / b).asDiagonal();
}

void update_running_stats(BatchNormState &bn, BatchNormCache const &cache)
{
  if (!cache.training)
    return;
  bn.running_mean = bn.momentum * bn.running_mean + (1.0 - bn.momentum) * cache.batch_mean;
  bn.running_var = bn.momentum * bn.running_var + (1.0 - bn.momentum) * cache.batch_var;
}

double dropout_rate(Index layer)
{
  return std::min(0.1 + 0.05 * static_cast<double>(layer), 0.3);
}

Matrix dropout_mask(Index rows, Index cols, double p, Rng &rng)
{
  if (p < 0.0 || p >= 1.0)
    throw ConfigError("dropout probability must lie in [0, 1)");
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  double const keep_scale = 1.0 / (1.0 - p);
  Matrix mask(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c)
      mask(r, c) = uniform(rng) < p ? 0.0 : keep_scale;
  return mask;
}

double clip_global_norm(Vector &gradient, double tau)
{
  double const norm = gradient.norm();
  if (norm > tau)
    gradient *= tau / norm;
  return norm;
}

Vector accumulate_gradients(std::span<Vector const> gradients)
{
  if (gradients.empty())
    throw ConfigError("gradient accumulation needs at least one gradient");
  Vector sum = gradients.front();
  for (std::size_t k = 1; k < gradients.size(); ++k) {
    if (gradients[k].size() != sum.size())
      throw ShapeError("accumulated gradients differ in size");
    sum += gradients[k];
  }
  return sum / static_cast<double>(gradients.size());
}

OptimizerState make_optimizer(Index num_params, AdamConfig const &config)
{
  OptimizerState opt;
  opt.config = config;
  opt.first_moment = Vector::Zero(num_params);
  opt.second_moment = Vector::Zero(num_params);
  return opt;
}

AdamStepInfo adam_step(OptimizerState &opt, Vector &params, Vector gradient, double lr)
{
  if (params.size() != gradient.size() || opt.first_moment.size() != params.size())
    throw ShapeError("optimizer, parameter and gradient sizes differ");
  if (!gradient.allFinite())
    throw NumericError("non-finite gradient; optimizer step aborted");

  AdamConfig const &c = opt.config;
  AdamStepInfo info;
  info.grad_norm = clip_global_norm(gradient, c.clip_norm);
  info.clipped_grad_norm = gradient.norm();

  params *= 1.0 - lr * c.weight_decay;

  opt.step += 1;
  opt.first_moment = c.beta1 * opt.first_moment + (1.0 - c.beta1) * gradient;
  opt.second_moment = c.beta2 * opt.second_moment + (1.0 - c.beta2) * gradient.cwiseAbs2();
  double const t = static_cast<double>(opt.step);
  double const bc1 = 1.0 - std::pow(c.beta1, t);
  double const bc2 = 1.0 - std::pow(c.beta2, t);
  params.array() -= lr * (opt.first_moment.array() / bc1) / ((opt.second_moment.array() / bc2).sqrt() + c.epsilon);
  return info;
}

double step_decay_lr(double base_lr, Index epoch, Index decay_steps)
{
  if (decay_steps < 1)
    throw ConfigError("decay_steps must be positive");
  return base_lr * std::pow(0.5, static_cast<double>(epoch / decay_steps));
}

double warmup_lr(double base_lr, Index step, Index warmup_steps)
{
  if (warmup_steps <= 0)
    return base_lr;
  return base_lr * std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup_steps));
}

double cosine_lr(double base_lr, Index step, Index total_steps)
{
  if (total_steps <= 0)
    throw ConfigError("cosine schedule needs total_steps > 0");
  double const t = static_cast<double>(std::min(step, total_steps));
  return std::max(base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t / static_cast<double>(total_steps))),
                  kMinLearningRate);
}

PlateauTracker::PlateauTracker(Index patience, double min_delta, double factor)
  : patience_(patience), min_delta_(min_delta), factor_(factor), best_(std::numeric_limits<double>::infinity())
{
  if (patience < 1)
    throw ConfigError("plateau patience must be positive");
  if (!(factor > 0.0 && factor <= 1.0))
    throw ConfigError("plateau factor must lie in (0, 1]");
}

double PlateauTracker::observe(double monitored)
{
  if (monitored < best_ - min_delta_) {
    best_ = monitored;
    since_best_ = 0;
  } else if (++since_best_ >= patience_) {
    multiplier_ *= factor_;
    since_best_ = 0;
  }
  return multiplier_;
}

void LrSchedule::validate() const
{
  if (!(base_lr > 0.0))
    throw ConfigError("base_lr must be positive");
  if (warmup && warmup_steps < 0)
    throw ConfigError("warmup_steps must be non-negative");
  if (decay == DecayKind::step && decay_steps < 1)
    throw ConfigError("decay_steps must be positive");
  if (decay == DecayKind::cosine && total_steps <= 0)
    throw ConfigError("cosine schedule needs total_steps > 0");
  if (plateau && !(plateau_factor > 0.0 && plateau_factor <= 1.0))
    throw ConfigError("plateau factor must lie in (0, 1]");
}

double LrSchedule::at(Index epoch, Index step, double plateau_multiplier) const
{
  double lr = base_lr;
  if (warmup)
    lr = warmup_lr(lr, step, warmup_steps);
  switch (decay) {
  case DecayKind::none:
    break;
  case DecayKind::step:
    lr = step_decay_lr(lr, epoch, decay_steps);
    break;
  case DecayKind::cosine:
    lr = cosine_lr(lr, step, total_steps);
    break;
  }
  if (plateau)
    lr *= plateau_multiplier;
  return std::max(lr, kMinLearningRate);
}

} // namespace dartclean::nn
