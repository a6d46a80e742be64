#include "dartclean/trainer.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace dartclean {

void TrainConfig::validate() const
{
  if (epochs < 1)
    throw ConfigError("epochs must be at least 1");
  if (batch_size < 1)
    throw ConfigError("batch_size must be at least 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 0.5))
    throw ConfigError("validation_fraction must lie in (0, 0.5)");
  if (patience < 1 || plateau_patience < 1)
    throw ConfigError("patience values must be at least 1");
  if (accumulation_steps < 1)
    throw ConfigError("accumulation_steps must be at least 1");
  if (!(clip_norm > 0.0))
    throw ConfigError("clip_norm must be positive");
  if (weight_decay < 0.0 || min_delta < 0.0 || t_anneal < 0 || lambda_temporal < 0.0 || lambda_mean < 0.0)
    throw ConfigError("negative regularization or threshold setting");
  schedule(1).validate();
}

nn::LrSchedule TrainConfig::schedule(Index steps_per_epoch) const
{
  nn::LrSchedule s;
  s.base_lr = base_lr;
  s.warmup = warmup;
  s.warmup_steps = warmup_steps;
  s.decay = decay;
  s.decay_steps = decay_steps;
  s.total_steps = epochs * std::max<Index>(steps_per_epoch, 1);
  s.plateau = plateau;
  s.plateau_factor = 0.5;
  return s;
}

namespace {

std::string number(double v)
{
  std::array<char, 64> buf{};
  auto const [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return ec == std::errc{} ? std::string(buf.data(), ptr) : std::string("nan");
}

struct LossSums
{
  double weight = 0.0;
  LossBreakdown sum;

  void add(LossBreakdown const &l, double w)
  {
    weight += w;
    sum.recon += w * l.recon;
    sum.kl += w * l.kl;
    sum.temporal += w * l.temporal;
    sum.mean += w * l.mean;
    sum.total += w * l.total;
    sum.kl_weight = l.kl_weight;
    sum.lambda_temporal = l.lambda_temporal;
    sum.lambda_mean = l.lambda_mean;
  }

  LossBreakdown mean() const
  {
    LossBreakdown m = sum;
    if (weight > 0.0) {
      m.recon /= weight;
      m.kl /= weight;
      m.temporal /= weight;
      m.mean /= weight;
      m.total /= weight;
    }
    return m;
  }
};

void update_all_running_stats(ModelParams &model, ForwardPass const &pass)
{
  for (std::size_t l = 0; l < model.encoder_bn.size(); ++l)
    nn::update_running_stats(model.encoder_bn[l], pass.encoder[l].bn);
  for (std::size_t l = 0; l < model.decoder_bn.size(); ++l)
    nn::update_running_stats(model.decoder_bn[l], pass.decoder[l].bn);
}

} // namespace

void write_train_log_csv(std::ostream &out, TrainLog const &log)
{
  out << "epoch,recon,kl,temporal,mean,total,val_total,lr,grad_norm\n";
  for (auto const &r : log.epochs) {
    out << r.epoch << ',' << number(r.train.recon) << ',' << number(r.train.kl) << ',' << number(r.train.temporal)
        << ',' << number(r.train.mean) << ',' << number(r.train.total) << ',' << number(r.validation.total) << ','
        << number(r.lr) << ',' << number(r.grad_norm) << '\n';
  }
}

LossBreakdown evaluate_loss(ModelParams const &params, Matrix const &windows, Index step, LossConfig const &config)
{
  if (windows.rows() == 0)
    throw DataError("no windows to evaluate");
  Index const chunk = 4096;
  double const rows = static_cast<double>(windows.rows());
  double const w = static_cast<double>(windows.cols());
  double recon = 0.0, kl = 0.0, temporal = 0.0, diff_sum = 0.0;
  for (Index r = 0; r < windows.rows(); r += chunk) {
    Index const n = std::min(chunk, windows.rows() - r);
    Matrix const x = windows.middleRows(r, n);
    ForwardPass const pass = forward(params, x, Mode::infer);
    LossBreakdown const part = composite_loss(x, pass.reconstruction, pass.latent, step, config);
    double const frac = static_cast<double>(n);
    recon += frac * part.recon;
    kl += frac * part.kl;
    temporal += frac * part.temporal;
    diff_sum += (pass.reconstruction - x).sum();
  }
  LossBreakdown out;
  out.recon = recon / rows;
  out.kl = kl / rows;
  out.temporal = temporal / rows;
  out.mean = std::abs(diff_sum / (rows * w));
  out.kl_weight = kl_anneal(step, config.t_anneal);
  out.lambda_temporal = config.lambda_temporal;
  out.lambda_mean = config.lambda_mean;
  out.total = out.recon + out.kl_weight * out.kl + out.lambda_temporal * out.temporal + out.lambda_mean * out.mean;
  return out;
}

TrainResult train(ModelParams model, WindowBatch const &windows, TrainConfig const &config)
{
  config.validate();
  validate_shapes(model);
  Index const total = windows.windows.rows();
  if (total < 2)
    throw DataError("training needs at least 2 windows");
  if (windows.windows.cols() != model.arch.window)
    throw ShapeError("window width disagrees with the model");

  Index const n_val = std::clamp<Index>(
      static_cast<Index>(std::llround(config.validation_fraction * static_cast<double>(total))), 1, total - 1);
  Index const n_train = total - n_val;
  Matrix const validation = windows.windows.bottomRows(n_val);

  bool const train_beta = config.train_global_skip;
  LossConfig const loss_config = config.loss();
  Index const batches_per_epoch = (n_train + config.batch_size - 1) / config.batch_size;
  nn::LrSchedule const schedule = config.schedule((batches_per_epoch + config.accumulation_steps - 1) /
                                                  config.accumulation_steps);
  nn::AdamConfig adam;
  adam.weight_decay = config.weight_decay;
  adam.clip_norm = config.clip_norm;
  nn::OptimizerState opt = nn::make_optimizer(count_trainable(model, train_beta), adam);
  nn::PlateauTracker plateau(config.plateau_patience, config.min_delta);
  nn::Rng rng(config.seed);

  std::vector<Index> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), Index{0});

  TrainLog log;
  ModelParams best = model;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<double> val_history;
  std::vector<double> kl_history;
  int bad_batches = 0;

  for (Index epoch = 1;; ++epoch) {
    auto const started = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);

    LossSums sums;
    double norm_sum = 0.0;
    Index updates = 0;
    double lr = schedule.at(epoch - 1, opt.step, plateau.multiplier());
    std::vector<Vector> pending;

    for (Index b = 0; b < batches_per_epoch; ++b) {
      Index const start = b * config.batch_size;
      Index const rows = std::min(config.batch_size, n_train - start);
      Matrix batch(rows, windows.windows.cols());
      for (Index r = 0; r < rows; ++r)
        batch.row(r) = windows.windows.row(order[static_cast<std::size_t>(start + r)]);

      ForwardPass pass;
      LossBreakdown loss;
      bool finite = true;
      try {
        pass = forward(model, batch, Mode::train, &rng);
        loss = composite_loss(batch, pass.reconstruction, pass.latent, opt.step, loss_config);
        finite = std::isfinite(loss.total);
      } catch (NumericError const &) {
        finite = false;
      }
      if (!finite) {
        if (++bad_batches >= 3)
          throw DivergenceError("training diverged: 3 consecutive non-finite batch losses in epoch " +
                                    std::to_string(epoch),
                                log);
        continue;
      }
      bad_batches = 0;

      LossGradient const lg = composite_loss_gradient(batch, pass.reconstruction, pass.latent, opt.step, loss_config);
      ModelParams const grads = backward(model, pass, lg.reconstruction, lg.mu, lg.logvar);
      update_all_running_stats(model, pass);
      sums.add(loss, static_cast<double>(rows));

      pending.push_back(flatten_trainable(grads, train_beta));
      if (static_cast<Index>(pending.size()) == config.accumulation_steps || b + 1 == batches_per_epoch) {
        Vector const g = nn::accumulate_gradients(pending);
        pending.clear();
        lr = schedule.at(epoch - 1, opt.step, plateau.multiplier());
        Vector flat = flatten_trainable(model, train_beta);
        nn::AdamStepInfo info;
        try {
          info = nn::adam_step(opt, flat, g, lr);
        } catch (NumericError const &) {
          if (++bad_batches >= 3)
            throw DivergenceError("training diverged: non-finite gradients in epoch " + std::to_string(epoch), log);
          continue;
        }
        unflatten_trainable(model, flat, train_beta);
        norm_sum += info.clipped_grad_norm;
        ++updates;
      }
      if (!train_beta)
        update_global_skip(model, loss.recon);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train = sums.mean();
    try {
      rec.validation = evaluate_loss(model, validation, opt.step, loss_config);
    } catch (NumericError const &e) {
      throw DivergenceError(std::string("validation failed in epoch ") + std::to_string(epoch) + ": " + e.what(),
                            log);
    }
    if (!std::isfinite(rec.validation.total))
      throw DivergenceError("non-finite validation loss in epoch " + std::to_string(epoch), log);
    rec.lr = lr;
    rec.grad_norm = updates > 0 ? norm_sum / static_cast<double>(updates) : 0.0;
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    log.epochs.push_back(rec);

    if (rec.validation.total < best_val) {
      best_val = rec.validation.total;
      best = model;
      log.best_epoch = epoch;
    }
    if (config.plateau)
      plateau.observe(rec.validation.total);

    val_history.push_back(rec.validation.total);
    kl_history.push_back(rec.validation.kl);
    StopDecision const d = early_stop_check(val_history, kl_history, rec.grad_norm, config);
    if (d.stop) {
      log.stop_reason = d.message;
      break;
    }
  }
  return {std::move(best), std::move(log)};
}

StopDecision early_stop_check(std::span<double const> val_history, std::span<double const> kl_history,
                              double grad_norm, TrainConfig const &config)
{
  auto const t = static_cast<Index>(val_history.size());
  Index const p = config.patience;
  if (t == 0)
    return {};

  if (t > p) {
    auto const split = val_history.begin() + (t - p);
    double const reference = *std::min_element(val_history.begin(), split);
    double const recent = *std::min_element(split, val_history.end());
    if (recent > reference - config.min_delta)
      return {true, StopReason::primary,
              "primary: validation loss did not improve by " + number(config.min_delta) + " within " +
                  std::to_string(p) + " epochs"};
    if (kl_history.size() >= 2) {
      double const dkl = std::abs(kl_history.back() - kl_history[kl_history.size() - 2]);
      if (dkl < config.kl_stable_threshold && grad_norm < config.grad_norm_threshold)
        return {true, StopReason::secondary,
                "secondary: KL change " + number(dkl) + " < " + number(config.kl_stable_threshold) +
                    " with gradient norm " + number(grad_norm) + " < " + number(config.grad_norm_threshold)};
    }
  }
  if (t >= config.epochs)
    return {true, StopReason::epoch_limit, "epoch limit: reached " + std::to_string(config.epochs) + " epochs"};
  return {};
}

ConvergenceProfile convergence_profile(std::span<double const> losses)
{
  if (losses.size() < 21)
    throw DataError("convergence profile needs at least 21 epochs, got " + std::to_string(losses.size()));
  // losses[k] is L_{k+1}; delta_n = |L_n - L_{n-1}|.
  auto phase_mean = [&](std::size_t first_n, std::size_t last_n) {
    double sum = 0.0;
    for (std::size_t n = first_n; n <= last_n; ++n)
      sum += std::abs(losses[n - 1] - losses[n - 2]);
    return sum / static_cast<double>(last_n - first_n + 1);
  };
  return {phase_mean(2, 10), phase_mean(11, 20), phase_mean(21, losses.size())};
}

ConvergenceProfile convergence_profile(TrainLog const &log)
{
  std::vector<double> totals;
  totals.reserve(log.epochs.size());
  for (auto const &r : log.epochs)
    totals.push_back(r.train.total);
  return convergence_profile(totals);
}

} // namespace dartclean
