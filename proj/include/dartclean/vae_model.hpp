#pragma once

#include "dartclean/neural_numerics.hpp"
#include "dartclean/types.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dartclean {

// Layer layout of the dense VAE. The decoder mirrors the encoder unless set.
struct Architecture
{
  Index window = 48;
  std::vector<Index> encoder_widths{512, 256, 128};
  Index latent_dim = 16;
  std::vector<Index> decoder_widths{128, 256, 512};

  static Architecture mirrored(Index window, std::vector<Index> encoder_widths, Index latent_dim);
  void validate() const;

  friend bool operator==(Architecture const &, Architecture const &) = default;
};

inline constexpr double kSkipAlphaInit = 0.8;
inline constexpr double kGlobalSkipBase = 0.8;  // beta_0
inline constexpr double kGlobalSkipDecay = 0.5; // lambda
inline constexpr double kLogVarClamp = 10.0;

struct ModelParams
{
  Architecture arch;

  std::vector<nn::DenseLayer> encoder;
  std::vector<nn::BatchNormState> encoder_bn;
  nn::DenseLayer mu_head;
  nn::DenseLayer logvar_head;

  std::vector<nn::DenseLayer> decoder;
  std::vector<nn::BatchNormState> decoder_bn;
  Vector skip_alpha; // one learnable scalar per decoder hidden layer
  nn::DenseLayer output;

  // Global skip: final = decoder_output + global_beta * input.
  double global_beta = kGlobalSkipBase;
  double beta0 = kGlobalSkipBase;
  double beta_decay = kGlobalSkipDecay;
};

ModelParams init_model(Architecture const &arch, std::uint64_t seed);

// Same shapes as `params`, every array zero. Used as the gradient container.
ModelParams zeros_like(ModelParams const &params);

// Throws ShapeError when an array disagrees with the architecture descriptor.
void validate_shapes(ModelParams const &params);

enum class ParamClass
{
  dense_weight,
  dense_bias,
  bn_scale,
  bn_shift,
  bn_running,
  skip_alpha,
  global_beta,
};

// A named, contiguous parameter array inside ModelParams.
struct ParamBlock
{
  std::string name;
  ParamClass kind;
  double *data;
  Index rows;
  Index cols;

  Index size() const { return rows * cols; }
};

// Every array including running statistics and the global skip scalar, in a
// stable order. The pointers alias into `params`.
std::vector<ParamBlock> parameter_blocks(ModelParams &params);

// The subset updated by the optimizer.
std::vector<ParamBlock> trainable_blocks(ModelParams &params, bool include_global_beta);

Index count_trainable(ModelParams const &params, bool include_global_beta);
Vector flatten_trainable(ModelParams const &params, bool include_global_beta);
void unflatten_trainable(ModelParams &params, Vector const &flat, bool include_global_beta);

enum class Mode
{
  train,
  infer,
};

struct LatentState
{
  Matrix mu;
  Matrix logvar; // clamped to [-10, 10]
  Matrix z;
  Matrix eps;
};

// Controls stochasticity in train mode. In infer mode both are forced off.
struct TrainNoise
{
  bool sample_eps = true;
  bool dropout = true;
};

struct HiddenCache
{
  Matrix input;
  Matrix pre;
  nn::BatchNormCache bn;
  Matrix bn_out;
  Matrix mask; // empty when dropout is off
  Matrix output;
};

struct ForwardPass
{
  Mode mode = Mode::infer;
  Matrix input;
  std::vector<HiddenCache> encoder;
  Matrix logvar_raw;
  LatentState latent;
  std::vector<HiddenCache> decoder;
  Matrix decoder_output; // before the global skip
  Matrix reconstruction;
  double beta_used = 0.0;
};

// Train mode draws eps and dropout masks from `rng` (required); infer mode sets
// eps = 0 so z == mu, disables dropout and uses running batch-norm statistics.
LatentState encode(ModelParams const &params, Matrix const &windows, Mode mode, nn::Rng *rng = nullptr,
                   TrainNoise noise = {});

Matrix decode(ModelParams const &params, Matrix const &z, Matrix const &windows, Mode mode, nn::Rng *rng = nullptr,
              TrainNoise noise = {});

ForwardPass forward(ModelParams const &params, Matrix const &windows, Mode mode, nn::Rng *rng = nullptr,
                    TrainNoise noise = {});

// Decoder-only pass with caches (latent supplied by the caller).
ForwardPass forward_from_latent(ModelParams const &params, LatentState latent, Matrix const &windows, Mode mode,
                                nn::Rng *rng = nullptr, TrainNoise noise = {});

// Analytic gradients of a scalar loss given dL/dreconstruction, dL/dmu and
// dL/dlogvar. Returns a ModelParams-shaped gradient (running stats zero).
ModelParams backward(ModelParams const &params, ForwardPass const &pass, Matrix const &grad_reconstruction,
                     Matrix const &grad_mu, Matrix const &grad_logvar);

// Batch mean of 0.5 * sum_j (mu^2 + sigma^2 - 1 - log sigma^2).
double kl_divergence(LatentState const &latent);
double kl_divergence(Matrix const &mu, Matrix const &logvar);

struct LossConfig
{
  double lambda_temporal = 0.1;
  double lambda_mean = 0.1;
  Index t_anneal = 5000;
};

// min(1, step / t_anneal)
double kl_anneal(Index step, Index t_anneal);

struct LossBreakdown
{
  double recon = 0.0;
  double kl = 0.0;
  double temporal = 0.0;
  double mean = 0.0;
  double kl_weight = 0.0;
  double lambda_temporal = 0.0;
  double lambda_mean = 0.0;
  double total = 0.0;
};

LossBreakdown composite_loss(Matrix const &target, Matrix const &reconstruction, LatentState const &latent,
                             Index step, LossConfig const &config);

struct LossGradient
{
  Matrix reconstruction;
  Matrix mu;
  Matrix logvar;
};

LossGradient composite_loss_gradient(Matrix const &target, Matrix const &reconstruction, LatentState const &latent,
                                     Index step, LossConfig const &config);

// confidence = 1 / (1 + recon); beta = beta0 * exp(-lambda * confidence).
double reconstruction_confidence(double recon_loss);
double global_skip_for(ModelParams const &params, double recon_loss);
double update_global_skip(ModelParams &params, double recon_loss);

// Infer-mode reconstruction of many windows, evaluated in chunks.
Matrix reconstruct_windows(ModelParams const &params, Matrix const &windows, Index chunk = 2048);
Matrix encode_means(ModelParams const &params, Matrix const &windows, Index chunk = 2048);

} // namespace dartclean
