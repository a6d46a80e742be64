#include "dartclean/vae_model.hpp"

#include "dartclean/error.hpp"

#include <algorithm>
#include <cmath>

namespace dartclean {

Architecture Architecture::mirrored(Index window, std::vector<Index> encoder_widths, Index latent_dim)
{
  Architecture arch;
  arch.window = window;
  arch.decoder_widths.assign(encoder_widths.rbegin(), encoder_widths.rend());
  arch.encoder_widths = std::move(encoder_widths);
  arch.latent_dim = latent_dim;
  return arch;
}

void Architecture::validate() const
{
  if (window < 2)
    throw ConfigError("window must be at least 2 samples");
  if (latent_dim < 1)
    throw ConfigError("latent dimension must be positive");
  if (encoder_widths.empty() || decoder_widths.empty())
    throw ConfigError("encoder and decoder need at least one hidden layer");
  auto const positive = [](Index w) { return w > 0; };
  if (!std::all_of(encoder_widths.begin(), encoder_widths.end(), positive) ||
      !std::all_of(decoder_widths.begin(), decoder_widths.end(), positive))
    throw ConfigError("layer widths must be positive");
}

ModelParams init_model(Architecture const &arch, std::uint64_t seed)
{
  arch.validate();
  nn::Rng rng(seed);
  ModelParams p;
  p.arch = arch;
  Index in = arch.window;
  for (Index w : arch.encoder_widths) {
    p.encoder.push_back(nn::make_dense(in, w, rng));
    p.encoder_bn.push_back(nn::make_batchnorm(w));
    in = w;
  }
  p.mu_head = nn::make_dense(in, arch.latent_dim, rng);
  p.logvar_head = nn::make_dense(in, arch.latent_dim, rng);
  in = arch.latent_dim;
  for (Index w : arch.decoder_widths) {
    p.decoder.push_back(nn::make_dense(in, w, rng));
    p.decoder_bn.push_back(nn::make_batchnorm(w));
    in = w;
  }
  p.skip_alpha = Vector::Constant(static_cast<Index>(arch.decoder_widths.size()), kSkipAlphaInit);
  p.output = nn::make_dense(in, arch.window, rng);
  return p;
}

namespace {

nn::BatchNormState zero_bn(nn::BatchNormState const &bn)
{
  nn::BatchNormState z = bn;
  z.gamma.setZero();
  z.beta.setZero();
  z.running_mean.setZero();
  z.running_var.setZero();
  return z;
}

// Visits every parameter array in the stable checkpoint order. Works on const
// and mutable parameter sets alike.
template <typename Params, typename F> void visit_blocks(Params &p, F &&f)
{
  auto dense = [&](std::string const &name, auto &layer) {
    f(name + ".weight", ParamClass::dense_weight, layer.weights.data(), layer.weights.rows(), layer.weights.cols());
    f(name + ".bias", ParamClass::dense_bias, layer.bias.data(), layer.bias.size(), Index{1});
  };
  auto bn = [&](std::string const &name, auto &state) {
    f(name + ".gamma", ParamClass::bn_scale, state.gamma.data(), state.gamma.size(), Index{1});
    f(name + ".beta", ParamClass::bn_shift, state.beta.data(), state.beta.size(), Index{1});
    f(name + ".running_mean", ParamClass::bn_running, state.running_mean.data(), state.running_mean.size(), Index{1});
    f(name + ".running_var", ParamClass::bn_running, state.running_var.data(), state.running_var.size(), Index{1});
  };
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    dense("encoder." + std::to_string(l), p.encoder[l]);
    bn("encoder_bn." + std::to_string(l), p.encoder_bn[l]);
  }
  dense("mu_head", p.mu_head);
  dense("logvar_head", p.logvar_head);
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    dense("decoder." + std::to_string(l), p.decoder[l]);
    bn("decoder_bn." + std::to_string(l), p.decoder_bn[l]);
  }
  f(std::string("skip_alpha"), ParamClass::skip_alpha, p.skip_alpha.data(), p.skip_alpha.size(), Index{1});
  dense("output", p.output);
  f(std::string("global_beta"), ParamClass::global_beta, &p.global_beta, Index{1}, Index{1});
}

bool is_trainable(ParamClass kind, bool include_global_beta)
{
  if (kind == ParamClass::bn_running)
    return false;
  if (kind == ParamClass::global_beta)
    return include_global_beta;
  return true;
}

// Truncated identity from `in` columns to `out` columns.
Matrix project(Matrix const &x, Index out)
{
  Matrix y = Matrix::Zero(x.rows(), out);
  Index const k = std::min(x.cols(), out);
  y.leftCols(k) = x.leftCols(k);
  return y;
}

Matrix project_transpose(Matrix const &g, Index in)
{
  Matrix y = Matrix::Zero(g.rows(), in);
  Index const k = std::min(g.cols(), in);
  y.leftCols(k) = g.leftCols(k);
  return y;
}

void check_window(ModelParams const &params, Matrix const &windows)
{
  if (windows.cols() != params.arch.window)
    throw ShapeError("window width " + std::to_string(windows.cols()) + " != model window " +
                     std::to_string(params.arch.window));
}

nn::Rng &require_rng(Mode mode, nn::Rng *rng, TrainNoise noise)
{
  static nn::Rng unused;
  if (mode == Mode::train && (noise.dropout || noise.sample_eps)) {
    if (rng == nullptr)
      throw StateError("train-mode forward pass needs a random generator");
    return *rng;
  }
  return rng != nullptr ? *rng : unused;
}

HiddenCache hidden_layer(nn::DenseLayer const &layer, nn::BatchNormState const &bn, Matrix const &input,
                         Index depth, Mode mode, nn::Rng &rng, bool dropout)
{
  HiddenCache c;
  c.input = input;
  c.pre = nn::dense_forward(layer, input);
  c.bn_out = nn::batchnorm_forward(bn, c.pre, mode == Mode::train, c.bn);
  c.output = nn::relu(c.bn_out);
  if (mode == Mode::train && dropout) {
    c.mask = nn::dropout_mask(c.output.rows(), c.output.cols(), nn::dropout_rate(depth), rng);
    c.output.array() *= c.mask.array();
  }
  return c;
}

// Backward through Dropout(ReLU(BN(Dense(x)))), accumulating into the
// gradient containers. Returns dL/dx.
Matrix hidden_backward(nn::DenseLayer const &layer, nn::BatchNormState const &bn, HiddenCache const &c,
                       Matrix grad_out, nn::DenseLayer &g_layer, nn::BatchNormState &g_bn)
{
  if (c.mask.size() != 0)
    grad_out.array() *= c.mask.array();
  Matrix const d_bn_out = nn::relu_backward(c.bn_out, grad_out);
  Matrix const d_pre = nn::batchnorm_backward(bn, c.bn, d_bn_out, g_bn);
  return nn::dense_backward(layer, c.input, d_pre, g_layer);
}

void run_encoder(ModelParams const &params, Matrix const &windows, Mode mode, nn::Rng &rng, TrainNoise noise,
                 ForwardPass &pass)
{
  check_window(params, windows);
  pass.mode = mode;
  pass.input = windows;
  pass.encoder.clear();
  Matrix h = windows;
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    pass.encoder.push_back(
        hidden_layer(params.encoder[l], params.encoder_bn[l], h, static_cast<Index>(l), mode, rng, noise.dropout));
    h = pass.encoder.back().output;
  }
  LatentState &lat = pass.latent;
  lat.mu = nn::dense_forward(params.mu_head, h);
  pass.logvar_raw = nn::dense_forward(params.logvar_head, h);
  lat.logvar = pass.logvar_raw.cwiseMax(-kLogVarClamp).cwiseMin(kLogVarClamp);
  lat.eps = Matrix::Zero(lat.mu.rows(), lat.mu.cols());
  if (mode == Mode::train && noise.sample_eps) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Index r = 0; r < lat.eps.rows(); ++r)
      for (Index c = 0; c < lat.eps.cols(); ++c)
        lat.eps(r, c) = normal(rng);
  }
  lat.z = lat.mu + ((0.5 * lat.logvar.array()).exp() * lat.eps.array()).matrix();
}

void run_decoder(ModelParams const &params, Matrix const &windows, Mode mode, nn::Rng &rng, TrainNoise noise,
                 ForwardPass &pass)
{
  if (pass.latent.z.cols() != params.arch.latent_dim)
    throw ShapeError("latent width " + std::to_string(pass.latent.z.cols()) + " != " +
                     std::to_string(params.arch.latent_dim));
  if (pass.latent.z.rows() != windows.rows())
    throw ShapeError("latent and window batch sizes differ");
  pass.decoder.clear();
  Matrix h = pass.latent.z;
  for (std::size_t l = 0; l < params.decoder.size(); ++l) {
    HiddenCache c =
        hidden_layer(params.decoder[l], params.decoder_bn[l], h, static_cast<Index>(l), mode, rng, noise.dropout);
    c.output += params.skip_alpha[static_cast<Index>(l)] * project(h, c.output.cols());
    h = c.output;
    pass.decoder.push_back(std::move(c));
  }
  pass.decoder_output = nn::dense_forward(params.output, h);
  pass.beta_used = params.global_beta;
  pass.reconstruction = pass.decoder_output + params.global_beta * windows;
  if (!pass.reconstruction.allFinite())
    throw NumericError("non-finite reconstruction");
}

} // namespace

ModelParams zeros_like(ModelParams const &params)
{
  ModelParams z = params;
  for (auto &l : z.encoder)
    l = nn::zeros_like(l);
  for (auto &b : z.encoder_bn)
    b = zero_bn(b);
  z.mu_head = nn::zeros_like(z.mu_head);
  z.logvar_head = nn::zeros_like(z.logvar_head);
  for (auto &l : z.decoder)
    l = nn::zeros_like(l);
  for (auto &b : z.decoder_bn)
    b = zero_bn(b);
  z.skip_alpha.setZero();
  z.output = nn::zeros_like(z.output);
  z.global_beta = 0.0;
  return z;
}

void validate_shapes(ModelParams const &p)
{
  Architecture const &a = p.arch;
  a.validate();
  auto check_dense = [](std::string const &name, nn::DenseLayer const &l, Index in, Index out) {
    if (l.weights.rows() != out || l.weights.cols() != in)
      throw ShapeError(name + ".weight has shape [" + std::to_string(l.weights.rows()) + "x" +
                       std::to_string(l.weights.cols()) + "], expected [" + std::to_string(out) + "x" +
                       std::to_string(in) + "]");
    if (l.bias.size() != out)
      throw ShapeError(name + ".bias has length " + std::to_string(l.bias.size()) + ", expected " +
                       std::to_string(out));
  };
  auto check_bn = [](std::string const &name, nn::BatchNormState const &b, Index dim) {
    if (b.gamma.size() != dim || b.beta.size() != dim || b.running_mean.size() != dim || b.running_var.size() != dim)
      throw ShapeError(name + " has the wrong width, expected " + std::to_string(dim));
  };
  if (p.encoder.size() != a.encoder_widths.size() || p.encoder_bn.size() != a.encoder_widths.size())
    throw ShapeError("encoder depth disagrees with the architecture");
  if (p.decoder.size() != a.decoder_widths.size() || p.decoder_bn.size() != a.decoder_widths.size())
    throw ShapeError("decoder depth disagrees with the architecture");
  Index in = a.window;
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    check_dense("encoder." + std::to_string(l), p.encoder[l], in, a.encoder_widths[l]);
    check_bn("encoder_bn." + std::to_string(l), p.encoder_bn[l], a.encoder_widths[l]);
    in = a.encoder_widths[l];
  }
  check_dense("mu_head", p.mu_head, in, a.latent_dim);
  check_dense("logvar_head", p.logvar_head, in, a.latent_dim);
  in = a.latent_dim;
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    check_dense("decoder." + std::to_string(l), p.decoder[l], in, a.decoder_widths[l]);
    check_bn("decoder_bn." + std::to_string(l), p.decoder_bn[l], a.decoder_widths[l]);
    in = a.decoder_widths[l];
  }
  if (p.skip_alpha.size() != static_cast<Index>(a.decoder_widths.size()))
    throw ShapeError("skip_alpha has length " + std::to_string(p.skip_alpha.size()) + ", expected " +
                     std::to_string(a.decoder_widths.size()));
  check_dense("output", p.output, in, a.window);
}

std::vector<ParamBlock> parameter_blocks(ModelParams &params)
{
  std::vector<ParamBlock> blocks;
  visit_blocks(params, [&](std::string name, ParamClass kind, double *data, Index rows, Index cols) {
    blocks.push_back({std::move(name), kind, data, rows, cols});
  });
  return blocks;
}

std::vector<ParamBlock> trainable_blocks(ModelParams &params, bool include_global_beta)
{
  auto blocks = parameter_blocks(params);
  std::erase_if(blocks, [&](ParamBlock const &b) { return !is_trainable(b.kind, include_global_beta); });
  return blocks;
}

Index count_trainable(ModelParams const &params, bool include_global_beta)
{
  Index n = 0;
  visit_blocks(params, [&](std::string const &, ParamClass kind, double const *, Index rows, Index cols) {
    if (is_trainable(kind, include_global_beta))
      n += rows * cols;
  });
  return n;
}

Vector flatten_trainable(ModelParams const &params, bool include_global_beta)
{
  Vector flat(count_trainable(params, include_global_beta));
  Index offset = 0;
  visit_blocks(params, [&](std::string const &, ParamClass kind, double const *data, Index rows, Index cols) {
    if (!is_trainable(kind, include_global_beta))
      return;
    flat.segment(offset, rows * cols) = Eigen::Map<Vector const>(data, rows * cols);
    offset += rows * cols;
  });
  return flat;
}

void unflatten_trainable(ModelParams &params, Vector const &flat, bool include_global_beta)
{
  if (flat.size() != count_trainable(params, include_global_beta))
    throw ShapeError("flat parameter vector has the wrong length");
  Index offset = 0;
  visit_blocks(params, [&](std::string const &, ParamClass kind, double *data, Index rows, Index cols) {
    if (!is_trainable(kind, include_global_beta))
      return;
    Eigen::Map<Vector>(data, rows * cols) = flat.segment(offset, rows * cols);
    offset += rows * cols;
  });
}

LatentState encode(ModelParams const &params, Matrix const &windows, Mode mode, nn::Rng *rng, TrainNoise noise)
{
  ForwardPass pass;
  run_encoder(params, windows, mode, require_rng(mode, rng, noise), noise, pass);
  return std::move(pass.latent);
}

Matrix decode(ModelParams const &params, Matrix const &z, Matrix const &windows, Mode mode, nn::Rng *rng,
              TrainNoise noise)
{
  check_window(params, windows);
  ForwardPass pass;
  pass.mode = mode;
  pass.input = windows;
  pass.latent.z = z;
  run_decoder(params, windows, mode, require_rng(mode, rng, noise), noise, pass);
  return std::move(pass.reconstruction);
}

ForwardPass forward(ModelParams const &params, Matrix const &windows, Mode mode, nn::Rng *rng, TrainNoise noise)
{
  nn::Rng &r = require_rng(mode, rng, noise);
  ForwardPass pass;
  run_encoder(params, windows, mode, r, noise, pass);
  run_decoder(params, windows, mode, r, noise, pass);
  return pass;
}

ForwardPass forward_from_latent(ModelParams const &params, LatentState latent, Matrix const &windows, Mode mode,
                                nn::Rng *rng, TrainNoise noise)
{
  check_window(params, windows);
  ForwardPass pass;
  pass.mode = mode;
  pass.input = windows;
  pass.latent = std::move(latent);
  run_decoder(params, windows, mode, require_rng(mode, rng, noise), noise, pass);
  return pass;
}

ModelParams backward(ModelParams const &params, ForwardPass const &pass, Matrix const &grad_reconstruction,
                     Matrix const &grad_mu, Matrix const &grad_logvar)
{
  if (pass.encoder.size() != params.encoder.size() || pass.decoder.size() != params.decoder.size() ||
      pass.logvar_raw.size() == 0)
    throw StateError("backward needs a complete forward pass");
  if (grad_reconstruction.rows() != pass.reconstruction.rows() ||
      grad_reconstruction.cols() != pass.reconstruction.cols())
    throw ShapeError("reconstruction gradient shape mismatch");
  LatentState const &lat = pass.latent;
  if (grad_mu.rows() != lat.mu.rows() || grad_mu.cols() != lat.mu.cols() || grad_logvar.rows() != lat.mu.rows() ||
      grad_logvar.cols() != lat.mu.cols())
    throw ShapeError("latent gradient shape mismatch");

  ModelParams g = zeros_like(params);
  g.global_beta = (grad_reconstruction.array() * pass.input.array()).sum();

  Matrix dh = nn::dense_backward(params.output, pass.decoder.back().output, grad_reconstruction, g.output);
  for (std::size_t l = params.decoder.size(); l-- > 0;) {
    HiddenCache const &c = pass.decoder[l];
    auto const li = static_cast<Index>(l);
    g.skip_alpha[li] = (dh.array() * project(c.input, dh.cols()).array()).sum();
    Matrix d_in = params.skip_alpha[li] * project_transpose(dh, c.input.cols());
    d_in += hidden_backward(params.decoder[l], params.decoder_bn[l], c, dh, g.decoder[l], g.decoder_bn[l]);
    dh = std::move(d_in);
  }

  // z = mu + exp(logvar / 2) * eps, logvar = clamp(raw)
  Matrix const d_mu = grad_mu + dh;
  Matrix d_logvar = grad_logvar + (dh.array() * lat.eps.array() * 0.5 * (0.5 * lat.logvar.array()).exp()).matrix();
  d_logvar = (pass.logvar_raw.array().abs() < kLogVarClamp).select(d_logvar, 0.0);

  Matrix const &h_top = pass.encoder.back().output;
  dh = nn::dense_backward(params.mu_head, h_top, d_mu, g.mu_head);
  dh += nn::dense_backward(params.logvar_head, h_top, d_logvar, g.logvar_head);
  for (std::size_t l = params.encoder.size(); l-- > 0;)
    dh = hidden_backward(params.encoder[l], params.encoder_bn[l], pass.encoder[l], dh, g.encoder[l],
                         g.encoder_bn[l]);
  return g;
}

double kl_divergence(Matrix const &mu, Matrix const &logvar)
{
  if (mu.rows() != logvar.rows() || mu.cols() != logvar.cols())
    throw ShapeError("mu and logvar shapes differ");
  if (mu.rows() == 0)
    return 0.0;
  double const total = 0.5 * (mu.array().square() + logvar.array().exp() - 1.0 - logvar.array()).sum();
  return total / static_cast<double>(mu.rows());
}

double kl_divergence(LatentState const &latent) { return kl_divergence(latent.mu, latent.logvar); }

double kl_anneal(Index step, Index t_anneal)
{
  if (t_anneal <= 0)
    return 1.0;
  return std::min(1.0, static_cast<double>(step) / static_cast<double>(t_anneal));
}

namespace {

void check_loss_shapes(Matrix const &target, Matrix const &reconstruction)
{
  if (target.rows() != reconstruction.rows() || target.cols() != reconstruction.cols())
    throw ShapeError("target and reconstruction shapes differ");
  if (target.cols() < 2)
    throw ConfigError("temporal loss needs windows of at least 2 samples");
  if (target.rows() == 0)
    throw ShapeError("empty batch");
}

Matrix first_differences(Matrix const &x)
{
  Index const w = x.cols();
  return x.rightCols(w - 1) - x.leftCols(w - 1);
}

} // namespace

LossBreakdown composite_loss(Matrix const &target, Matrix const &reconstruction, LatentState const &latent,
                             Index step, LossConfig const &config)
{
  check_loss_shapes(target, reconstruction);
  LossBreakdown out;
  out.recon = (reconstruction - target).array().square().mean();
  out.kl = kl_divergence(latent);
  out.temporal = (first_differences(reconstruction) - first_differences(target)).array().square().mean();
  out.mean = std::abs(target.mean() - reconstruction.mean());
  out.kl_weight = kl_anneal(step, config.t_anneal);
  out.lambda_temporal = config.lambda_temporal;
  out.lambda_mean = config.lambda_mean;
  out.total = out.recon + out.kl_weight * out.kl + out.lambda_temporal * out.temporal + out.lambda_mean * out.mean;
  return out;
}

LossGradient composite_loss_gradient(Matrix const &target, Matrix const &reconstruction, LatentState const &latent,
                                     Index step, LossConfig const &config)
{
  check_loss_shapes(target, reconstruction);
  double const b = static_cast<double>(target.rows());
  Index const w = target.cols();
  double const n = b * static_cast<double>(w);

  LossGradient g;
  g.reconstruction = (2.0 / n) * (reconstruction - target);

  Matrix const d = first_differences(reconstruction) - first_differences(target);
  double const scale = config.lambda_temporal * 2.0 / (b * static_cast<double>(w - 1));
  g.reconstruction.rightCols(w - 1) += scale * d;
  g.reconstruction.leftCols(w - 1) -= scale * d;

  double const diff = reconstruction.mean() - target.mean();
  double const sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
  g.reconstruction.array() += config.lambda_mean * sign / n;

  double const kw = kl_anneal(step, config.t_anneal);
  g.mu = (kw / b) * latent.mu;
  g.logvar = (kw * 0.5 / b) * (latent.logvar.array().exp() - 1.0).matrix();
  return g;
}

double reconstruction_confidence(double recon_loss)
{
  return 1.0 / (1.0 + std::max(recon_loss, 0.0));
}

double global_skip_for(ModelParams const &params, double recon_loss)
{
  return params.beta0 * std::exp(-params.beta_decay * reconstruction_confidence(recon_loss));
}

double update_global_skip(ModelParams &params, double recon_loss)
{
  params.global_beta = global_skip_for(params, recon_loss);
  return params.global_beta;
}

Matrix reconstruct_windows(ModelParams const &params, Matrix const &windows, Index chunk)
{
  check_window(params, windows);
  chunk = std::max<Index>(chunk, 1);
  Matrix out(windows.rows(), windows.cols());
  for (Index r = 0; r < windows.rows(); r += chunk) {
    Index const rows = std::min(chunk, windows.rows() - r);
    out.middleRows(r, rows) = forward(params, windows.middleRows(r, rows), Mode::infer).reconstruction;
  }
  return out;
}

Matrix encode_means(ModelParams const &params, Matrix const &windows, Index chunk)
{
  check_window(params, windows);
  chunk = std::max<Index>(chunk, 1);
  Matrix out(windows.rows(), params.arch.latent_dim);
  for (Index r = 0; r < windows.rows(); r += chunk) {
    Index const rows = std::min(chunk, windows.rows() - r);
    out.middleRows(r, rows) = encode(params, windows.middleRows(r, rows), Mode::infer).mu;
  }
  return out;
}

} // namespace dartclean
