#include "dartclean/error.hpp"
#include "dartclean/neural_numerics.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace dartclean;
using namespace dartclean::nn;

namespace {

Matrix random_matrix(Index r, Index c, Rng &rng)
{
  std::normal_distribution<double> d(0.0, 1.0);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i)
    m.data()[i] = d(rng);
  return m;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

} // namespace

TEST_CASE("dense_forward")
{
  DenseLayer zero{Matrix::Zero(3, 4), Vector::LinSpaced(3, 1.0, 3.0)};
  Matrix const out = dense_forward(zero, Matrix::Random(5, 4));
  for (Index r = 0; r < 5; ++r)
    CHECK(out.row(r).transpose() == zero.bias);

  DenseLayer scalar{Matrix::Constant(1, 1, 2.0), Vector::Constant(1, 1.0)};
  CHECK(dense_forward(scalar, Matrix::Constant(1, 1, 3.0))(0, 0) == 7.0);

  Rng rng(3);
  DenseLayer const layer{random_matrix(5, 4, rng), random_matrix(5, 1, rng)};
  Matrix const x = random_matrix(7, 4, rng);
  Matrix const y = dense_forward(layer, x);
  for (Index n = 0; n < 7; ++n)
    for (Index o = 0; o < 5; ++o) {
      double acc = layer.bias[o];
      for (Index i = 0; i < 4; ++i)
        acc += layer.weights(o, i) * x(n, i);
      CHECK(std::abs(y(n, o) - acc) <= 1e-12);
    }

  CHECK_THROWS_AS(dense_forward(layer, Matrix::Zero(2, 3)), ShapeError);
}

TEST_CASE("dense_backward hand derivative and zero gradient")
{
  // L = (w x - t)^2 with w = 1, b = 0, x = 2, t = 0
  DenseLayer const layer{Matrix::Constant(1, 1, 1.0), Vector::Zero(1)};
  Matrix const x = Matrix::Constant(1, 1, 2.0);
  Matrix const y = dense_forward(layer, x);
  DenseLayer grad = zeros_like(layer);
  dense_backward(layer, x, 2.0 * y, grad);
  CHECK(grad.weights(0, 0) == 8.0);
  CHECK(grad.bias[0] == 4.0);

  Rng rng(5);
  DenseLayer const big{random_matrix(4, 6, rng), random_matrix(4, 1, rng)};
  DenseLayer g = zeros_like(big);
  Matrix const dx = dense_backward(big, random_matrix(3, 6, rng), Matrix::Zero(3, 4), g);
  CHECK((g.weights.array() == 0.0).all());
  CHECK((g.bias.array() == 0.0).all());
  CHECK((dx.array() == 0.0).all());
}

TEST_CASE("dense and batch-norm gradients match finite differences")
{
  Rng rng(7);
  DenseLayer layer{random_matrix(5, 6, rng), random_matrix(5, 1, rng)};
  BatchNormState bn = make_batchnorm(5);
  bn.gamma = random_matrix(5, 1, rng);
  bn.beta = random_matrix(5, 1, rng);
  Matrix x = random_matrix(8, 6, rng);
  Matrix const probe = random_matrix(8, 5, rng);

  // L = sum(probe .* relu(bn(dense(x))))
  auto loss = [&] {
    BatchNormCache cache;
    Matrix const h = relu(batchnorm_forward(bn, dense_forward(layer, x), true, cache));
    return (probe.array() * h.array()).sum();
  };

  Matrix const pre = dense_forward(layer, x);
  BatchNormCache cache;
  Matrix const normed = batchnorm_forward(bn, pre, true, cache);
  Matrix const g_normed = relu_backward(normed, probe);
  BatchNormState g_bn = make_batchnorm(5);
  g_bn.gamma.setZero();
  g_bn.beta.setZero();
  Matrix const g_pre = batchnorm_backward(bn, cache, g_normed, g_bn);
  DenseLayer g_layer = zeros_like(layer);
  Matrix const g_x = dense_backward(layer, x, g_pre, g_layer);

  double const h = 1e-5;
  auto fd = [&](double &p) {
    double const saved = p;
    p = saved + h;
    double const up = loss();
    p = saved - h;
    double const down = loss();
    p = saved;
    return (up - down) / (2 * h);
  };
  double worst = 0.0;
  for (Index i = 0; i < layer.weights.size(); ++i)
    worst = std::max(worst, rel_err(g_layer.weights.data()[i], fd(layer.weights.data()[i])));
  for (Index i = 0; i < layer.bias.size(); ++i)
    worst = std::max(worst, rel_err(g_layer.bias[i], fd(layer.bias[i])));
  for (Index i = 0; i < 5; ++i) {
    worst = std::max(worst, rel_err(g_bn.gamma[i], fd(bn.gamma[i])));
    worst = std::max(worst, rel_err(g_bn.beta[i], fd(bn.beta[i])));
  }
  for (Index i = 0; i < x.size(); ++i)
    worst = std::max(worst, rel_err(g_x.data()[i], fd(x.data()[i])));
  CHECK(worst <= 1e-4);
}

TEST_CASE("batch-norm inference is affine with frozen statistics")
{
  Rng rng(9);
  BatchNormState bn = make_batchnorm(3);
  bn.gamma << 1.5, -0.5, 2.0;
  bn.beta << 0.1, 0.2, 0.3;
  bn.running_mean << 1.0, -1.0, 0.5;
  bn.running_var << 4.0, 0.25, 1.0;
  Matrix const a = random_matrix(4, 3, rng);
  Matrix const b = random_matrix(4, 3, rng);
  BatchNormCache c;
  Matrix const fa = batchnorm_forward(bn, a, false, c);
  Matrix const fb = batchnorm_forward(bn, b, false, c);
  Matrix const fmid = batchnorm_forward(bn, 0.3 * a + 0.7 * b, false, c);
  CHECK((fmid - (0.3 * fa + 0.7 * fb)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(bn.running_mean[0] == 1.0);

  BatchNormState g = make_batchnorm(3);
  CHECK_THROWS_AS(batchnorm_backward(bn, BatchNormCache{}, a, g), StateError);
}

TEST_CASE("running statistics update")
{
  BatchNormState bn = make_batchnorm(2);
  Matrix x(2, 2);
  x << 0.0, 2.0, 2.0, 6.0;
  BatchNormCache cache;
  batchnorm_forward(bn, x, true, cache);
  update_running_stats(bn, cache);
  CHECK(bn.running_mean[0] == doctest::Approx(0.1));
  CHECK(bn.running_mean[1] == doctest::Approx(0.4));
  CHECK(bn.running_var[0] == doctest::Approx(0.9 + 0.1 * 1.0));
  CHECK(bn.running_var[1] == doctest::Approx(0.9 + 0.1 * 4.0));
}

TEST_CASE("dropout")
{
  CHECK(dropout_rate(0) == doctest::Approx(0.10));
  CHECK(dropout_rate(2) == doctest::Approx(0.20));
  CHECK(dropout_rate(4) == doctest::Approx(0.30));
  CHECK(dropout_rate(9) == doctest::Approx(0.30));

  Rng rng(11);
  Matrix const m = dropout_mask(200, 50, 0.2, rng);
  double const keep = 1.0 / 0.8;
  CHECK(((m.array() == 0.0) || (m.array() == keep)).all());
  double const kept = static_cast<double>((m.array() != 0.0).count()) / static_cast<double>(m.size());
  CHECK(kept == doctest::Approx(0.8).epsilon(0.03));
  CHECK((dropout_mask(3, 3, 0.0, rng).array() == 1.0).all());
}

TEST_CASE("clipping")
{
  Vector g(2);
  g << 0.0, 2.0;
  CHECK(clip_global_norm(g, 1.0) == 2.0);
  CHECK(g[1] == 1.0);

  Rng rng(13);
  std::uniform_real_distribution<double> scale(0.0, 100.0);
  for (int trial = 0; trial < 200; ++trial) {
    Vector v = random_matrix(50, 1, rng) * scale(rng);
    Vector const orig = v;
    clip_global_norm(v, 1.0);
    CHECK(v.norm() <= 1.0 + 1e-12);
    if (orig.norm() <= 1.0)
      CHECK(v == orig);
  }
}

TEST_CASE("adam step")
{
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  OptimizerState opt = make_optimizer(3, cfg);
  Vector p(3);
  p << 1.0, -2.0, 3.0;
  Vector const before = p;
  adam_step(opt, p, Vector::Zero(3), 0.1);
  CHECK(p == before);

  // clipping happens before the moments are updated
  OptimizerState a = make_optimizer(2, cfg);
  Vector pa = Vector::Zero(2);
  Vector g(2);
  g << 0.0, 2.0;
  AdamStepInfo const info = adam_step(a, pa, g, 0.1);
  CHECK(info.grad_norm == 2.0);
  CHECK(info.clipped_grad_norm == doctest::Approx(1.0));
  CHECK(a.first_moment[1] == doctest::Approx(0.1 * 1.0));

  Vector bad(3);
  bad << 1.0, std::nan(""), 0.0;
  Vector q = before;
  CHECK_THROWS_AS(adam_step(opt, q, bad, 0.1), NumericError);
  CHECK(q == before);

  // f(w) = (w - 3)^2 from w = 0
  OptimizerState s = make_optimizer(1);
  Vector w = Vector::Zero(1);
  for (int i = 0; i < 100; ++i)
    adam_step(s, w, Vector::Constant(1, 2.0 * (w[0] - 3.0)), 0.1);
  CHECK(std::abs(w[0] - 3.0) < 0.1);
}

TEST_CASE("decoupled weight decay shrinks parameters")
{
  AdamConfig cfg;
  cfg.weight_decay = 0.5;
  OptimizerState opt = make_optimizer(1, cfg);
  Vector p = Vector::Constant(1, 2.0);
  adam_step(opt, p, Vector::Zero(1), 0.1);
  CHECK(p[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)));
}

TEST_CASE("accumulate_gradients")
{
  std::vector<Vector> const scalars{Vector::Constant(1, 1), Vector::Constant(1, 2), Vector::Constant(1, 3),
                                    Vector::Constant(1, 4)};
  CHECK(accumulate_gradients(scalars)[0] == 2.5);

  Rng rng(19);
  Vector const g = random_matrix(10, 1, rng);
  std::vector<Vector> const same(4, g);
  CHECK((accumulate_gradients(same) - g).cwiseAbs().maxCoeff() <= 1e-15);

  std::vector<Vector> set;
  for (int i = 0; i < 7; ++i)
    set.push_back(random_matrix(20, 1, rng));
  Vector ref = Vector::Zero(20);
  for (auto const &v : set)
    ref += v;
  ref /= 7.0;
  CHECK((accumulate_gradients(set) - ref).cwiseAbs().maxCoeff() <= 1e-15);

  CHECK_THROWS_AS(accumulate_gradients({}), ConfigError);
}

TEST_CASE("learning rate schedules")
{
  CHECK(step_decay_lr(1e-4, 150, 100) == doctest::Approx(5e-5));
  CHECK(step_decay_lr(1e-4, 99, 100) == doctest::Approx(1e-4));
  CHECK(warmup_lr(1e-4, 500, 1000) == doctest::Approx(0.5e-4));
  CHECK(warmup_lr(1e-4, 5000, 1000) == doctest::Approx(1e-4));
  CHECK(cosine_lr(1e-4, 1000, 1000) == kMinLearningRate);
  CHECK(cosine_lr(1e-4, 500, 1000) == doctest::Approx(0.5e-4));
  CHECK_THROWS_AS(cosine_lr(1e-4, 0, 0), ConfigError);

  LrSchedule s;
  s.warmup = true;
  s.warmup_steps = 1000;
  s.decay = DecayKind::step;
  CHECK(s.at(150, 500, 1.0) == doctest::Approx(0.5 * 5e-5));
  CHECK(s.at(150, 2000, 0.5) == doctest::Approx(0.25e-4));

  LrSchedule c;
  c.warmup = false;
  c.decay = DecayKind::cosine;
  c.total_steps = 100;
  CHECK(c.at(0, 100, 1.0) == kMinLearningRate);
  c.total_steps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  // lr stays positive everywhere
  LrSchedule w;
  w.decay = DecayKind::cosine;
  w.total_steps = 3000;
  for (Index t = 0; t <= 3000; t += 7)
    CHECK(w.at(t / 30, t, 0.001) > 0.0);
}

TEST_CASE("plateau tracker halves after patience")
{
  PlateauTracker p(3, 1e-4);
  CHECK(p.observe(1.0) == 1.0);
  CHECK(p.observe(0.5) == 1.0);
  CHECK(p.observe(0.5) == 1.0);
  CHECK(p.observe(0.49995) == 1.0);
  CHECK(p.observe(0.5) == 0.5);
  CHECK(p.observe(0.1) == 0.5);
}
