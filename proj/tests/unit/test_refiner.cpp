#include "dartclean/error.hpp"
#include "dartclean/preprocess.hpp"
#include "dartclean/refiner.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace dartclean;

namespace {

Vector gaussian(Index n, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Vector x(n);
  for (auto &v : x)
    v = d(rng);
  return x;
}

Mask random_mask(Index n, double p, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(p);
  Mask m(n);
  for (Index i = 0; i < n; ++i)
    m[i] = coin(rng);
  return m;
}

ModelParams small_model(std::uint64_t seed) { return init_model(Architecture::mirrored(48, {16}, 4), seed); }

} // namespace

TEST_CASE("windows_to_series coverage weights")
{
  Vector const x = gaussian(49, 1);
  WindowBatch b = make_windows(x, 48);
  REQUIRE(b.windows.rows() == 2);
  b.windows.row(0).array() += 1.0;
  b.windows.row(1).array() += 3.0;
  Vector const y = windows_to_series(b.windows, b.origins, 49);
  CHECK(y[0] == b.windows(0, 0)); // covered once
  CHECK(y[24] == 0.5 * (b.windows(0, 24) + b.windows(1, 23)));
  CHECK(y[48] == b.windows(1, 47));
}

TEST_CASE("windows_to_series equals naive accumulation")
{
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 0.3);
  for (Index n : {48, 60, 311}) {
    WindowBatch b = make_windows(gaussian(n, static_cast<std::uint64_t>(n)), 48);
    for (Index r = 0; r < b.windows.rows(); ++r)
      for (Index j = 0; j < 48; ++j)
        b.windows(r, j) += d(rng);
    Vector const got = windows_to_series(b.windows, b.origins, n);
    for (Index i = 0; i < n; ++i) {
      double sum = 0.0;
      double count = 0.0;
      for (Index r = 0; r < b.windows.rows(); ++r) {
        Index const o = b.origins[static_cast<std::size_t>(r)];
        if (i >= o && i < o + 48) {
          sum += b.windows(r, i - o);
          count += 1.0;
        }
      }
      REQUIRE(got[i] == sum / count);
    }
  }

  Matrix const one = Matrix::Zero(1, 48);
  std::vector<Index> const origin{0};
  CHECK_THROWS_AS(windows_to_series(one, origin, 49), DataError);
  std::vector<Index> const late{2};
  CHECK_THROWS_AS(windows_to_series(one, late, 49), ShapeError);
}

TEST_CASE("reconstruct_series of a fresh model is finite and full length")
{
  Vector const x = gaussian(200, 2);
  Vector const r = reconstruct_series(small_model(3), x);
  CHECK(r.size() == 200);
  CHECK(r.allFinite());
}

TEST_CASE("latent blend")
{
  Matrix const z = Matrix::Constant(2, 3, 2.0);
  Matrix const prev = Matrix::Zero(2, 3);
  CHECK(blend_latents(z, prev, 0.5) == Matrix::Constant(2, 3, 1.0));
  CHECK(blend_latents(z, prev, 1.0) == z);
  CHECK(blend_latents(z, prev, 0.0) == prev);
  CHECK_THROWS_AS(blend_latents(z, Matrix::Zero(3, 3), 0.5), ShapeError);
}

TEST_CASE("empty masks leave the series untouched")
{
  ModelParams const model = small_model(4);
  Vector const x = gaussian(300, 5);
  Mask const none = Mask::Constant(300, false);
  RefineConfig cfg;
  cfg.refresh_masks = false;
  for (Index n : {1, 3, 10}) {
    cfg.iterations = n;
    RefineResult const r = refine(model, x, none, none, cfg, DetectConfig{});
    CHECK(r.reconstruction == x);
    REQUIRE(static_cast<Index>(r.log.size()) == n);
    for (auto const &rec : r.log) {
      CHECK(rec.masked_count == 0);
      CHECK(rec.max_correction == 0.0);
      if (rec.iteration >= 2)
        CHECK(rec.mean_re == 0.0);
    }
  }
}

TEST_CASE("gating: unmasked samples are bit-identical across iterations")
{
  ModelParams const model = small_model(6);
  RefineConfig const cfg;
  DetectConfig const detect;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Vector x = gaussian(600, 10 + seed);
    x[100] += 9.0;
    x[420] -= 7.0;
    Mask const spikes = random_mask(600, 0.02, 20 + seed);
    Mask const steps = random_mask(600, 0.005, 30 + seed);
    RefineResult const r = refine(model, x, spikes, steps, cfg, detect, true);
    REQUIRE(r.states.size() == 11);
    REQUIRE(r.candidates.size() == 10);
    REQUIRE(r.masks.size() == 10);
    CHECK(r.states[0] == x);
    for (std::size_t k = 0; k < r.masks.size(); ++k) {
      Mask const &m = r.masks[k];
      CHECK((m || !(spikes || steps)).all()); // supplied masks are always included
      for (Index i = 0; i < x.size(); ++i)
        REQUIRE(r.states[k + 1][i] == (m[i] ? r.candidates[k][i] : r.states[k][i]));
    }
    CHECK(r.reconstruction == r.states.back());

    std::vector<IterationRecord> const replay = iteration_log(r.states, r.candidates, r.masks);
    REQUIRE(replay.size() == r.log.size());
    for (std::size_t k = 0; k < replay.size(); ++k) {
      CHECK(replay[k].iteration == r.log[k].iteration);
      CHECK(replay[k].mean_re == r.log[k].mean_re);
      CHECK(replay[k].masked_count == r.log[k].masked_count);
      CHECK(replay[k].max_correction == r.log[k].max_correction);
    }
    for (std::size_t k = 1; k < r.log.size(); ++k) {
      CHECK(r.log[k].spike_threshold <= r.log[k - 1].spike_threshold);
      CHECK(r.log[k].step_threshold <= r.log[k - 1].step_threshold);
      CHECK(r.log[k].re_threshold <= r.log[k - 1].re_threshold);
    }
  }
}

TEST_CASE("first iteration residual is the single-pass reconstruction error")
{
  ModelParams const model = small_model(8);
  Vector const x = gaussian(250, 9);
  Mask const none = Mask::Constant(250, false);
  RefineConfig cfg;
  cfg.iterations = 1;
  cfg.refresh_masks = false;
  RefineResult const r = refine(model, x, none, none, cfg, DetectConfig{}, true);
  REQUIRE(r.log.size() == 1);
  CHECK(r.log[0].mean_re == doctest::Approx((reconstruct_series(model, x) - x).cwiseAbs().mean()).epsilon(1e-12));
  CHECK(r.candidates[0] == reconstruct_series(model, x));
}

TEST_CASE("refinement is deterministic")
{
  ModelParams const model = small_model(11);
  Vector x = gaussian(500, 12);
  x[250] += 10.0;
  Mask const spikes = random_mask(500, 0.01, 13);
  Mask const steps = Mask::Constant(500, false);
  RefineResult const a = refine(model, x, spikes, steps, RefineConfig{}, DetectConfig{});
  RefineResult const b = refine(model, x, spikes, steps, RefineConfig{}, DetectConfig{});
  CHECK(a.reconstruction == b.reconstruction);
  CHECK(a.latent == b.latent);
  CHECK((a.spike_mask == b.spike_mask).all());
}

TEST_CASE("early exit stops once the reconstruction settles")
{
  ModelParams const model = small_model(14);
  Vector const x = gaussian(300, 15);
  Mask const none = Mask::Constant(300, false);
  RefineConfig cfg;
  cfg.refresh_masks = false;
  cfg.early_exit = true;
  RefineResult const r = refine(model, x, none, none, cfg, DetectConfig{});
  CHECK(r.log.size() == 2); // RE^(2) is exactly zero with nothing masked
}

TEST_CASE("refinement errors")
{
  ModelParams const model = small_model(16);
  Vector const x = gaussian(100, 17);
  Mask const none = Mask::Constant(100, false);
  RefineConfig bad;
  bad.iterations = 0;
  CHECK_THROWS_AS(refine(model, x, none, none, bad, DetectConfig{}), ConfigError);
  bad = RefineConfig{};
  bad.threshold_decay = 0.0;
  CHECK_THROWS_AS(refine(model, x, none, none, bad, DetectConfig{}), ConfigError);
  CHECK_THROWS_AS(refine(model, x, none.head(99), none, RefineConfig{}, DetectConfig{}), ShapeError);
  CHECK_THROWS_AS(refine(model, x.head(40), none.head(40), none.head(40), RefineConfig{}, DetectConfig{}),
                  DataError);

  ModelParams broken = model;
  broken.output.bias.setConstant(std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(refine(broken, x, none, none, RefineConfig{}, DetectConfig{}), NumericError);

  std::vector<Vector> const states{x};
  std::vector<Vector> const candidates;
  std::vector<Mask> const masks;
  CHECK_THROWS_AS(iteration_log(states, candidates, masks), StateError);
}

TEST_CASE("iteration log csv")
{
  IterationRecord r;
  r.iteration = 1;
  r.mean_re = 0.25;
  r.masked_count = 3;
  r.max_correction = 0.5;
  r.spike_threshold = 3.0;
  r.step_threshold = 0.05;
  r.re_threshold = 0.125;
  std::ostringstream out;
  write_iteration_log_csv(out, {r});
  CHECK(out.str() == "iteration,mean_re,masked_count,max_correction,spike_threshold,step_threshold,re_threshold\n"
                     "1,0.25,3,0.5,3,0.05,0.125\n");
}
