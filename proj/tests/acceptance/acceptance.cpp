#include "dartclean/commands.hpp"
#include "dartclean/config.hpp"
#include "dartclean/detector.hpp"
#include "dartclean/postprocess.hpp"
#include "dartclean/refiner.hpp"
#include "support/benchmarks.hpp"
#include "support/gradient_check.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

using namespace dartclean;
namespace fs = std::filesystem;

namespace {

struct Outcome
{
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4)
{
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point start)
{
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string slurp(fs::path const &p)
{
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Vector gaussian(Index n, double sigma, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, sigma);
  Vector x(n);
  for (auto &v : x)
    v = d(rng);
  return x;
}

Outcome gradient_correctness()
{
  auto const start = std::chrono::steady_clock::now();
  ModelParams p = init_model(Architecture::mirrored(6, {5}, 4), 1);
  nn::Rng rng(2);
  std::normal_distribution<double> d(0.0, 0.3);
  for (auto &b : trainable_blocks(p, true))
    for (Index i = 0; i < b.size(); ++i)
      b.data[i] += d(rng);
  std::normal_distribution<double> unit(0.0, 1.0);
  Matrix x(8, 6);
  for (Index i = 0; i < x.size(); ++i)
    x.data()[i] = unit(rng);
  testing::GradientCheck const gc = testing::check_gradients(p, x, 3, 2500, LossConfig{}, 1e-5);
  double const elapsed = seconds_since(start);
  return {gc.worst <= 1e-4 && gc.worst_by_class.size() == 6 && elapsed < 10.0,
          "worst relative error " + fmt(gc.worst, 3) + " at " + gc.worst_name + " over " + std::to_string(gc.checked) +
              " parameters in " + std::to_string(gc.worst_by_class.size()) + " classes, " + fmt(elapsed, 2) + " s"};
}

Outcome kl_properties()
{
  nn::Rng rng(4);
  std::normal_distribution<double> mu(0.0, 2.0);
  std::uniform_real_distribution<double> logvar(-6.0, 4.0);
  std::uniform_int_distribution<Index> dim(1, 16);
  double min_kl = std::numeric_limits<double>::infinity();
  for (int draw = 0; draw < 10000; ++draw) {
    Index const dd = dim(rng);
    Matrix m(1, dd), lv(1, dd);
    for (Index j = 0; j < dd; ++j) {
      m(0, j) = mu(rng);
      lv(0, j) = logvar(rng);
    }
    min_kl = std::min(min_kl, kl_divergence(m, lv));
  }
  double const zero = kl_divergence(Matrix::Zero(3, 16), Matrix::Zero(3, 16));
  double const half = kl_divergence(Matrix::Ones(1, 1), Matrix::Zero(1, 1));
  return {min_kl >= 0.0 && zero == 0.0 && std::abs(half - 0.5) <= 1e-12,
          "min over 10000 draws " + fmt(min_kl, 3) + ", KL(0,0) = " + fmt(zero) + ", KL(mu=1,sigma=1) = " +
              fmt(half, 17)};
}

Outcome loss_reduction(testing::BenchmarkRun const &run)
{
  auto const &epochs = run.trained.log.epochs;
  double const first = epochs.front().validation.recon;
  double const best = epochs[static_cast<std::size_t>(run.trained.log.best_epoch - 1)].validation.recon;
  double const reduction = 1.0 - best / first;
  return {reduction >= 0.35 && run.train_seconds < 900.0,
          "validation L_recon " + fmt(first) + " -> " + fmt(best) + " (" + fmt(100.0 * reduction, 3) +
              "% reduction) after " + std::to_string(epochs.size()) + " epochs, " + run.trained.log.stop_reason +
              ", " + fmt(run.train_seconds, 3) + " s"};
}

Outcome spike_benchmark(testing::BenchmarkRun const &run)
{
  auto const truth = run.truth.spike_segments();
  DetectionScore const pipeline = spike_f1(run.pipeline.spike_mask, truth);
  Mask const baseline_mask = detect_spikes(run.pipeline.filled.values, DetectConfig{}).mask;
  DetectionScore const baseline = spike_f1(baseline_mask, truth);
  return {truth.size() == 40 && pipeline.f1 >= 0.90 && pipeline.f1 >= baseline.f1 - 0.02,
          "pipeline F1 " + fmt(pipeline.f1) + " (P " + fmt(pipeline.precision) + ", R " + fmt(pipeline.recall) +
              "), rolling-median baseline F1 " + fmt(baseline.f1)};
}

Outcome step_benchmark(testing::BenchmarkRun const &run)
{
  auto const &steps = run.truth.steps;
  bool in_range = steps.size() == 3;
  std::string magnitudes;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    double const normalized = std::abs(steps[k].magnitude_m) / run.normalized.stats.std;
    in_range = in_range && normalized >= 0.3 && normalized <= 1.0;
    if (k > 0)
      in_range = in_range && steps[k].index - steps[k - 1].index > 3000;
    magnitudes += (k ? ", " : "") + fmt(normalized, 3);
  }
  std::vector<Index> const truth = run.truth.step_indices();
  double const recall = step_recall(run.pipeline.validation.retained, truth, 240);
  double const pipeline = testing::rmse(run.pipeline.cleaned, run.truth.clean);
  double const baseline =
      testing::rmse(baseline_rolling_median(run.pipeline.filled.values, DetectConfig{}), run.truth.clean);
  return {in_range && recall == 1.0 && pipeline <= 0.5 * baseline,
          "normalized |delta| [" + magnitudes + "], recall within 240 samples " + fmt(recall) + ", RMSE pipeline " +
              fmt(pipeline) + " m vs baseline " + fmt(baseline) + " m"};
}

Outcome residual_containment(testing::BenchmarkRun const &run)
{
  ResidualStats const r = residual_stats(run.pipeline.filled.values, run.pipeline.cleaned);
  double largest = 0.0;
  for (auto const &s : run.truth.spikes)
    largest = std::max(largest, std::abs(s.amplitude_m));
  double const ratio = r.max_abs / largest;
  return {largest <= 2.5 && r.fraction_within >= 0.95 && std::abs(ratio - 1.0) <= 0.2,
          fmt(100.0 * r.fraction_within) + "% of " + std::to_string(r.nonzero) + " nonzero corrections within 0.5 m, max |residual| " +
              fmt(r.max_abs) + " m vs largest spike " + fmt(largest) + " m"};
}

Outcome gating(testing::BenchmarkRun const &run)
{
  RefineResult const &r = run.pipeline.refinement;
  bool ok = r.states.size() == 11 && r.candidates.size() == 10 && r.masks.size() == 10;
  Index checked = 0;
  for (std::size_t k = 0; ok && k < r.masks.size(); ++k)
    for (Index i = 0; i < r.states[k].size(); ++i) {
      if (!r.masks[k][i]) {
        ok = ok && r.states[k + 1][i] == r.states[k][i];
        ++checked;
      }
    }

  Vector const &x = run.normalized.values;
  Mask const none = Mask::Constant(x.size(), false);
  RefineConfig identity;
  identity.refresh_masks = false;
  RefineResult const still = refine(run.trained.params, x, none, none, identity, DetectConfig{});
  bool const exact = still.reconstruction == x;
  return {ok && exact, std::to_string(checked) + " unmasked sample-iterations bit-identical; empty-mask identity " +
                           (exact ? "exact" : "violated")};
}

Outcome oracle_equivalences()
{
  Index const w = 48;
  Vector const x = gaussian(10000, 1.0, 5);
  RollingStats const s = rolling_median_std(x, w);
  bool rolling = true;
  for (Index i = 0; i < x.size() && rolling; ++i) {
    Index const lo = std::clamp<Index>(i - w / 2, 0, x.size() - w);
    std::vector<double> v(x.data() + lo, x.data() + lo + w);
    std::sort(v.begin(), v.end());
    double const median = 0.5 * (v[w / 2 - 1] + v[w / 2]);
    double sum = 0.0;
    for (Index k = lo; k < lo + w; ++k)
      sum += x[k];
    double const mean = sum / static_cast<double>(w);
    double ss = 0.0;
    for (Index k = lo; k < lo + w; ++k)
      ss += (x[k] - mean) * (x[k] - mean);
    rolling = s.median[i] == median && s.std[i] == std::sqrt(ss / static_cast<double>(w));
  }

  SmoothConfig const sc;
  Vector const k = gaussian_kernel(sc);
  Index const origin = kernel_origin(sc);
  Vector const smoothed = gaussian_smooth(x, sc);
  double smooth_err = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    double acc = 0.0, weight = 0.0;
    for (Index o = -origin; o < sc.window - origin; ++o) {
      Index const src = i - o;
      if (src < 0 || src >= x.size())
        continue;
      acc += k[o + origin] * x[src];
      weight += k[o + origin];
    }
    smooth_err = std::max(smooth_err, std::abs(smoothed[i] - acc / weight));
  }

  WindowBatch b = make_windows(x.head(2000), 48);
  b.windows += gaussian(b.windows.size(), 0.1, 6).reshaped(b.windows.rows(), b.windows.cols());
  Vector const assembled = windows_to_series(b.windows, b.origins, 2000);
  bool overlap = true;
  for (Index i = 0; i < 2000; ++i) {
    double sum = 0.0, count = 0.0;
    for (Index r = 0; r < b.windows.rows(); ++r) {
      Index const o = b.origins[static_cast<std::size_t>(r)];
      if (i >= o && i < o + 48) {
        sum += b.windows(r, i - o);
        count += 1.0;
      }
    }
    overlap = overlap && assembled[i] == sum / count;
  }

  Vector const meters = (gaussian(20000, 0.8, 7).array() + 2584.0).matrix();
  NormalizedSeries const z = zscore_normalize(meters);
  double const round_trip = (denormalize(z.values, z.stats) - meters).cwiseAbs().maxCoeff();

  return {rolling && smooth_err <= 1e-12 && overlap && round_trip <= 1e-9,
          std::string("rolling median/std ") + (rolling ? "exact" : "mismatch") + ", smoothing max error " +
              fmt(smooth_err, 3) + ", overlap-add " + (overlap ? "exact" : "mismatch") + ", round trip " +
              fmt(round_trip, 3) + " m"};
}

bool same_log(TrainLog const &a, TrainLog const &b)
{
  if (a.epochs.size() != b.epochs.size() || a.stop_reason != b.stop_reason || a.best_epoch != b.best_epoch)
    return false;
  auto same_loss = [](LossBreakdown const &x, LossBreakdown const &y) {
    return x.recon == y.recon && x.kl == y.kl && x.temporal == y.temporal && x.mean == y.mean && x.total == y.total;
  };
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    EpochRecord const &x = a.epochs[e];
    EpochRecord const &y = b.epochs[e];
    if (!same_loss(x.train, y.train) || !same_loss(x.validation, y.validation) || x.lr != y.lr ||
        x.grad_norm != y.grad_norm)
      return false;
  }
  return true;
}

Outcome determinism()
{
  fs::path const dir = fs::temp_directory_path() / "dartclean_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  CliConfig const c = parse_config("{}", {"paths.output_dir=" + dir.string(), "synth.spikes.count=40",
                                          "model.encoder_widths=[32]", "model.latent_dim=8", "train.epochs=4",
                                          "verbosity=0"});
  std::ostringstream log;
  cmd_synth(c, log);
  cmd_train(c, log);
  OutputPaths const p = output_paths(c);
  cmd_clean(c, log);
  std::string const cleaned = slurp(p.cleaned), segments = slurp(p.segments), iterations = slurp(p.iterations);
  cmd_clean(c, log);
  bool const outputs = slurp(p.cleaned) == cleaned && slurp(p.segments) == segments &&
                       slurp(p.iterations) == iterations && !cleaned.empty();

  GroundTruth const g = generate(c.synth);
  NormalizedSeries const z = zscore_normalize(fill_gaps(to_raw_series(g)));
  WindowBatch const windows = make_windows(z.values, 48);
  TrainConfig tc = c.train;
  auto run = [&] { return train(init_model(Architecture::mirrored(48, {32}, 8), tc.seed), windows, tc).log; };
  bool const logs = same_log(run(), run());
  fs::remove_all(dir);
  return {outputs && logs, std::string("cmd_clean outputs ") + (outputs ? "byte-identical" : "differ") +
                               ", TrainLog " + (logs ? "reproduced exactly" : "differs")};
}

Outcome early_stopping()
{
  TrainConfig const cfg;
  std::vector<std::string> fired;
  bool ok = true;

  // primary: a flat validation trace stops exactly when patience runs out
  std::vector<double> val(11, 0.5), kl;
  for (int e = 1; e <= 11; ++e)
    kl.push_back(e);
  for (std::size_t t = 1; t <= 10; ++t)
    ok = ok && !early_stop_check(std::span(val).first(t), std::span(kl).first(t), 1.0, cfg).stop;
  StopDecision const primary = early_stop_check(val, kl, 1.0, cfg);
  ok = ok && primary.stop && primary.reason == StopReason::primary && primary.message.rfind("primary", 0) == 0;
  fired.push_back(primary.message);

  // secondary: still improving, but KL has settled and gradients are small
  val.clear();
  kl.clear();
  for (int e = 1; e <= 12; ++e) {
    val.push_back(1.0 - 1e-2 * e);
    kl.push_back(e < 12 ? 3.0 : 3.0 + 5e-6);
  }
  StopDecision const secondary = early_stop_check(val, kl, 0.05, cfg);
  ok = ok && secondary.stop && secondary.reason == StopReason::secondary &&
       secondary.message.rfind("secondary", 0) == 0 && !early_stop_check(val, kl, 0.2, cfg).stop;
  kl.back() = 3.0 + 2e-5;
  ok = ok && !early_stop_check(val, kl, 0.05, cfg).stop;
  fired.push_back(secondary.message);

  // cap: steady improvement and moving KL until epoch 1000
  val.clear();
  kl.clear();
  for (int e = 1; e <= 1000; ++e) {
    val.push_back(10.0 - 1e-3 * e);
    kl.push_back(e);
  }
  ok = ok && !early_stop_check(std::span(val).first(999), std::span(kl).first(999), 1.0, cfg).stop;
  StopDecision const cap = early_stop_check(val, kl, 1.0, cfg);
  ok = ok && cap.stop && cap.reason == StopReason::epoch_limit && cap.message.rfind("epoch limit", 0) == 0;
  fired.push_back(cap.message);

  std::string detail;
  for (auto const &m : fired)
    detail += (detail.empty() ? "" : " | ") + m;
  return {ok, detail};
}

} // namespace

int main()
{
  int failures = 0;
  auto report = [&](int id, char const *name, std::function<Outcome()> const &criterion) {
    Outcome o;
    try {
      o = criterion();
    } catch (std::exception const &e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << id << " " << name << ": " << o.detail << std::endl;
  };

  report(1, "gradient correctness", gradient_correctness);
  report(2, "KL properties", kl_properties);

  testing::BenchmarkRun const spikes = testing::run_benchmark(testing::spike_benchmark());
  report(3, "validation loss reduction", [&] { return loss_reduction(spikes); });
  report(4, "spike benchmark", [&] { return spike_benchmark(spikes); });

  testing::BenchmarkRun const steps = testing::run_benchmark(testing::step_benchmark());
  report(5, "step benchmark", [&] { return step_benchmark(steps); });

  testing::BenchmarkRun const residual = testing::run_benchmark(testing::residual_benchmark());
  report(6, "residual containment", [&] { return residual_containment(residual); });

  report(7, "refinement gating", [&] { return gating(spikes); });
  report(8, "oracle equivalences", oracle_equivalences);
  report(9, "determinism", determinism);
  report(10, "early-stopping semantics", early_stopping);
  return failures == 0 ? 0 : 1;
}
