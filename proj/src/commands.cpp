#include "dartclean/commands.hpp"

#include "dartclean/checkpoint.hpp"
#include "dartclean/error.hpp"
#include "dartclean/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <ostream>

namespace dartclean {

using nlohmann::json;
namespace fs = std::filesystem;

OutputPaths output_paths(CliConfig const &config)
{
  fs::path const dir = config.paths.output_dir.empty() ? fs::path(".") : fs::path(config.paths.output_dir);
  OutputPaths p;
  p.dart = config.paths.input.empty() ? dir / "series.dart" : fs::path(config.paths.input);
  p.truth = config.paths.truth.empty() ? dir / "truth.csv" : fs::path(config.paths.truth);
  p.checkpoint = config.paths.checkpoint.empty() ? dir / "model.json" : fs::path(config.paths.checkpoint);
  p.train_log = dir / "train_log.csv";
  p.cleaned = config.paths.cleaned.empty() ? dir / "cleaned.csv" : fs::path(config.paths.cleaned);
  p.segments = dir / "segments.json";
  p.iterations = dir / "iterations.csv";
  p.metrics = dir / "metrics.json";
  p.latent = dir / "latent.csv";
  return p;
}

namespace {

std::ofstream open_output(fs::path const &path)
{
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_input(fs::path const &path, std::string const &what)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + what + " " + path.string());
  return in;
}

Checkpoint load_model(CliConfig const &config, OutputPaths const &paths, RawSeries const &raw, std::ostream &log)
{
  Checkpoint cp = load_checkpoint(paths.checkpoint);
  double const cadence = median_cadence(raw.timestamps);
  if (cp.meta.cadence_s > 0.0 && cadence > 0.0 && std::abs(cadence - cp.meta.cadence_s) > 1e-9 &&
      config.verbosity > 0)
    log << "warning: input cadence " << cadence << " s differs from the training cadence " << cp.meta.cadence_s
        << " s\n";
  return cp;
}

json metric_block(Vector const &cleaned, Vector const &raw, Vector const &clean, Mask const &spikes,
                  std::vector<Index> const &steps, TruthTable const &truth, Index step_tolerance, double cadence)
{
  DetectionScore const score = spike_f1(spikes, truth.spikes);
  ResidualStats const res = residual_stats(raw, cleaned);
  RateOfChange const roc = rate_of_change(cleaned, cadence);
  return json{{"mse", mean_squared_error(cleaned, clean)},
              {"tc", temporal_consistency(clean, cleaned)},
              {"precision", score.precision},
              {"recall", score.recall},
              {"f1_spike", score.f1},
              {"step_recall", step_recall(steps, truth.steps, step_tolerance)},
              {"residual",
               {{"max_abs", res.max_abs},
                {"bound", res.bound},
                {"nonzero", res.nonzero},
                {"fraction_within", res.fraction_within},
                {"bin_edges", res.bin_edges},
                {"counts", res.counts}}},
              {"rate_of_change", {{"min", roc.min}, {"max", roc.max}, {"max_abs", roc.max_abs}}}};
}

} // namespace

void cmd_synth(CliConfig const &config, std::ostream &log)
{
  OutputPaths const paths = output_paths(config);
  GroundTruth const truth = generate(config.synth);
  {
    auto out = open_output(paths.dart);
    write_dart(out, to_raw_series(truth), "dartclean synthetic series, seed " + std::to_string(config.synth.seed));
  }
  {
    auto out = open_output(paths.truth);
    write_ground_truth_csv(out, truth);
  }
  if (config.verbosity > 0)
    log << "synth: " << truth.contaminated.size() << " samples, " << truth.spikes.size() << " spikes, "
        << truth.steps.size() << " steps, seed " << config.synth.seed << " -> " << paths.dart.string() << '\n';
}

void cmd_train(CliConfig const &config, std::ostream &log)
{
  OutputPaths const paths = output_paths(config);
  RawSeries const raw = read_dart_file(paths.dart);
  FilledSeries const filled = fill_gaps(raw);
  NormalizedSeries const normalized = zscore_normalize(filled);
  WindowBatch const windows = make_windows(normalized.values, config.model.window);

  ModelParams const model = init_model(config.model, config.train.seed);
  TrainResult result;
  try {
    result = train(model, windows, config.train);
  } catch (DivergenceError const &e) {
    auto out = open_output(paths.train_log);
    write_train_log_csv(out, e.log());
    throw;
  }
  {
    auto out = open_output(paths.train_log);
    write_train_log_csv(out, result.log);
  }
  CheckpointMeta meta;
  meta.cadence_s = median_cadence(raw.timestamps);
  meta.hyperparameters_json = json::parse(config_to_json(config)).at("train").dump();
  {
    auto out = open_output(paths.checkpoint);
    save_checkpoint(out, result.params, normalized.stats, meta);
  }
  if (config.verbosity > 0) {
    auto const &first = result.log.epochs.front();
    auto const &best = result.log.epochs[static_cast<std::size_t>(result.log.best_epoch - 1)];
    log << "train: " << result.log.epochs.size() << " epochs, validation recon " << first.validation.recon << " -> "
        << best.validation.recon << " (best epoch " << result.log.best_epoch << "), " << result.log.stop_reason
        << '\n';
  }
}

void cmd_clean(CliConfig const &config, std::ostream &log)
{
  OutputPaths const paths = output_paths(config);
  RawSeries const raw = read_dart_file(paths.dart);
  Checkpoint const cp = load_model(config, paths, raw, log);
  PipelineResult const result = run_pipeline(cp.params, cp.stats, raw, config.pipeline);
  {
    auto out = open_output(paths.cleaned);
    write_cleaned_csv(out, to_cleaned_output(result));
  }
  {
    auto out = open_output(paths.segments);
    write_segment_report(out, result.segments);
  }
  {
    auto out = open_output(paths.iterations);
    write_iteration_log_csv(out, result.refinement.log);
  }
  if (config.verbosity > 0)
    log << "clean: " << result.cleaned.size() << " samples, " << result.spike_mask.count() << " spike samples, "
        << result.validation.retained.size() + result.validation.unvalidated.size() << " steps -> "
        << paths.cleaned.string() << '\n';
}

void cmd_eval(CliConfig const &config, std::ostream &log)
{
  OutputPaths const paths = output_paths(config);
  if (!fs::exists(paths.truth))
    throw DataError("ground truth " + paths.truth.string() + " does not exist");
  TruthTable truth;
  {
    auto in = open_input(paths.truth, "ground truth");
    truth = read_ground_truth_csv(in);
  }
  CleanedOutput cleaned;
  {
    auto in = open_input(paths.cleaned, "cleaned series");
    cleaned = read_cleaned_csv(in);
  }
  Index const n = cleaned.cleaned.size();
  if (truth.clean.size() != n)
    throw DataError("ground truth and cleaned series differ in length");
  double const cadence = median_cadence(cleaned.timestamps);
  DetectConfig const &detect = config.pipeline.detect;
  Index const tolerance = detect.step_window / 2;

  std::vector<Index> steps;
  for (Index i = 0; i < n; ++i)
    if (cleaned.step[i])
      steps.push_back(i);

  SpikeDetection const baseline_spikes = detect_spikes(cleaned.raw, detect);
  Vector const baseline = baseline_rolling_median(cleaned.raw, detect);

  json doc{{"samples", n},
           {"cadence_s", cadence},
           {"pipeline",
            metric_block(cleaned.cleaned, cleaned.raw, truth.clean, cleaned.spike, steps, truth, tolerance, cadence)},
           {"baseline", metric_block(baseline, cleaned.raw, truth.clean, baseline_spikes.mask, {}, truth, tolerance,
                                     cadence)}};
  {
    auto out = open_output(paths.metrics);
    out << doc.dump(2) << '\n';
  }
  if (config.verbosity > 0)
    log << "eval: pipeline F1 " << doc["pipeline"]["f1_spike"].get<double>() << ", baseline F1 "
        << doc["baseline"]["f1_spike"].get<double>() << " -> " << paths.metrics.string() << '\n';
}

void cmd_latent(CliConfig const &config, std::ostream &log)
{
  OutputPaths const paths = output_paths(config);
  RawSeries const raw = read_dart_file(paths.dart);
  Checkpoint const cp = load_model(config, paths, raw, log);
  PipelineResult const result = run_pipeline(cp.params, cp.stats, raw, config.pipeline);
  WindowBatch const windows = make_windows(result.normalized.values, cp.params.arch.window);
  if (windows.windows.rows() < 3)
    throw DataError("latent projection needs at least 3 windows");
  LatentProjection const proj = project_latent(encode_means(cp.params, windows.windows));
  if (proj.fallback && config.verbosity > 0)
    log << "warning: latent covariance is rank deficient, projecting onto the first two axes\n";

  Mask const anomalous = result.spike_mask || result.validation.mask;
  auto out = open_output(paths.latent);
  out << "window_origin,pc1,pc2,is_anomalous\n";
  char buf[96];
  for (Index r = 0; r < windows.windows.rows(); ++r) {
    Index const o = windows.origins[static_cast<std::size_t>(r)];
    bool const flagged = anomalous.segment(o, windows.width).any();
    std::snprintf(buf, sizeof buf, "%.9g,%.9g", proj.coordinates(r, 0), proj.coordinates(r, 1));
    out << o << ',' << buf << ',' << (flagged ? 1 : 0) << '\n';
  }
  if (config.verbosity > 0)
    log << "latent: " << windows.windows.rows() << " windows -> " << paths.latent.string() << '\n';
}

int exit_code_for(std::exception const &error)
{
  if (dynamic_cast<ConfigError const *>(&error) != nullptr)
    return 2;
  if (dynamic_cast<NumericError const *>(&error) != nullptr)
    return 4;
  if (dynamic_cast<Error const *>(&error) != nullptr)
    return 3;
  if (dynamic_cast<fs::filesystem_error const *>(&error) != nullptr)
    return 3;
  return 1;
}

} // namespace dartclean
