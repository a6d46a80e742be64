#include "dartclean/config.hpp"

#include "dartclean/error.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace dartclean {

using nlohmann::json;

namespace {

std::string decay_name(nn::DecayKind k)
{
  switch (k) {
  case nn::DecayKind::none:
    return "none";
  case nn::DecayKind::step:
    return "step";
  case nn::DecayKind::cosine:
    return "cosine";
  }
  return "step";
}

nn::DecayKind decay_from(std::string const &s)
{
  if (s == "none")
    return nn::DecayKind::none;
  if (s == "step")
    return nn::DecayKind::step;
  if (s == "cosine")
    return nn::DecayKind::cosine;
  throw ConfigError("train.decay must be one of none, step, cosine");
}

std::string evidence_name(SpikeEvidence e)
{
  switch (e) {
  case SpikeEvidence::statistical:
    return "statistical";
  case SpikeEvidence::reconstruction:
    return "reconstruction";
  case SpikeEvidence::confirmed:
    return "confirmed";
  case SpikeEvidence::hybrid:
    return "hybrid";
  }
  return "confirmed";
}

SpikeEvidence evidence_from(std::string const &s)
{
  if (s == "statistical")
    return SpikeEvidence::statistical;
  if (s == "reconstruction")
    return SpikeEvidence::reconstruction;
  if (s == "confirmed")
    return SpikeEvidence::confirmed;
  if (s == "hybrid")
    return SpikeEvidence::hybrid;
  throw ConfigError("detect.spike_evidence must be one of statistical, reconstruction, confirmed, hybrid");
}

std::string drift_name(DriftKind k)
{
  switch (k) {
  case DriftKind::none:
    return "none";
  case DriftKind::linear:
    return "linear";
  case DriftKind::exponential:
    return "exponential";
  }
  return "none";
}

DriftKind drift_from(std::string const &s)
{
  if (s == "none")
    return DriftKind::none;
  if (s == "linear")
    return DriftKind::linear;
  if (s == "exponential")
    return DriftKind::exponential;
  throw ConfigError("synth.drift.kind must be one of none, linear, exponential");
}

json to_tree(CliConfig const &c)
{
  TrainConfig const &t = c.train;
  DetectConfig const &d = c.pipeline.detect;
  RefineConfig const &r = c.pipeline.refine;
  SynthSpec const &s = c.synth;
  json tides = json::array();
  for (auto const &tc : s.tides)
    tides.push_back({{"amplitude_m", tc.amplitude_m}, {"period_s", tc.period_s}, {"phase_rad", tc.phase_rad}});
  return json{
      {"seed", c.seed},
      {"verbosity", c.verbosity},
      {"threads", c.threads},
      {"paths",
       {{"input", c.paths.input},
        {"output_dir", c.paths.output_dir},
        {"checkpoint", c.paths.checkpoint},
        {"truth", c.paths.truth},
        {"cleaned", c.paths.cleaned}}},
      {"model",
       {{"window", c.model.window},
        {"encoder_widths", c.model.encoder_widths},
        {"latent_dim", c.model.latent_dim},
        {"decoder_widths", c.model.decoder_widths}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"base_lr", t.base_lr},
        {"decay", decay_name(t.decay)},
        {"decay_steps", t.decay_steps},
        {"warmup", t.warmup},
        {"warmup_steps", t.warmup_steps},
        {"plateau", t.plateau},
        {"plateau_patience", t.plateau_patience},
        {"patience", t.patience},
        {"min_delta", t.min_delta},
        {"t_anneal", t.t_anneal},
        {"clip_norm", t.clip_norm},
        {"weight_decay", t.weight_decay},
        {"lambda_temporal", t.lambda_temporal},
        {"lambda_mean", t.lambda_mean},
        {"validation_fraction", t.validation_fraction},
        {"accumulation_steps", t.accumulation_steps},
        {"train_global_skip", t.train_global_skip},
        {"kl_stable_threshold", t.kl_stable_threshold},
        {"grad_norm_threshold", t.grad_norm_threshold}}},
      {"detect",
       {{"spike_window", d.spike_window},
        {"step_window", d.step_window},
        {"spike_threshold", d.spike_threshold},
        {"step_threshold", d.step_threshold},
        {"kappa", d.kappa},
        {"hybrid_alpha", d.hybrid_alpha},
        {"merge_gap", d.merge_gap},
        {"step_trend_compensation", d.step_trend_compensation},
        {"spike_evidence", evidence_name(d.spike_evidence)}}},
      {"refine",
       {{"iterations", r.iterations},
        {"blend_alpha", r.blend_alpha},
        {"threshold_decay", r.threshold_decay},
        {"tolerance", r.tolerance},
        {"early_exit", r.early_exit},
        {"refresh_masks", r.refresh_masks}}},
      {"smooth",
       {{"enabled", c.pipeline.smooth_output},
        {"window", c.pipeline.smooth.window},
        {"sigma", c.pipeline.smooth.sigma}}},
      {"postprocess", {{"validate_steps", c.pipeline.validate_steps}, {"align_steps", c.pipeline.align_steps}}},
      {"synth",
       {{"length", s.length},
        {"cadence_s", s.cadence_s},
        {"start_epoch", s.start_epoch},
        {"mean_level_m", s.mean_level_m},
        {"tides", tides},
        {"noise_sigma_m", s.noise_sigma_m},
        {"spikes",
         {{"count", s.spikes.count},
          {"amplitude_min_sigma", s.spikes.amplitude_min_sigma},
          {"amplitude_max_sigma", s.spikes.amplitude_max_sigma},
          {"width_min", s.spikes.width_min},
          {"width_max", s.spikes.width_max},
          {"both_signs", s.spikes.both_signs},
          {"amplitude_max_m", s.spikes.amplitude_max_m},
          {"min_separation", s.spikes.min_separation}}},
        {"steps",
         {{"count", s.steps.count},
          {"magnitude_min_m", s.steps.magnitude_min_m},
          {"magnitude_max_m", s.steps.magnitude_max_m},
          {"min_separation", s.steps.min_separation},
          {"edge_margin", s.steps.edge_margin}}},
        {"drift",
         {{"kind", drift_name(s.drift.kind)},
          {"slope_m_per_day", s.drift.slope_m_per_day},
          {"amplitude_m", s.drift.amplitude_m},
          {"rate_per_day", s.drift.rate_per_day}}},
        {"gaps", {{"count", s.gaps.count}, {"length_min", s.gaps.length_min}, {"length_max", s.gaps.length_max}}}}}};
}

// Reads tree[path...] into `value`, naming the key on a type mismatch.
template <typename T> void read(json const &tree, std::string const &section, std::string const &key, T &value)
{
  json const &node = section.empty() ? tree.at(key) : tree.at(section).at(key);
  try {
    value = node.get<T>();
  } catch (json::exception const &) {
    throw ConfigError("config key '" + (section.empty() ? key : section + "." + key) + "' has the wrong type");
  }
}

CliConfig from_tree(json const &j)
{
  CliConfig c;
  read(j, "", "seed", c.seed);
  read(j, "", "verbosity", c.verbosity);
  read(j, "", "threads", c.threads);

  read(j, "paths", "input", c.paths.input);
  read(j, "paths", "output_dir", c.paths.output_dir);
  read(j, "paths", "checkpoint", c.paths.checkpoint);
  read(j, "paths", "truth", c.paths.truth);
  read(j, "paths", "cleaned", c.paths.cleaned);

  read(j, "model", "window", c.model.window);
  read(j, "model", "encoder_widths", c.model.encoder_widths);
  read(j, "model", "latent_dim", c.model.latent_dim);
  read(j, "model", "decoder_widths", c.model.decoder_widths);

  TrainConfig &t = c.train;
  std::string decay;
  read(j, "train", "epochs", t.epochs);
  read(j, "train", "batch_size", t.batch_size);
  read(j, "train", "base_lr", t.base_lr);
  read(j, "train", "decay", decay);
  t.decay = decay_from(decay);
  read(j, "train", "decay_steps", t.decay_steps);
  read(j, "train", "warmup", t.warmup);
  read(j, "train", "warmup_steps", t.warmup_steps);
  read(j, "train", "plateau", t.plateau);
  read(j, "train", "plateau_patience", t.plateau_patience);
  read(j, "train", "patience", t.patience);
  read(j, "train", "min_delta", t.min_delta);
  read(j, "train", "t_anneal", t.t_anneal);
  read(j, "train", "clip_norm", t.clip_norm);
  read(j, "train", "weight_decay", t.weight_decay);
  read(j, "train", "lambda_temporal", t.lambda_temporal);
  read(j, "train", "lambda_mean", t.lambda_mean);
  read(j, "train", "validation_fraction", t.validation_fraction);
  read(j, "train", "accumulation_steps", t.accumulation_steps);
  read(j, "train", "train_global_skip", t.train_global_skip);
  read(j, "train", "kl_stable_threshold", t.kl_stable_threshold);
  read(j, "train", "grad_norm_threshold", t.grad_norm_threshold);

  DetectConfig &d = c.pipeline.detect;
  std::string evidence;
  read(j, "detect", "spike_window", d.spike_window);
  read(j, "detect", "step_window", d.step_window);
  read(j, "detect", "spike_threshold", d.spike_threshold);
  read(j, "detect", "step_threshold", d.step_threshold);
  read(j, "detect", "kappa", d.kappa);
  read(j, "detect", "hybrid_alpha", d.hybrid_alpha);
  read(j, "detect", "merge_gap", d.merge_gap);
  read(j, "detect", "step_trend_compensation", d.step_trend_compensation);
  read(j, "detect", "spike_evidence", evidence);
  d.spike_evidence = evidence_from(evidence);

  RefineConfig &r = c.pipeline.refine;
  read(j, "refine", "iterations", r.iterations);
  read(j, "refine", "blend_alpha", r.blend_alpha);
  read(j, "refine", "threshold_decay", r.threshold_decay);
  read(j, "refine", "tolerance", r.tolerance);
  read(j, "refine", "early_exit", r.early_exit);
  read(j, "refine", "refresh_masks", r.refresh_masks);

  read(j, "smooth", "enabled", c.pipeline.smooth_output);
  read(j, "smooth", "window", c.pipeline.smooth.window);
  read(j, "smooth", "sigma", c.pipeline.smooth.sigma);
  read(j, "postprocess", "validate_steps", c.pipeline.validate_steps);
  read(j, "postprocess", "align_steps", c.pipeline.align_steps);

  json const &s = j.at("synth");
  SynthSpec &sp = c.synth;
  read(s, "", "length", sp.length);
  read(s, "", "cadence_s", sp.cadence_s);
  read(s, "", "start_epoch", sp.start_epoch);
  read(s, "", "mean_level_m", sp.mean_level_m);
  read(s, "", "noise_sigma_m", sp.noise_sigma_m);
  if (!s.at("tides").is_array())
    throw ConfigError("config key 'synth.tides' must be an array");
  sp.tides.clear();
  for (auto const &tc : s.at("tides")) {
    TidalComponent comp;
    try {
      comp.amplitude_m = tc.at("amplitude_m").get<double>();
      comp.period_s = tc.at("period_s").get<double>();
      comp.phase_rad = tc.value("phase_rad", 0.0);
    } catch (json::exception const &) {
      throw ConfigError("config key 'synth.tides' entries need numeric amplitude_m and period_s");
    }
    sp.tides.push_back(comp);
  }
  read(s, "spikes", "count", sp.spikes.count);
  read(s, "spikes", "amplitude_min_sigma", sp.spikes.amplitude_min_sigma);
  read(s, "spikes", "amplitude_max_sigma", sp.spikes.amplitude_max_sigma);
  read(s, "spikes", "width_min", sp.spikes.width_min);
  read(s, "spikes", "width_max", sp.spikes.width_max);
  read(s, "spikes", "both_signs", sp.spikes.both_signs);
  read(s, "spikes", "amplitude_max_m", sp.spikes.amplitude_max_m);
  read(s, "spikes", "min_separation", sp.spikes.min_separation);
  read(s, "steps", "count", sp.steps.count);
  read(s, "steps", "magnitude_min_m", sp.steps.magnitude_min_m);
  read(s, "steps", "magnitude_max_m", sp.steps.magnitude_max_m);
  read(s, "steps", "min_separation", sp.steps.min_separation);
  read(s, "steps", "edge_margin", sp.steps.edge_margin);
  std::string drift;
  read(s, "drift", "kind", drift);
  sp.drift.kind = drift_from(drift);
  read(s, "drift", "slope_m_per_day", sp.drift.slope_m_per_day);
  read(s, "drift", "amplitude_m", sp.drift.amplitude_m);
  read(s, "drift", "rate_per_day", sp.drift.rate_per_day);
  read(s, "gaps", "count", sp.gaps.count);
  read(s, "gaps", "length_min", sp.gaps.length_min);
  read(s, "gaps", "length_max", sp.gaps.length_max);
  return c;
}

// Every key of `user` must exist in `schema`; objects are checked recursively
// and array elements of objects against the first schema element.
void reject_unknown(json const &user, json const &schema, std::string const &path)
{
  if (user.is_object()) {
    if (!schema.is_object())
      throw ConfigError("config key '" + path + "' must not be an object");
    for (auto const &[key, value] : user.items()) {
      std::string const child = path.empty() ? key : path + "." + key;
      if (!schema.contains(key))
        throw ConfigError("unknown config key '" + child + "'");
      reject_unknown(value, schema.at(key), child);
    }
  } else if (user.is_array() && schema.is_array() && !schema.empty() && schema.front().is_object()) {
    for (auto const &element : user)
      reject_unknown(element, schema.front(), path + "[]");
  } else if (user.is_null()) {
    throw ConfigError("config key '" + path + "' must not be null");
  }
}

void apply_override(json &user, std::string const &assignment)
{
  auto const eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  std::string const key = assignment.substr(0, eq);
  std::string const text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (json::exception const &) {
    value = text;
  }
  json *node = &user;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.'))
    path.push_back(part);
  for (std::size_t k = 0; k + 1 < path.size(); ++k) {
    if (!node->contains(path[k]) || !(*node)[path[k]].is_object())
      (*node)[path[k]] = json::object();
    node = &(*node)[path[k]];
  }
  (*node)[path.back()] = std::move(value);
}

} // namespace

std::string default_config_json() { return to_tree(CliConfig{}).dump(2); }

std::string config_to_json(CliConfig const &config) { return to_tree(config).dump(2); }

CliConfig parse_config(std::string_view json_text, std::vector<std::string> const &overrides)
{
  json user;
  try {
    user = json_text.empty() ? json::object() : json::parse(json_text);
  } catch (json::exception const &e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!user.is_object())
    throw ConfigError("config root must be an object");
  for (auto const &o : overrides)
    apply_override(user, o);

  json const schema = to_tree(CliConfig{});
  reject_unknown(user, schema, "");

  bool const mirror_decoder = user.contains("model") && user["model"].contains("encoder_widths") &&
                              !user["model"].contains("decoder_widths");
  json merged = schema;
  merged.merge_patch(user);
  CliConfig c = from_tree(merged);
  if (mirror_decoder)
    c.model.decoder_widths.assign(c.model.encoder_widths.rbegin(), c.model.encoder_widths.rend());

  c.model.validate();
  c.train.validate();
  c.pipeline.detect.validate();
  c.pipeline.refine.validate();
  c.pipeline.smooth.validate();
  if (c.threads < 0)
    throw ConfigError("threads must be non-negative");
  propagate_seed(c);
  c.synth.validate();
  return c;
}

CliConfig load_config(std::filesystem::path const &path, std::vector<std::string> const &overrides)
{
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), overrides);
}

void propagate_seed(CliConfig &config)
{
  config.train.seed = config.seed;
  config.synth.seed = config.seed;
}

} // namespace dartclean
