#pragma once

#include "dartclean/pipeline.hpp"
#include "dartclean/synth_eval.hpp"
#include "dartclean/trainer.hpp"
#include "dartclean/vae_model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dartclean {

struct PathConfig
{
  std::string input;      // DART text file
  std::string output_dir = ".";
  std::string checkpoint; // model checkpoint JSON
  std::string truth;      // ground-truth CSV
  std::string cleaned;    // cleaned CSV read by eval; defaults to <output_dir>/cleaned.csv
};

struct CliConfig
{
  std::uint64_t seed = 7;
  int verbosity = 1;
  int threads = 0;
  PathConfig paths;
  Architecture model;
  TrainConfig train;
  PipelineConfig pipeline;
  SynthSpec synth;
};

// Full configuration tree with every default filled in.
std::string default_config_json();

// Parses a JSON document over the defaults. Unknown keys and ill-typed values
// throw ConfigError. `overrides` are `dotted.key=value` strings applied after
// the document; values parse as JSON and fall back to plain strings.
CliConfig parse_config(std::string_view json_text, std::vector<std::string> const &overrides = {});
CliConfig load_config(std::filesystem::path const &path, std::vector<std::string> const &overrides = {});

// Canonical JSON rendering of a configuration.
std::string config_to_json(CliConfig const &config);

// Copies the top-level seed into the train and synth sections.
void propagate_seed(CliConfig &config);

} // namespace dartclean
