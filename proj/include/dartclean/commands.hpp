#pragma once

#include "dartclean/config.hpp"

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <string>

namespace dartclean {

// Output locations derived from the configuration.
struct OutputPaths
{
  std::filesystem::path dart;       // synth: contaminated series in DART text
  std::filesystem::path truth;      // synth: ground-truth CSV
  std::filesystem::path checkpoint; // train
  std::filesystem::path train_log;  // train
  std::filesystem::path cleaned;    // clean
  std::filesystem::path segments;   // clean
  std::filesystem::path iterations; // clean
  std::filesystem::path metrics;    // eval
  std::filesystem::path latent;     // latent
};

OutputPaths output_paths(CliConfig const &config);

// Each command reads and writes the files named by the configuration and
// reports progress on `log` according to the verbosity.
void cmd_synth(CliConfig const &config, std::ostream &log);
void cmd_train(CliConfig const &config, std::ostream &log);
void cmd_clean(CliConfig const &config, std::ostream &log);
void cmd_eval(CliConfig const &config, std::ostream &log);
void cmd_latent(CliConfig const &config, std::ostream &log);

// 2 configuration, 3 data, 4 numeric or divergence, 1 anything else.
int exit_code_for(std::exception const &error);

} // namespace dartclean
