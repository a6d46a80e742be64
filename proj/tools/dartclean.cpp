// dartclean: synth | train | clean | eval | latent
#include "dartclean/commands.hpp"
#include "dartclean/error.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

int main(int argc, char **argv)
{
  CLI::App app{"Clean spikes and level shifts from bottom-pressure time series"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::vector<std::string> overrides;

  std::vector<std::pair<std::string, void (*)(dartclean::CliConfig const &, std::ostream &)>> const commands{
      {"synth", dartclean::cmd_synth},   {"train", dartclean::cmd_train},   {"clean", dartclean::cmd_clean},
      {"eval", dartclean::cmd_eval},     {"latent", dartclean::cmd_latent},
  };
  char const *help[] = {
      "Generate a synthetic DART series and its ground truth",
      "Train the autoencoder and write a checkpoint",
      "Detect, refine and write the cleaned series",
      "Score a cleaned series against ground truth",
      "Project latent means to two dimensions",
  };
  std::vector<CLI::App *> subs;
  for (std::size_t k = 0; k < commands.size(); ++k) {
    CLI::App *sub = app.add_subcommand(commands[k].first, help[k]);
    sub->add_option("--config", config_path, "JSON configuration file")->required();
    sub->add_option("--seed", seed, "Override the configured seed");
    sub->add_option("--threads", threads, "Worker cap (falls back to DARTCLEAN_THREADS)");
    sub->add_option("--set", overrides, "Override a configuration key: dotted.key=value");
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (CLI::ParseError const &e) {
    int const code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    dartclean::CliConfig config = dartclean::load_config(config_path, overrides);
    if (seed) {
      config.seed = *seed;
      dartclean::propagate_seed(config);
    }
    int worker_cap = config.threads;
    if (threads) {
      worker_cap = *threads;
    } else if (char const *env = std::getenv("DARTCLEAN_THREADS")) {
      try {
        worker_cap = std::stoi(env);
      } catch (std::exception const &) {
        throw dartclean::ConfigError("DARTCLEAN_THREADS is not an integer");
      }
    }
    if (worker_cap < 0)
      throw dartclean::ConfigError("thread count must be non-negative");
    if (worker_cap > 0)
      Eigen::setNbThreads(worker_cap);

    for (std::size_t k = 0; k < commands.size(); ++k)
      if (subs[k]->parsed())
        commands[k].second(config, std::cerr);
  } catch (std::exception const &e) {
    std::cerr << "error: " << e.what() << '\n';
    return dartclean::exit_code_for(e);
  }
  return 0;
}
