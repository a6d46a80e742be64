#pragma once

#include "dartclean/preprocess.hpp"
#include "dartclean/vae_model.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>

namespace dartclean {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta
{
  double cadence_s = 0.0;
  std::string hyperparameters_json = "{}"; // echoed training configuration
};

struct Checkpoint
{
  ModelParams params;
  NormStats stats;
  CheckpointMeta meta;
};

// One JSON document: format version, architecture descriptor, normalization
// statistics, hyperparameters and every parameter array as decimal numbers.
void save_checkpoint(std::ostream &out, ModelParams const &params, NormStats const &stats,
                     CheckpointMeta const &meta = {});
void save_checkpoint(std::filesystem::path const &path, ModelParams const &params, NormStats const &stats,
                     CheckpointMeta const &meta = {});

// Validates version and every array shape; errors name the offending array.
Checkpoint load_checkpoint(std::istream &in);
Checkpoint load_checkpoint(std::filesystem::path const &path);

} // namespace dartclean
