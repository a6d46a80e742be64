#include "dartclean/checkpoint.hpp"

#include "dartclean/error.hpp"

#include <json.hpp>

#include <fstream>
#include <istream>
#include <ostream>

namespace dartclean {

using nlohmann::json;

namespace {

json architecture_json(Architecture const &arch)
{
  return json{{"window", arch.window},
              {"encoder_widths", arch.encoder_widths},
              {"latent_dim", arch.latent_dim},
              {"decoder_widths", arch.decoder_widths}};
}

Architecture architecture_from(json const &j)
{
  Architecture arch;
  try {
    arch.window = j.at("window").get<Index>();
    arch.encoder_widths = j.at("encoder_widths").get<std::vector<Index>>();
    arch.latent_dim = j.at("latent_dim").get<Index>();
    arch.decoder_widths = j.at("decoder_widths").get<std::vector<Index>>();
  } catch (json::exception const &e) {
    throw DataError(std::string("checkpoint architecture: ") + e.what());
  }
  try {
    arch.validate();
  } catch (ConfigError const &e) {
    throw ShapeError(std::string("checkpoint architecture: ") + e.what());
  }
  return arch;
}

} // namespace

void save_checkpoint(std::ostream &out, ModelParams const &params, NormStats const &stats, CheckpointMeta const &meta)
{
  validate_shapes(params);

  json hyper;
  try {
    hyper = json::parse(meta.hyperparameters_json);
  } catch (json::exception const &e) {
    throw ConfigError(std::string("hyperparameter echo is not JSON: ") + e.what());
  }

  json arrays = json::object();
  ModelParams copy = params;
  for (auto const &block : parameter_blocks(copy)) {
    std::vector<double> data(block.data, block.data + block.size());
    arrays[block.name] = json{{"shape", {block.rows, block.cols}}, {"data", std::move(data)}};
  }

  json doc{{"format_version", kCheckpointVersion},
           {"architecture", architecture_json(params.arch)},
           {"hyperparameters", std::move(hyper)},
           {"normalization", {{"mean", stats.mean}, {"std", stats.std}}},
           {"cadence_s", meta.cadence_s},
           {"global_skip", {{"beta0", params.beta0}, {"decay", params.beta_decay}}},
           {"storage_order", "column-major"},
           {"arrays", std::move(arrays)}};
  out << doc.dump(1) << '\n';
  if (!out)
    throw IoError("checkpoint write failure");
}

void save_checkpoint(std::filesystem::path const &path, ModelParams const &params, NormStats const &stats,
                     CheckpointMeta const &meta)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot open " + path.string() + " for writing");
  save_checkpoint(out, params, stats, meta);
}

Checkpoint load_checkpoint(std::istream &in)
{
  json doc;
  try {
    doc = json::parse(in);
  } catch (json::exception const &e) {
    throw DataError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!doc.is_object())
    throw DataError("checkpoint root is not an object");

  int version = 0;
  try {
    version = doc.at("format_version").get<int>();
  } catch (json::exception const &) {
    throw DataError("checkpoint has no format_version");
  }
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint format_version " + std::to_string(version));

  Checkpoint cp;
  cp.params = zeros_like(init_model(architecture_from(doc.at("architecture")), 0));
  try {
    cp.stats.mean = doc.at("normalization").at("mean").get<double>();
    cp.stats.std = doc.at("normalization").at("std").get<double>();
    cp.meta.cadence_s = doc.value("cadence_s", 0.0);
    cp.meta.hyperparameters_json = doc.value("hyperparameters", json::object()).dump();
    cp.params.beta0 = doc.at("global_skip").at("beta0").get<double>();
    cp.params.beta_decay = doc.at("global_skip").at("decay").get<double>();
  } catch (json::exception const &e) {
    throw DataError(std::string("checkpoint metadata: ") + e.what());
  }
  if (!(cp.stats.std > 0.0))
    throw DataError("checkpoint normalization std must be positive");

  json const *arrays = nullptr;
  if (auto it = doc.find("arrays"); it != doc.end() && it->is_object())
    arrays = &*it;
  else
    throw DataError("checkpoint has no arrays object");

  for (auto const &block : parameter_blocks(cp.params)) {
    auto it = arrays->find(block.name);
    if (it == arrays->end())
      throw ShapeError("checkpoint array '" + block.name + "' is missing");
    std::vector<Index> shape;
    try {
      shape = it->at("shape").get<std::vector<Index>>();
    } catch (json::exception const &) {
      throw DataError("checkpoint array '" + block.name + "' has no valid shape");
    }
    if (shape.size() != 2 || shape[0] != block.rows || shape[1] != block.cols) {
      std::string got;
      for (auto s : shape)
        got += (got.empty() ? "" : "x") + std::to_string(s);
      throw ShapeError("checkpoint array '" + block.name + "' has shape [" + got + "], expected [" +
                       std::to_string(block.rows) + "x" + std::to_string(block.cols) + "]");
    }
    auto const data = it->find("data");
    if (data == it->end() || !data->is_array() || static_cast<Index>(data->size()) != block.size())
      throw ShapeError("checkpoint array '" + block.name + "' has the wrong number of values");
    for (Index k = 0; k < block.size(); ++k) {
      auto const &v = (*data)[static_cast<std::size_t>(k)];
      if (!v.is_number())
        throw DataError("checkpoint array '" + block.name + "' holds a non-numeric value at " + std::to_string(k));
      block.data[k] = v.get<double>();
    }
  }
  validate_shapes(cp.params);
  return cp;
}

Checkpoint load_checkpoint(std::filesystem::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

} // namespace dartclean
