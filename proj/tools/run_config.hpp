#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "coffar/json_io.hpp"
#include "coffar/model.hpp"
#include "coffar/trainer.hpp"

namespace coffar::cli {

/// Fully resolved settings of a `coffar train` run. Schema:
///
///   {
///     "seed": <uint>,                      global seed
///     "model": { model config },           seed defaults to derive(seed, "model")
///     "train": {
///       "learning_rate": <real>, "batch_size": <uint>,
///       "epochs": <uint> | "total_steps": <uint>,
///       "loss": "cross_entropy" | "cross_entropy_plus_center",
///       "center_weight": <real>, "center_alpha": <real>,
///       "checkpoint_every": <uint>, "seed": <uint>
///     },
///     "data": { "gallery": <path>, "pairs": <path>|null, "stream": <bool>,
///               "pairs_seed": <uint> }
///   }
///
/// Unknown keys anywhere are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model = ModelConfig::default_config();
  TrainConfig train;
  std::string gallery;
  std::optional<std::string> pairs;
  bool stream = false;
  std::uint64_t pairs_seed = 0;
};

/// Parses a run config. Keys left out take defaults derived from the seed.
RunConfig parse_run_config(const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);
Json run_config_to_json(const RunConfig& c);

/// Fills derived seeds from the global seed where the file left them unset.
RunConfig defaults_for_seed(std::uint64_t seed);

}  // namespace coffar::cli
