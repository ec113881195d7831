#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "nsr/network.hpp"
#include "nsr/training.hpp"

namespace nsr::cli {

/// Everything a training run needs. See docs/run_config.md for the schema.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;  // schedule, degradation, batch/patch/steps and seed
  std::string train_dir;
  std::string val_dir;
  bool has_seed = false;
};

/// Strict parse: unknown keys and wrong types raise ConfigError. Relative
/// data paths are resolved against `base_dir`.
RunConfig parse_run_config(const std::string& text, const std::string& base_dir = "");
RunConfig load_run_config(const std::string& path);

/// --seed, then NSR_SEED, then the config value, then 0.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config);

}  // namespace nsr::cli
