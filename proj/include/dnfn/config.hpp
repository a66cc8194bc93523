#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dnfn/data.hpp"
#include "dnfn/network.hpp"

namespace dnfn {

/// Everything a training run depends on. Epochs and batch size are desk-scale
/// choices; the optimizer defaults are the published ones.
struct TrainConfig {
  NetworkConfig network;
  std::size_t epochs = 30;
  std::size_t batch = 16;
  double lr_initial = 0.1;
  double lr_final = 0.001;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  std::string dataset;  // directory written by gen-data
  AugmentSpec augment;  // applied to training clouds each epoch
  // Each batch keeps a random subset of its points: a fraction drawn
  // uniformly from [0, point_dropout] of them is removed.
  double point_dropout = 0.5;

  /// Throws ConfigError on any inconsistency.
  void validate() const;
};

/// Flat "key = value" text, one setting per line, '#' starts a comment. Lists
/// are comma separated. Keys not present keep the values of `base`.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});

/// Sets one key; throws ConfigError for unknown keys or malformed values.
void apply_setting(TrainConfig& config, const std::string& key, const std::string& value);

/// Every key in a fixed order; parse_config(serialize_config(c)) == c.
std::string serialize_config(const TrainConfig& config);

std::vector<std::string> config_keys();

}  // namespace dnfn
