#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dnfn/config.hpp"
#include "dnfn/optimizer.hpp"

namespace dnfn {

// Binary checkpoint, all integers little-endian:
//   "DNCK" | u32 version | u32 config length | config text
//   u32 record count | records (parameters, then normalization buffers)
//   u32 record count | optimizer records
// A record is u32 name length | name | u32 rank | u32 extent * rank |
// float32 payload. Optimizer records are "optimizer.step",
// "optimizer.epoch", "optimizer.total_steps" (scalars, exact below 2^24) and
// one "momentum.<parameter>" per momentum buffer.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  ModelParams<float> params;
  OptimizerState optimizer;
  std::int64_t epoch = 0;
};

std::string encode_checkpoint(const TrainConfig& config, ModelParams<float>& params,
                              const OptimizerState& optimizer, std::int64_t epoch);
/// Throws FormatError (naming the byte offset) on malformed input and
/// ConfigError when records do not match the embedded config.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config,
                     ModelParams<float>& params, const OptimizerState& optimizer,
                     std::int64_t epoch);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dnfn
