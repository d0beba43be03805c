#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mrsn/config.hpp"

namespace mrsn {

struct RunPaths {
  std::string data;        // dataset directory; empty: generate from `data`
  std::string checkpoint;  // input checkpoint
  std::string bank;        // input bank file
};

/// Everything a subcommand needs. `seed` drives model init and the training
/// shuffles; the synthetic generator has its own `data.seed`.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;       // short-term phase
  TrainConfig long_train;  // long-term phase
  SyntheticSpec data;
  RunPaths paths;
  std::string eval_split = "eval";
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

/// Throws ConfigError listing both values for every field that differs.
void require_compatible(const ModelConfig& expected, const ModelConfig& found, const std::string& what);

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitData = 4;

/// Parses arguments and runs one subcommand; never throws.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mrsn
