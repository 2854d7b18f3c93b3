#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "csad/net.hpp"

namespace csad {

/// Malformed, out-of-range or unknown configuration entries.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  NetConfig net;
  TrainConfig train;
};

/// {"net": {...}, "train": {..., "loss": {...}}}. Omitted keys take their
/// defaults; unknown keys are rejected.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

/// Checkpoint layout (all header lines ASCII):
///   CSADCKPT 1
///   config <byte count>
///   <config JSON>
///   params <count>
///   <name> <rank> <d0> ... <dn>        one line per parameter, sorted by name
///   payload
///   <RT1 record per parameter, same order>
void save_checkpoint(const std::filesystem::path& path, const ModelState& model,
                     const TrainConfig& train);

struct Checkpoint {
  ModelState model;
  TrainConfig train;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace csad
