#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "mkv/fbsde.hpp"

namespace mkv {

// Parsed run configuration.  Parsing is fail-fast: unknown keys anywhere in
// the document are rejected rather than ignored.
struct RunConfig {
  std::string scenario_name;
  nlohmann::json scenario_params;
  double t0 = 0.0;
  double T = 1.0;
  InitialLawSpec init;
  SolverParams solver;
  nlohmann::json check;  // per-check tolerances, free-form but validated
  std::string out_dir = "out";
  nlohmann::json raw;    // canonical document, hashed into every artifact
};

RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::string& path);

// FNV-1a over the canonical (sorted-key) dump; embedded in artifacts so a
// result file can be traced to the exact configuration.
std::uint64_t config_hash(const nlohmann::json& doc);
std::string config_hash_hex(const nlohmann::json& doc);

}  // namespace mkv
