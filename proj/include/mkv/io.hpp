#pragma once

#include <string>

#include <json.hpp>

#include "mkv/fbsde.hpp"

namespace mkv {

// Round-trippable decimal rendering, used everywhere a double hits a file so
// equal runs produce byte-identical artifacts.
std::string format_double(double v);

// Atom list serializations shared by the CLI.
std::string measure_to_csv(const EmpiricalMeasure& mu);
nlohmann::json measure_to_json(const EmpiricalMeasure& mu);
EmpiricalMeasure measure_from_json(const nlohmann::json& j);

// field.csv: one row per node with the regression and mean-channel
// coefficients; field_meta.json: basis, dims, seed, diagnostics, config hash.
void write_field_csv(const std::string& path, const DecouplingField& field);
void write_field_meta(const std::string& path, const DecouplingField& field,
                      const std::string& config_hash);

// ensemble.csv: (particle, step, X..., Y..., Z...).
void write_ensemble_csv(const std::string& path, const PathEnsemble& ens);

void write_json(const std::string& path, const nlohmann::json& doc);

nlohmann::json hypothesis_report_to_json(const struct HypothesisReport& report);

}  // namespace mkv
