#include "mkv/io.hpp"

#include <cstdio>
#include <fstream>

#include "mkv/scenario.hpp"

namespace mkv {

using nlohmann::json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string measure_to_csv(const EmpiricalMeasure& mu) {
  std::string out;
  for (int i = 0; i < mu.size(); ++i) {
    for (int c = 0; c < mu.dim(); ++c) {
      if (c) out += ',';
      out += format_double(mu.atoms()(i, c));
    }
    out += "\r\n";
  }
  return out;
}

json measure_to_json(const EmpiricalMeasure& mu) {
  json rows = json::array();
  for (int i = 0; i < mu.size(); ++i) {
    json row = json::array();
    for (int c = 0; c < mu.dim(); ++c) row.push_back(mu.atoms()(i, c));
    rows.push_back(row);
  }
  return rows;
}

EmpiricalMeasure measure_from_json(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) throw InvalidInput("measure: empty atom list");
  Mat atoms(rows.size(), rows.front().size());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size())
      throw InvalidInput("measure: ragged atom list");
    for (size_t c = 0; c < rows[i].size(); ++c) atoms(i, c) = rows[i][c];
  }
  return EmpiricalMeasure(std::move(atoms));
}

void write_field_csv(const std::string& path, const DecouplingField& field) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("io: cannot open '" + path + "' for writing");

  const int P = field.basis.size();
  const int m = field.dim_y;
  const int d = field.dim_x();
  out << "step,t";
  for (int j = 0; j < P; ++j)
    for (int a = 0; a < m; ++a) out << ",c_" << j << "_" << a;
  if (field.has_mean_channel)
    for (int l = 0; l < d; ++l)
      for (int j = 0; j < P; ++j)
        for (int a = 0; a < m; ++a) out << ",dm" << l << "_" << j << "_" << a;
  for (int l = 0; l < d; ++l) out << ",mean_" << l;
  out << ",fit_residual\r\n";

  for (int k = 0; k <= field.grid.K; ++k) {
    out << k << ',' << format_double(field.grid.node(k));
    for (int j = 0; j < P; ++j)
      for (int a = 0; a < m; ++a) out << ',' << format_double(field.coeffs[k](j, a));
    if (field.has_mean_channel)
      for (int l = 0; l < d; ++l)
        for (int j = 0; j < P; ++j)
          for (int a = 0; a < m; ++a)
            out << ',' << format_double(field.mean_channel[k][l](j, a));
    for (int l = 0; l < d; ++l) out << ',' << format_double(field.mean_x[k][l]);
    out << ',' << format_double(field.fit_residual[k]) << "\r\n";
  }
}

void write_field_meta(const std::string& path, const DecouplingField& field,
                      const std::string& config_hash) {
  json meta;
  meta["config_hash"] = config_hash;
  meta["basis"] = field.basis_descriptor +
                  (field.has_mean_channel ? "+mean_channel" : "");
  meta["dim_x"] = field.dim_x();
  meta["dim_y"] = field.dim_y;
  meta["grid"] = {{"t0", field.grid.t0}, {"T", field.grid.T}, {"K", field.grid.K}};
  meta["seed"] = field.seed;
  meta["picard_iterations"] = field.picard_iterations;
  meta["final_law_gap"] = field.final_gap;
  meta["law_gaps"] = field.law_gaps;
  meta["fit_residual_max"] =
      *std::max_element(field.fit_residual.begin(), field.fit_residual.end());
  meta["z_consistency"] = field.z_consistency;
  write_json(path, meta);
}

void write_ensemble_csv(const std::string& path, const PathEnsemble& ens) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("io: cannot open '" + path + "' for writing");
  const int d = ens.dim_x();
  const int m = ens.dim_y();
  out << "particle,step";
  for (int c = 0; c < d; ++c) out << ",x_" << c;
  for (int c = 0; c < m; ++c) out << ",y_" << c;
  for (int c = 0; c < m * d; ++c) out << ",z_" << c;
  out << "\r\n";
  for (int i = 0; i < ens.particles(); ++i) {
    for (int k = 0; k <= ens.grid.K; ++k) {
      out << i << ',' << k;
      for (int c = 0; c < d; ++c) out << ',' << format_double(ens.X[k](i, c));
      for (int c = 0; c < m; ++c) out << ',' << format_double(ens.Y[k](i, c));
      for (int c = 0; c < m * d; ++c)
        out << ',' << (k < ens.grid.K ? format_double(ens.Z[k](i, c)) : "");
      out << "\r\n";
    }
  }
}

void write_json(const std::string& path, const json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("io: cannot open '" + path + "' for writing");
  out << doc.dump(2) << "\n";
}

json hypothesis_report_to_json(const HypothesisReport& report) {
  json j;
  j["lipschitz"] = report.lipschitz;
  j["sigma_bound_sampled"] = report.sigma_bound;
  j["sigma_bound_declared"] = report.sigma_bound_declared;
  j["convexity_lambda"] = report.convexity_lambda;
  j["monotonicity_min"] = report.monotonicity_min;
  j["sample_count"] = report.sample_count;
  j["seed"] = report.seed;
  return j;
}

}  // namespace mkv
