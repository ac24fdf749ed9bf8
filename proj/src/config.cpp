#include "mkv/config.hpp"

#include <fstream>

namespace mkv {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& where,
                    const std::vector<std::string>& known) {
  if (!obj.is_object())
    throw InvalidInput("config: '" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    bool ok = false;
    for (const auto& k : known) ok = ok || k == key;
    if (!ok)
      throw InvalidInput("config: unknown key '" + key + "' in '" + where + "'");
  }
}

Vec vec_from(const json& v, const std::string& where) {
  if (!v.is_array()) throw InvalidInput("config: '" + where + "' must be an array");
  Vec out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = v[i].get<double>();
  return out;
}

InitialLawSpec parse_init(const json& j) {
  reject_unknown(j, "init", {"kind", "mean", "std", "lo", "hi", "point"});
  const std::string kind = j.value("kind", "gaussian");
  if (kind == "gaussian") {
    if (!j.contains("mean") || !j.contains("std"))
      throw InvalidInput("config: gaussian init needs 'mean' and 'std'");
    return InitialLawSpec::gaussian(vec_from(j.at("mean"), "init.mean"),
                                    vec_from(j.at("std"), "init.std"));
  }
  if (kind == "uniform") {
    if (!j.contains("lo") || !j.contains("hi"))
      throw InvalidInput("config: uniform init needs 'lo' and 'hi'");
    return InitialLawSpec::uniform(vec_from(j.at("lo"), "init.lo"),
                                   vec_from(j.at("hi"), "init.hi"));
  }
  if (kind == "dirac") {
    if (!j.contains("point")) throw InvalidInput("config: dirac init needs 'point'");
    return InitialLawSpec::dirac(vec_from(j.at("point"), "init.point"));
  }
  throw InvalidInput("config: unknown init kind '" + kind + "'");
}

}  // namespace

RunConfig parse_config(const json& doc) {
  reject_unknown(doc, "<root>",
                 {"seed", "scenario", "horizon", "init", "solver", "check", "output"});
  if (!doc.contains("seed") || !doc.at("seed").is_number_integer())
    throw InvalidInput("config: integer 'seed' is mandatory (no wall-clock default)");
  if (!doc.contains("scenario") || !doc.contains("horizon") || !doc.contains("init") ||
      !doc.contains("solver"))
    throw InvalidInput("config: 'scenario', 'horizon', 'init', 'solver' are required");

  RunConfig cfg;
  cfg.raw = doc;

  const json& sc = doc.at("scenario");
  reject_unknown(sc, "scenario", {"name", "params"});
  if (!sc.contains("name")) throw InvalidInput("config: scenario.name is required");
  cfg.scenario_name = sc.at("name").get<std::string>();
  cfg.scenario_params = sc.value("params", json::object());

  const json& hz = doc.at("horizon");
  reject_unknown(hz, "horizon", {"t0", "T"});
  cfg.t0 = hz.value("t0", 0.0);
  cfg.T = hz.at("T").get<double>();
  if (!(cfg.T > cfg.t0)) throw InvalidInput("config: need T > t0");

  cfg.init = parse_init(doc.at("init"));

  const json& sv = doc.at("solver");
  reject_unknown(sv, "solver",
                 {"N", "K", "basis_degree", "mean_regressor", "picard_max", "tol_law",
                  "damping", "delta_min", "block_horizon", "antithetic", "mean_shift"});
  cfg.solver.particles = sv.at("N").get<int>();
  cfg.solver.steps = sv.at("K").get<int>();
  cfg.solver.basis_degree = sv.value("basis_degree", 1);
  cfg.solver.mean_regressor = sv.value("mean_regressor", true);
  cfg.solver.picard_max = sv.value("picard_max", 50);
  cfg.solver.tol_law = sv.value("tol_law", 1e-3);
  cfg.solver.damping = sv.value("damping", 1.0);
  cfg.solver.delta_min = sv.value("delta_min", 0.0);
  cfg.solver.block_horizon = sv.value("block_horizon", 0.0);
  cfg.solver.antithetic = sv.value("antithetic", true);
  cfg.solver.mean_shift = sv.value("mean_shift", 1e-2);
  cfg.solver.seed = doc.at("seed").get<std::uint64_t>();

  if (cfg.solver.particles < 2) throw InvalidInput("config: solver.N must be >= 2");
  if (cfg.solver.steps < 1) throw InvalidInput("config: solver.K must be >= 1");
  if (cfg.solver.basis_degree < 0 || cfg.solver.basis_degree > 6)
    throw InvalidInput("config: solver.basis_degree out of the documented range [0,6]");
  if (!(cfg.solver.tol_law > 0)) throw InvalidInput("config: tol_law must be positive");
  if (!(cfg.solver.damping > 0 && cfg.solver.damping <= 1))
    throw InvalidInput("config: damping must lie in (0, 1]");

  cfg.check = doc.value("check", json::object());
  if (doc.contains("output")) {
    reject_unknown(doc.at("output"), "output", {"dir"});
    cfg.out_dir = doc.at("output").value("dir", "out");
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("config: cannot open '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("config: JSON parse error: ") + e.what());
  }
  return parse_config(doc);
}

std::uint64_t config_hash(const json& doc) {
  const std::string canonical = doc.dump();  // nlohmann objects iterate sorted
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string config_hash_hex(const json& doc) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(config_hash(doc)));
  return buf;
}

}  // namespace mkv
