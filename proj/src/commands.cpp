#include "mkv/commands.hpp"

#include <filesystem>
#include <ostream>

#include "mkv/io.hpp"
#include "mkv/lions.hpp"
#include "mkv/master.hpp"
#include "mkv/registry.hpp"
#include "mkv/rng.hpp"

namespace mkv {

using nlohmann::json;

namespace {

EmpiricalMeasure random_cloud(int n, int d, std::uint64_t seed, std::uint64_t tag,
                              double mean, double sd) {
  Mat a(n, d);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c)
      a(i, c) = mean + sd * rng::gaussian(seed, rng::Stream::kSampler, tag,
                                          static_cast<std::uint64_t>(i) * d + c);
  return EmpiricalMeasure(std::move(a));
}

// Ensemble assembled from a solved field: X snapshots with the field's own
// values and gradients standing in for (Y, Z).  Used when the block solver
// returns a field without a raw ensemble.
PathEnsemble ensemble_from_field(const DecouplingField& field,
                                 const Coefficients& c) {
  PathEnsemble ens;
  ens.grid = field.grid;
  ens.seed = field.seed;
  const int K = field.grid.K;
  const int m = field.dim_y;
  const int d = field.dim_x();
  ens.X.resize(K + 1);
  ens.Y.resize(K + 1);
  ens.Z.resize(K);
  ens.dW.assign(K, Mat::Zero(field.mu_atoms.front().rows(), d));
  for (int k = 0; k <= K; ++k) {
    ens.X[k] = field.mu_atoms[k];
    const int n = static_cast<int>(ens.X[k].rows());
    ens.Y[k].resize(n, m);
    if (k < K) ens.Z[k].resize(n, m * d);
    Mat joint(n, d + m);
    joint.leftCols(d) = ens.X[k];
    for (int i = 0; i < n; ++i) {
      const Vec x = ens.X[k].row(i).transpose();
      const Vec y = field.value_at_node(k, x);
      ens.Y[k].row(i) = y.transpose();
      joint.row(i).tail(m) = y.transpose();
    }
    if (k < K) {
      const EmpiricalMeasure nu{joint};
      for (int i = 0; i < n; ++i) {
        const Vec x = ens.X[k].row(i).transpose();
        const Vec y = ens.Y[k].row(i).transpose();
        const Mat z = field.grad_x_at_node(k, x) * c.sigma(x, y, nu);
        for (int a = 0; a < m; ++a) ens.Z[k].row(i).segment(a * d, d) = z.row(a);
      }
    }
  }
  return ens;
}

json pass_line(std::ostream& log, const std::string& label, double value,
               double tol, bool smaller_is_pass = true) {
  const bool pass = smaller_is_pass ? value < tol : value >= tol;
  log << (pass ? "PASS " : "FAIL ") << label << ": value=" << value
      << " tol=" << tol << "\n";
  return json{{"label", label}, {"value", value}, {"tolerance", tol}, {"pass", pass}};
}

MeasureFunctional quadratic_functional() {
  MeasureFunctional f;
  f.label = "second-moment";
  f.eval = [](const EmpiricalMeasure& mu) { return mu.second_moment(); };
  f.replace_eval = [](const EmpiricalMeasure& mu, double base, int i,
                      const Vec& repl) {
    return base + (repl.squaredNorm() - mu.atoms().row(i).squaredNorm()) / mu.size();
  };
  return f;
}

}  // namespace

int cmd_solve(const RunConfig& cfg, const std::string& out_dir, std::ostream& log) {
  try {
    const ScenarioBundle bundle =
        make_scenario(cfg.scenario_name, cfg.scenario_params, cfg.t0, cfg.T);
    std::filesystem::create_directories(out_dir);
    const std::string hash = config_hash_hex(cfg.raw);

    json diagnostics;
    diagnostics["config_hash"] = hash;
    diagnostics["scenario"] = cfg.scenario_name;

    if (cfg.solver.block_horizon <= 0.0 ||
        cfg.solver.block_horizon >= cfg.T - cfg.t0 - 1e-12) {
      const TimeGrid grid(cfg.t0, cfg.T, cfg.solver.steps);
      auto [ens, field] =
          solve_small_time(bundle.coefficients, cfg.init, grid, cfg.solver);
      write_field_csv(out_dir + "/field.csv", field);
      write_field_meta(out_dir + "/field_meta.json", field, hash);
      write_ensemble_csv(out_dir + "/ensemble.csv", ens);
      diagnostics["picard_iterations"] = field.picard_iterations;
      diagnostics["law_gaps"] = field.law_gaps;
      diagnostics["final_law_gap"] = field.final_gap;
      diagnostics["decoupling_residual"] = decoupling_residual(ens, field);
      diagnostics["z_consistency"] = field.z_consistency;
      diagnostics["blocks"] = 1;
    } else {
      const DecouplingField field = solve_long_horizon(
          bundle.coefficients, cfg.init, cfg.t0, cfg.T, cfg.solver);
      write_field_csv(out_dir + "/field.csv", field);
      write_field_meta(out_dir + "/field_meta.json", field, hash);
      write_ensemble_csv(out_dir + "/ensemble.csv",
                         ensemble_from_field(field, bundle.coefficients));
      diagnostics["picard_iterations"] = field.picard_iterations;
      diagnostics["law_gaps"] = field.law_gaps;
      diagnostics["final_law_gap"] = field.final_gap;
      diagnostics["z_consistency"] = field.z_consistency;
    }
    write_json(out_dir + "/diagnostics.json", diagnostics);
    log << "solve: wrote artifacts to " << out_dir << " (config " << hash << ")\n";
    return kExitOk;
  } catch (const ConvergenceFailure& e) {
    log << "convergence-failure in solve: " << e.what()
        << " (gaps " << e.previous_gap << " -> " << e.final_gap << ")\n";
    return kExitConvergenceFailure;
  } catch (const BlowUpError& e) {
    log << "blow-up in solve: " << e.what() << "\n";
    return kExitNumericFailure;
  } catch (const NumericDomainError& e) {
    log << "numeric failure in solve: " << e.what() << "\n";
    return kExitNumericFailure;
  } catch (const IllConditionedBasis& e) {
    log << "numeric failure in solve: " << e.what() << "\n";
    return kExitNumericFailure;
  } catch (const InvalidInput& e) {
    log << "invalid config in solve: " << e.what() << "\n";
    return kExitInvalidConfig;
  }
}

namespace {

int check_chain_rule(const RunConfig& cfg, json& report, std::ostream& log) {
  const json& q = cfg.check;
  const int n = q.value("particles", 4096);
  const int steps = q.value("steps", 64);
  const double h = q.value("h", 1e-4);
  const double tol = q.value("tolerance", 0.05);
  const double ou_tol = q.value("ou_tolerance", 0.02);

  Mat init(n, 1);
  for (int i = 0; i < n; ++i)
    init(i, 0) = rng::gaussian(cfg.solver.seed, rng::Stream::kInit, i, 0);
  const auto flow = brownian_flow(init, TimeGrid(0, 1, steps), cfg.solver.seed + 1);
  const double res = chain_rule_residual(quadratic_functional(), flow, h);
  report["results"].push_back(pass_line(log, "brownian_quadratic_residual", res, tol));

  const auto ou = ornstein_uhlenbeck_flow(Mat::Zero(n, 1), TimeGrid(0, 1, steps),
                                          1.0, 1.0, cfg.solver.seed + 2);
  const double m2 = ou.measure_at(steps).second_moment();
  const double m2_exact = 0.5 * (1.0 - std::exp(-2.0));
  report["results"].push_back(
      pass_line(log, "ou_second_moment_error", std::abs(m2 - m2_exact), ou_tol));
  return kExitOk;
}

int check_master_residual(const RunConfig& cfg, const ScenarioBundle& bundle,
                          json& report, std::ostream& log) {
  if (!bundle.lq)
    throw InvalidInput("check master_residual: needs a linear-quadratic scenario");
  const json& q = cfg.check;
  const int points = q.value("points", 100);
  const int n_mu = q.value("measure_atoms", 128);
  const double tol = q.value("tolerance", 1e-4);
  StencilSpec st;
  st.h_t = q.value("h_t", 1e-3);
  st.h_x = q.value("h_x", 1e-3);
  st.h_mu = q.value("h_mu", 1e-4);

  const auto sol = solve_riccati(*bundle.lq, bundle.kind,
                                 TimeGrid(cfg.t0, cfg.T, cfg.solver.steps));
  const OracleFieldAdapter field(sol);
  double worst = 0.0;
  for (int p = 0; p < points; ++p) {
    const double t =
        cfg.t0 + (0.05 + 0.9 * rng::uniform(cfg.solver.seed, rng::Stream::kSampler,
                                            900, p)) *
                     (cfg.T - cfg.t0);
    const Vec x = Vec::Constant(
        1, 2.0 * rng::gaussian(cfg.solver.seed, rng::Stream::kSampler, 901, p));
    const auto mu = random_cloud(n_mu, bundle.lq->d, cfg.solver.seed, 902 + p,
                                 0.3, 1.0);
    const auto breakdown =
        master_residual(field, bundle.coefficients, t, x, mu, st);
    worst = std::max(worst, breakdown.total.cwiseAbs().maxCoeff());
  }
  report["results"].push_back(pass_line(log, "oracle_master_residual", worst, tol));
  return kExitOk;
}

int check_identification(const RunConfig& cfg, const ScenarioBundle& bundle,
                         json& report, std::ostream& log) {
  if (!bundle.lq)
    throw InvalidInput("check identification: needs a linear-quadratic scenario");
  const json& q = cfg.check;
  const int points = q.value("points", 50);
  const int n_mu = q.value("measure_atoms", 128);
  const double h_x = q.value("h_x", 1e-4);
  const double h_mu = q.value("h_mu", 1e-4);
  const double tol =
      q.value("tolerance", bundle.kind == ControlKind::kMfg ? 1e-2 : 2e-2);

  const auto sol = solve_riccati(*bundle.lq, bundle.kind,
                                 TimeGrid(cfg.t0, cfg.T, cfg.solver.steps));
  const OracleFieldAdapter U(sol);
  const OracleValueAdapter V(sol, *bundle.lq);
  double worst = 0.0;
  for (int p = 0; p < points; ++p) {
    const double t =
        cfg.t0 + (0.05 + 0.9 * rng::uniform(cfg.solver.seed, rng::Stream::kSampler,
                                            910, p)) *
                     (cfg.T - cfg.t0);
    const auto mu = random_cloud(n_mu, bundle.lq->d, cfg.solver.seed, 930 + p,
                                 0.2, 1.0);
    const int atom = static_cast<int>(
        rng::uniform(cfg.solver.seed, rng::Stream::kSampler, 911, p) * mu.size());
    const Vec x = mu.atom(std::min(atom, mu.size() - 1));
    worst = std::max(worst,
                     identification_check(bundle.kind, V, U, t, x, mu, h_x, h_mu));
  }
  report["results"].push_back(pass_line(log, "identification_discrepancy", worst, tol));
  return kExitOk;
}

int check_hypotheses(const RunConfig& cfg, const ScenarioBundle& bundle,
                     json& report, std::ostream& log) {
  const json& q = cfg.check;
  const int n = q.value("samples", 200);

  HypothesisReport hyp =
      estimate_lipschitz(bundle.coefficients, SeededSampler(cfg.solver.seed), n);

  bool pass = hyp.sigma_bound <= bundle.coefficients.sigma_bound + 1e-9;
  if (bundle.lq) {
    // Lasry-Lions monotonicity of the mean-field cost coupling, exact on
    // constructed pairs, compared to the closed form -rho (m - m')^2
    const double rho = bundle.lq->rho;
    const Mat Q = bundle.lq->Q;
    auto h = [&](const Vec& x, const EmpiricalMeasure& mu) {
      const Vec z = x - rho * mu.mean();
      return 0.5 * z.dot(Q * z);
    };
    std::vector<std::pair<EmpiricalMeasure, EmpiricalMeasure>> pairs;
    double analytic = std::numeric_limits<double>::infinity();
    for (int rep = 0; rep < 8; ++rep) {
      auto mu = random_cloud(6, bundle.lq->d, cfg.solver.seed, 940 + rep, 0.0, 1.0);
      auto nu = random_cloud(6, bundle.lq->d, cfg.solver.seed, 950 + rep, 0.6, 1.2);
      const Vec dm = mu.mean() - nu.mean();
      analytic = std::min(analytic, -rho * dm.dot(Q * dm));
      pairs.emplace_back(std::move(mu), std::move(nu));
    }
    hyp.monotonicity_min = check_lasry_lions(h, pairs);
    report["lasry_lions_analytic"] = analytic;
    report["lasry_lions_error"] = std::abs(hyp.monotonicity_min - analytic);
    pass = pass && std::abs(hyp.monotonicity_min - analytic) < 1e-10;
    pass = pass && hyp.monotonicity_min >= -1e-12;

    const auto H = [&](const Vec& x, const EmpiricalMeasure& mu, const Vec& y,
                       const Mat&, const Vec& alpha) {
      return hamiltonian(*bundle.mfg, x, mu, y, alpha);
    };
    SeededSampler sampler(cfg.solver.seed + 1, 1.0, 4);
    std::vector<ConvexitySample> samples;
    for (int i = 0; i < 16; ++i)
      samples.push_back({sampler.point(bundle.lq->d), sampler.measure(bundle.lq->d),
                         sampler.point(bundle.lq->d), Mat::Zero(1, 1),
                         sampler.point(bundle.lq->d), sampler.point(bundle.lq->d),
                         sampler.point(bundle.lq->d)});
    hyp.convexity_lambda = check_convexity(H, samples);
    pass = pass && hyp.convexity_lambda > 0.0;
  }

  report["hypothesis_report"] = hypothesis_report_to_json(hyp);
  log << (pass ? "PASS" : "FAIL") << " hypotheses: sigma_bound="
      << hyp.sigma_bound << " monotonicity_min=" << hyp.monotonicity_min
      << " convexity_lambda=" << hyp.convexity_lambda << "\n";
  report["results"].push_back(json{{"label", "hypotheses"}, {"pass", pass}});
  return kExitOk;
}

int check_lq_validate(const RunConfig& cfg, const ScenarioBundle& bundle,
                      json& report, std::ostream& log) {
  if (!bundle.lq)
    throw InvalidInput("check lq_validate: needs a linear-quadratic scenario");
  const double tol = cfg.check.value("tolerance", 1e-2);

  const TimeGrid grid(cfg.t0, cfg.T, cfg.solver.steps);
  const DecouplingField field = solve_long_horizon(
      bundle.coefficients, cfg.init, cfg.t0, cfg.T, cfg.solver);
  const auto sol = solve_riccati(*bundle.lq, bundle.kind, grid);

  double worst = 0.0;
  for (int k = 0; k <= grid.K; ++k) {
    const EmpiricalMeasure mu = field.measure_at(k);
    for (int i = 0; i < mu.size(); ++i) {
      const Vec x = mu.atom(i);
      const Vec u_solver = field.value_at_node(k, x);
      const Vec u_oracle = oracle_field(sol, grid.node(k), x, mu);
      worst = std::max(worst,
                       (u_solver - u_oracle).norm() / (1.0 + x.norm()));
    }
  }
  report["results"].push_back(pass_line(log, "lq_field_sup_error", worst, tol));
  report["final_law_gap"] = field.final_gap;
  return kExitOk;
}

int check_flow_consistency(const RunConfig& cfg, const ScenarioBundle& bundle,
                           json& report, std::ostream& log) {
  const double tol = cfg.check.value("tolerance", 2e-2);
  const TimeGrid grid(cfg.t0, cfg.T, cfg.solver.steps);
  const double value = flow_consistency(bundle.coefficients, cfg.init, grid,
                                        cfg.solver, grid.K / 2);
  report["results"].push_back(pass_line(log, "flow_consistency_midpoint", value, tol));
  return kExitOk;
}

int check_weak_lipschitz(const RunConfig& cfg, const ScenarioBundle& bundle,
                         json& report, std::ostream& log) {
  if (cfg.init.kind != InitialLawSpec::Kind::kGaussian)
    throw InvalidInput("check weak_lipschitz: needs a gaussian initial law");
  const TimeGrid grid(cfg.t0, cfg.T, cfg.solver.steps);

  std::vector<std::pair<InitialLawSpec, InitialLawSpec>> pairs;
  InitialLawSpec shifted = cfg.init;
  shifted.mean = cfg.init.mean.array() + 0.3;
  pairs.emplace_back(cfg.init, shifted);
  InitialLawSpec widened = cfg.init;
  widened.std_dev = cfg.init.std_dev * 1.25;
  pairs.emplace_back(cfg.init, widened);

  const double estimate =
      weak_lipschitz_estimate(bundle.coefficients, grid, cfg.solver, pairs);
  report["estimate"] = estimate;

  double tol = cfg.check.value("tolerance", 0.0);
  if (bundle.lq) {
    const auto sol = solve_riccati(*bundle.lq, bundle.kind, grid);
    const double bound = sol.eta_at(cfg.t0).norm() + sol.chi_at(cfg.t0).norm();
    report["oracle_bound"] = bound;
    if (tol <= 0.0) tol = 1.1 * bound;
  } else if (tol <= 0.0) {
    throw InvalidInput("check weak_lipschitz: needs a tolerance for non-LQ scenarios");
  }
  report["results"].push_back(pass_line(log, "weak_lipschitz_estimate", estimate, tol));
  return kExitOk;
}

}  // namespace

int cmd_check(const RunConfig& cfg, const std::string& check_name,
              const std::string& out_dir, std::ostream& log) {
  try {
    const ScenarioBundle bundle =
        make_scenario(cfg.scenario_name, cfg.scenario_params, cfg.t0, cfg.T);
    std::filesystem::create_directories(out_dir);

    json report;
    report["check"] = check_name;
    report["config_hash"] = config_hash_hex(cfg.raw);
    report["results"] = json::array();

    if (check_name == "chain_rule") {
      check_chain_rule(cfg, report, log);
    } else if (check_name == "master_residual") {
      check_master_residual(cfg, bundle, report, log);
    } else if (check_name == "identification") {
      check_identification(cfg, bundle, report, log);
    } else if (check_name == "hypotheses") {
      check_hypotheses(cfg, bundle, report, log);
    } else if (check_name == "lq_validate") {
      check_lq_validate(cfg, bundle, report, log);
    } else if (check_name == "flow_consistency") {
      check_flow_consistency(cfg, bundle, report, log);
    } else if (check_name == "weak_lipschitz") {
      check_weak_lipschitz(cfg, bundle, report, log);
    } else {
      log << "unknown check '" << check_name << "'\n";
      return kExitInvalidConfig;
    }

    bool all_pass = true;
    for (const auto& r : report["results"]) all_pass = all_pass && r.value("pass", false);
    report["pass"] = all_pass;
    write_json(out_dir + "/check_" + check_name + ".json", report);
    return all_pass ? kExitOk : kExitCheckFailed;
  } catch (const ConvergenceFailure& e) {
    log << "convergence-failure in check: " << e.what() << "\n";
    return kExitConvergenceFailure;
  } catch (const BlowUpError& e) {
    log << "blow-up in check: " << e.what() << "\n";
    return kExitNumericFailure;
  } catch (const NumericDomainError& e) {
    log << "numeric failure in check: " << e.what() << "\n";
    return kExitNumericFailure;
  } catch (const IllConditionedBasis& e) {
    log << "numeric failure in check: " << e.what() << "\n";
    return kExitNumericFailure;
  } catch (const InvalidInput& e) {
    log << "invalid config in check: " << e.what() << "\n";
    return kExitInvalidConfig;
  }
}

}  // namespace mkv
