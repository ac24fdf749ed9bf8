#pragma once

#include <iosfwd>
#include <string>

#include "mkv/config.hpp"

namespace mkv {

// Exit codes shared by the CLI and the tests that drive it.
enum ExitCode {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitInvalidConfig = 2,
  kExitConvergenceFailure = 3,
  kExitNumericFailure = 4,
};

// Solve the configured scenario and write field.csv, field_meta.json,
// ensemble.csv and diagnostics.json into out_dir.
int cmd_solve(const RunConfig& cfg, const std::string& out_dir, std::ostream& log);

// Run one named verification (chain_rule, master_residual, identification,
// hypotheses, lq_validate, flow_consistency, weak_lipschitz); writes
// check_<name>.json and returns 0 iff every tolerance passed.
int cmd_check(const RunConfig& cfg, const std::string& check_name,
              const std::string& out_dir, std::ostream& log);

}  // namespace mkv
