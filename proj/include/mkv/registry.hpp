#pragma once

#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "mkv/control.hpp"
#include "mkv/lq_oracle.hpp"
#include "mkv/scenario.hpp"

namespace mkv {

// A named coefficient model plus whatever structure it was built from; the
// extra pieces feed the oracle-based checks.
struct ScenarioBundle {
  Coefficients coefficients;
  std::string name;
  ControlKind kind = ControlKind::kMfg;
  std::optional<LqSpec> lq;
  std::shared_ptr<const MfgSpec> mfg;
  std::shared_ptr<const MkvControlSpec> mkv;
};

// Mean-field-game spec with analytic derivative evaluators for the
// linear-quadratic blocks (sharp oracles, no stencil noise in the builder).
MfgSpec make_lq_mfg_spec(const LqSpec& lq);
MkvControlSpec make_lq_mkv_spec(const LqSpec& lq);

LqSpec lq_spec_from_params(const nlohmann::json& params, double t0, double T);

// Built-in scenarios:
//   constant_terminal {value, d, m} - b = 0, sigma = I, f = 0, g = value
//   identity_terminal {d}           - b = 0, sigma = I, f = 0, g(x) = x
//   lq_mfg    {b1, b2, sigma, R, Q, QG, rho, rhoG, d} - Pontryagin game system
//   lq_mkv    {same}                - Pontryagin McKean-Vlasov control system
ScenarioBundle make_scenario(const std::string& name,
                             const nlohmann::json& params, double t0, double T);

}  // namespace mkv
