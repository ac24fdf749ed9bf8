#pragma once

#include "mkv/control.hpp"
#include "mkv/field.hpp"
#include "mkv/lions.hpp"
#include "mkv/scenario.hpp"

namespace mkv {

// nu = law of (xi, U(t, xi, mu)) for xi ~ mu: the (X, U)-lift that feeds the
// coefficient measure arguments.  Built from the field's own values, so
// residuals measure the field's self-consistency.
struct MeasureLift {
  EmpiricalMeasure base;
  EmpiricalMeasure lifted;
};

MeasureLift build_measure_lift(const MeasureField& U, double t,
                               const EmpiricalMeasure& mu);

// The six summands of the master equation at one point, R^m each; total is
// their exact sum and vanishes for an exact solution.
struct MasterResidualBreakdown {
  Vec dt_term;
  Vec drift_term;
  Vec trace_term;
  Vec driver_term;
  Vec measure_drift_term;
  Vec measure_trace_term;
  Vec total;
  double t = 0.0;
  Vec x;
  StencilSpec stencils;
};

// Pointwise residual of the backward master equation
//   dU/dt + dxU b + 1/2 Tr(dxxU ss') + f + int dmuU b dmu
//        + 1/2 int Tr(dv dmuU ss') dmu = 0
// with all derivatives by central finite differences (time falls back to a
// one-sided first-order stencil at the domain ends).
MasterResidualBreakdown master_residual(const MeasureField& U,
                                        const Coefficients& c, double t,
                                        const Vec& x, const EmpiricalMeasure& mu,
                                        const StencilSpec& stencils);

// Residual of the forward form du/dt - Au - f - int Cu dmu for the
// time-reversed field u(t,.,.) = U(tmin + tmax - t,.,.).  Equals minus the
// backward residual at the mirrored time, up to stencil error.
MasterResidualBreakdown forward_form_residual(const MeasureField& u,
                                              const Coefficients& c, double t,
                                              const Vec& x,
                                              const EmpiricalMeasure& mu,
                                              const StencilSpec& stencils);

struct MfgMasterBreakdown {
  double dt_term = 0.0;
  double drift_term = 0.0;
  double cost_term = 0.0;
  double measure_drift_term = 0.0;
  double trace_term = 0.0;
  double total = 0.0;
};

// Residual of the value-function master equation of the game:
//   dtV + dxV b(x, a(x,U)) + F(x, mu, a(x,U)) + int dmuV b(v, a(v,U)) dmu
//     + 1/2 Tr[(dxxV + int dv dmuV dmu) ss'] = 0,
// with U supplying the argument of the minimizer feedback.
MfgMasterBreakdown mfg_master_residual(const MeasureField& V, const MfgSpec& spec,
                                       const MeasureField& U, double t,
                                       const Vec& x, const EmpiricalMeasure& mu,
                                       const StencilSpec& stencils);

}  // namespace mkv
