#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "mkv/field.hpp"
#include "mkv/grid.hpp"
#include "mkv/measure.hpp"
#include "mkv/scenario.hpp"

namespace mkv {

// Mean-field-game specification under the linear-drift hypothesis:
//   drift b(x, mu, alpha) = b1 x + b_mean int v dmu + b2 alpha  (b_mean = 0
//   in the game case), sigma constant, running cost F0(x,mu) + F1(x,alpha),
//   terminal cost G(x,mu).
// Analytic derivative evaluators may be supplied for sharp oracles; central
// differences fill in for the missing ones.
struct MfgSpec {
  int d = 1;  // state dimension
  int k = 1;  // control dimension
  Mat b1;      // d x d
  Mat b_mean;  // d x d mean coupling, zero for the game case
  Mat b2;      // d x k
  Mat sigma;   // d x d, constant

  std::function<double(const Vec& x, const EmpiricalMeasure& mu)> F0;
  std::function<double(const Vec& x, const Vec& alpha)> F1;
  std::function<double(const Vec& x, const EmpiricalMeasure& mu)> G;

  std::function<Vec(const Vec& x, const EmpiricalMeasure& mu)> dx_F0;  // optional
  std::function<Vec(const Vec& x, const Vec& alpha)> dx_F1;            // optional
  std::function<Vec(const Vec& x, const Vec& alpha)> da_F1;            // optional
  std::function<Vec(const Vec& x, const EmpiricalMeasure& mu)> dx_G;   // optional

  // When R_quad is set, F1 is promised to be 1/2 a'R a + lin_alpha'a and the
  // minimizer has the closed form -R^{-1}(b2'y + lin_alpha).
  Mat R_quad;
  Vec lin_alpha;

  double lambda = 0.0;  // declared convexity constant of H in (x, alpha)
  double newton_tol = 1e-10;
  std::string label;

  Vec drift(const Vec& x, const EmpiricalMeasure& mu, const Vec& alpha) const;
  double running_cost(const Vec& x, const EmpiricalMeasure& mu,
                      const Vec& alpha) const;
  void validate() const;
};

// Control-of-McKean-Vlasov variant: same blocks plus the Lions derivatives
// of the costs, which feed the averaged terms of the adjoint equation.
// Signatures follow the cost arguments: dmu_F0(x, mu, alpha)(v), dmu_G(x, mu)(v).
struct MkvControlSpec : MfgSpec {
  std::function<RowVec(const Vec& x, const EmpiricalMeasure& mu, const Vec& alpha,
                       const Vec& v)>
      dmu_F;
  std::function<RowVec(const Vec& x, const EmpiricalMeasure& mu, const Vec& v)>
      dmu_G;
};

// Extended Hamiltonian H = y'b(x, mu, alpha) + F(x, mu, alpha).
double hamiltonian(const MfgSpec& spec, const Vec& x, const EmpiricalMeasure& mu,
                   const Vec& y, const Vec& alpha);

// argmin_alpha H: closed form for quadratic F1, damped Newton on the
// first-order condition b2'y + da F1(x, alpha) = 0 otherwise.  The returned
// control satisfies |b2'y + da F1| < newton_tol (checked on every call).
Vec minimize_hamiltonian(const MfgSpec& spec, const Vec& x,
                         const EmpiricalMeasure& mu, const Vec& y);

// Pontryagin forward-backward coefficients of the game: m = d, the backward
// component is the adjoint.
Coefficients build_pontryagin_mfg(const MfgSpec& spec);

// Control-of-McKean-Vlasov coefficients: the driver and terminal gain the
// ensemble-averaged Lions-derivative terms, computed as particle averages
// over the joint law's atoms.
Coefficients build_pontryagin_mkv(const MkvControlSpec& spec);

struct McParams {
  int tagged = 256;    // independent copies of the tagged particle
  std::uint64_t seed = 1;
};

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

// Monte Carlo of E[ G(X_T, mu_T) + int F(X_s, mu_s, a_s) ds ] along the
// feedback flow induced by U_field: the population evolves from mu's atoms,
// the tagged copies from x with independent noise.
McEstimate value_function(const MfgSpec& spec, const MeasureField& U_field,
                          double t, const Vec& x, const EmpiricalMeasure& mu,
                          const TimeGrid& grid, const McParams& mc);

// |U - dxV| for the game; |U - dxV - int dmuV(t,x',mu)(x) dmu(x')| for the
// McKean-Vlasov control.  The mkv form needs x on the support of mu (the
// Lions derivative is only defined there).
double identification_check(ControlKind kind, const MeasureField& V_field,
                            const MeasureField& U_field, double t, const Vec& x,
                            const EmpiricalMeasure& mu, double h_x, double h_mu);

// Flow of measures along grid nodes with atomwise interpolation in between.
struct FlowMeasures {
  TimeGrid grid;
  std::vector<Mat> atoms;  // K+1 entries, N x d

  EmpiricalMeasure at(double t) const;
};

// HJB residual along a frozen equilibrium flow:
//   ds[V(s,x,mu_s)] + dxV (b1 x + b_mean m + b2 a(x, dxV)) + 1/2 Tr(ss' dxxV)
//     + F(x, mu_s, a) at s = t.
double hjb_residual(const MfgSpec& spec, const MeasureField& V_field,
                    const FlowMeasures& flow, double t, const Vec& x,
                    const StencilSpec& stencils);

}  // namespace mkv
