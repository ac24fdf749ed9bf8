#pragma once

#include <vector>

#include "mkv/field.hpp"
#include "mkv/grid.hpp"
#include "mkv/measure.hpp"

namespace mkv {

// Linear-quadratic scenario:
//   drift b(x, alpha) = b1 x + b2 alpha, sigma constant,
//   F1 = 1/2 alpha'R alpha,
//   F0 = 1/2 (x - rho m)'Q (x - rho m),
//   G  = 1/2 (x - rhoG m)'QG (x - rhoG m),  m = mean of mu.
// Matrix blocks are expected symmetric (diagonal in practice); the scalar
// d = 1 instance is the default acceptance scenario.
struct LqSpec {
  int d = 1;
  Mat b1;      // d x d, defaults to 0
  Mat b2;      // d x d
  Mat sigma;   // d x d
  Mat R;       // d x d, SPD
  Mat Q;       // d x d, PSD
  Mat QG;      // d x d, PSD
  double rho = 0.0;
  double rhoG = 0.0;
  double t0 = 0.0;
  double T = 1.0;

  static LqSpec scalar_default(double rho, double T = 1.0, double sigma = 1.0);
  void validate() const;
  Mat control_gain() const;  // S = b2 R^{-1} b2'
};

// Closed-form affine decoupling field U(t,x,mu) = eta_t x + chi_t m + kappa_t
// for the LQ Pontryagin system, plus the quadratic value expansion
// V = 1/2 x'P x + x'q m + 1/2 m'r m + s.  Obtained by matching the affine
// ansatz in the Pontryagin system and the quadratic ansatz in the value
// master equation; integrated with RK4, entirely independent of the particle
// solver.
struct RiccatiSolution {
  ControlKind kind = ControlKind::kMfg;
  int d = 1;
  double t0 = 0.0;
  double T = 1.0;
  int steps = 0;  // internal RK4 step count after refinement

  std::vector<Mat> eta, chi;      // steps+1 entries, ascending time
  std::vector<Vec> kappa;         // identically zero for these specs
  std::vector<Mat> eta_dot, chi_dot;
  std::vector<Mat> P, q, r;       // value coefficients
  std::vector<double> s;

  double node(int j) const { return t0 + (T - t0) * j / steps; }
  Mat eta_at(double t) const;
  Mat chi_at(double t) const;
  Mat P_at(double t) const;
  Mat q_at(double t) const;
  Mat r_at(double t) const;
  double s_at(double t) const;
};

// Integrates the coefficient ODEs backward from the terminal data on an
// internal grid refined until halving the step changes sup|eta| + sup|chi|
// by less than 1e-8.  `grid` fixes the horizon and the starting resolution.
RiccatiSolution solve_riccati(const LqSpec& spec, ControlKind kind,
                              const TimeGrid& grid);

// Fixed-step backward integration returning chi(t0)(0,0); step-size probe
// for convergence studies (solve_riccati itself refines automatically).
double riccati_probe(const LqSpec& spec, ControlKind kind, int steps);

// eta_t x + chi_t mean(mu) + kappa_t, interpolated between internal nodes.
Vec oracle_field(const RiccatiSolution& sol, double t, const Vec& x,
                 const EmpiricalMeasure& mu);

// Quadratic value expansion at (t, x, mu).
double oracle_value(const RiccatiSolution& sol, const LqSpec& spec, double t,
                    const Vec& x, const EmpiricalMeasure& mu);

class OracleFieldAdapter : public MeasureField {
 public:
  explicit OracleFieldAdapter(const RiccatiSolution& sol) : sol_(sol) {}
  int dim_x() const override { return sol_.d; }
  int dim_y() const override { return sol_.d; }
  double t_min() const override { return sol_.t0; }
  double t_max() const override { return sol_.T; }
  Vec value(double t, const Vec& x, const EmpiricalMeasure& mu) const override {
    return oracle_field(sol_, t, x, mu);
  }

 private:
  const RiccatiSolution& sol_;
};

// Scalar-valued adapter for the quadratic value function.
class OracleValueAdapter : public MeasureField {
 public:
  OracleValueAdapter(const RiccatiSolution& sol, const LqSpec& spec)
      : sol_(sol), spec_(spec) {}
  int dim_x() const override { return sol_.d; }
  int dim_y() const override { return 1; }
  double t_min() const override { return sol_.t0; }
  double t_max() const override { return sol_.T; }
  Vec value(double t, const Vec& x, const EmpiricalMeasure& mu) const override {
    Vec v(1);
    v[0] = oracle_value(sol_, spec_, t, x, mu);
    return v;
  }

 private:
  const RiccatiSolution& sol_;
  const LqSpec& spec_;
};

}  // namespace mkv
