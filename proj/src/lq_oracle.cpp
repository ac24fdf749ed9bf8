#include "mkv/lq_oracle.hpp"

#include <cmath>

namespace mkv {

LqSpec LqSpec::scalar_default(double rho, double T, double sigma) {
  LqSpec s;
  s.d = 1;
  s.b1 = Mat::Zero(1, 1);
  s.b2 = Mat::Identity(1, 1);
  s.sigma = sigma * Mat::Identity(1, 1);
  s.R = Mat::Identity(1, 1);
  s.Q = Mat::Identity(1, 1);
  s.QG = Mat::Identity(1, 1);
  s.rho = rho;
  s.rhoG = rho;
  s.t0 = 0.0;
  s.T = T;
  return s;
}

void LqSpec::validate() const {
  if (d < 1) throw InvalidInput("LqSpec: need d >= 1");
  auto square = [&](const Mat& mat, const char* name) {
    if (mat.rows() != d || mat.cols() != d)
      throw InvalidInput(std::string("LqSpec: block '") + name + "' must be d x d");
  };
  square(b1, "b1");
  square(b2, "b2");
  square(sigma, "sigma");
  square(R, "R");
  square(Q, "Q");
  square(QG, "QG");
  Eigen::SelfAdjointEigenSolver<Mat> es(R);
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw InvalidInput("LqSpec: R must be symmetric positive definite");
  Eigen::SelfAdjointEigenSolver<Mat> eq(Q), eg(QG);
  if (eq.eigenvalues().minCoeff() < -1e-12 || eg.eigenvalues().minCoeff() < -1e-12)
    throw InvalidInput("LqSpec: Q and QG must be positive semidefinite");
  if (!(T > t0)) throw InvalidInput("LqSpec: need T > t0");
}

Mat LqSpec::control_gain() const { return b2 * R.ldlt().solve(b2.transpose()); }

namespace {

// Coefficient state along the backward integration.
struct State {
  Mat eta, chi, P, q, r;
  double s;
};

State axpy(const State& a, double c, const State& b) {
  return {a.eta + c * b.eta, a.chi + c * b.chi, a.P + c * b.P,
          a.q + c * b.q,     a.r + c * b.r,     a.s + c * b.s};
}

// d/dt of the coefficient system.  Derived by matching the affine ansatz
// Y = eta X + chi m in the Pontryagin system and the quadratic ansatz
// V = 1/2 x'P x + x'q m + 1/2 m'r m + s in the value master equation.
// rho_eff carries the extra averaged measure-derivative term of the
// McKean-Vlasov control variant.
State time_derivative(const State& u, const LqSpec& spec, double rho_eff) {
  const Mat S = spec.control_gain();
  const Mat& b1 = spec.b1;
  const Mat b1t = b1.transpose();
  const Mat a = spec.sigma * spec.sigma.transpose();

  State d;
  d.eta = -u.eta * b1 - b1t * u.eta + u.eta * S * u.eta - spec.Q;
  d.chi = -u.chi * b1 - b1t * u.chi + u.eta * S * u.chi + u.chi * S * u.eta +
          u.chi * S * u.chi + rho_eff * spec.Q;
  d.P = -u.P * b1 - b1t * u.P - spec.Q - u.eta * S * u.eta + u.P * S * u.eta +
        u.eta * S * u.P;
  d.q = -u.q * b1 - b1t * u.q + u.P * S * u.chi - u.eta * S * u.chi +
        u.q * S * u.eta + u.q * S * (u.eta + u.chi) + spec.rho * spec.Q;
  d.r = -u.r * b1 - b1t * u.r + u.q * S * u.chi + u.chi * S * u.q -
        u.chi * S * u.chi - spec.rho * spec.rho * spec.Q +
        u.r * S * (u.eta + u.chi) + (u.eta + u.chi) * S * u.r;
  d.s = -0.5 * (u.P * a).trace();
  return d;
}

bool finite(const State& u) {
  const double cap = 1e8;
  auto ok = [&](const Mat& m) { return m.allFinite() && m.cwiseAbs().maxCoeff() < cap; };
  return ok(u.eta) && ok(u.chi) && ok(u.P) && ok(u.q) && ok(u.r) &&
         std::isfinite(u.s) && std::abs(u.s) < cap;
}

std::vector<State> integrate(const LqSpec& spec, double rho_eff,
                             const State& terminal, int steps) {
  // RK4 on tau = T - t, stored in ascending-time order afterwards.
  const double h = (spec.T - spec.t0) / steps;
  std::vector<State> states(steps + 1);
  states[steps] = terminal;
  State u = terminal;
  for (int j = steps; j > 0; --j) {
    auto rhs = [&](const State& v) {
      State d = time_derivative(v, spec, rho_eff);
      // backward-time system: d/dtau = -d/dt
      d.eta = -d.eta; d.chi = -d.chi; d.P = -d.P;
      d.q = -d.q; d.r = -d.r; d.s = -d.s;
      return d;
    };
    const State k1 = rhs(u);
    const State k2 = rhs(axpy(u, 0.5 * h, k1));
    const State k3 = rhs(axpy(u, 0.5 * h, k2));
    const State k4 = rhs(axpy(u, h, k3));
    State incr = axpy(k1, 2.0, k2);
    incr = axpy(incr, 2.0, k3);
    incr = axpy(incr, 1.0, k4);
    u = axpy(u, h / 6.0, incr);
    if (!finite(u))
      throw BlowUpError("solve_riccati: coefficient ODE blew up before t0 "
                        "(scenario outside the well-posed regime)");
    states[j - 1] = u;
  }
  return states;
}

Mat interpolate(const std::vector<Mat>& nodes, const RiccatiSolution& sol, double t) {
  if (t < sol.t0 - 1e-12 || t > sol.T + 1e-12)
    throw InvalidInput("oracle: query time outside [t0, T]");
  const double pos = (t - sol.t0) / (sol.T - sol.t0) * sol.steps;
  int j = static_cast<int>(std::floor(pos));
  if (j < 0) j = 0;
  if (j > sol.steps - 1) j = sol.steps - 1;
  const double w = pos - j;
  return (1.0 - w) * nodes[j] + w * nodes[j + 1];
}

}  // namespace

namespace {

State terminal_state(const LqSpec& spec, ControlKind kind) {
  const double chi_T_factor = kind == ControlKind::kMfg
                                  ? -spec.rhoG
                                  : -spec.rhoG * (2.0 - spec.rhoG);
  State terminal;
  terminal.eta = spec.QG;
  terminal.chi = chi_T_factor * spec.QG;
  terminal.P = spec.QG;
  terminal.q = -spec.rhoG * spec.QG;
  terminal.r = spec.rhoG * spec.rhoG * spec.QG;
  terminal.s = 0.0;
  return terminal;
}

double rho_effective(const LqSpec& spec, ControlKind kind) {
  return kind == ControlKind::kMfg ? spec.rho : spec.rho * (2.0 - spec.rho);
}

}  // namespace

double riccati_probe(const LqSpec& spec, ControlKind kind, int steps) {
  spec.validate();
  const auto states =
      integrate(spec, rho_effective(spec, kind), terminal_state(spec, kind), steps);
  return states.front().chi(0, 0);
}

RiccatiSolution solve_riccati(const LqSpec& spec, ControlKind kind,
                              const TimeGrid& grid) {
  spec.validate();
  if (std::abs(grid.t0 - spec.t0) > 1e-12 || std::abs(grid.T - spec.T) > 1e-12)
    throw InvalidInput("solve_riccati: grid horizon must match the spec horizon");

  const double rho_eff = rho_effective(spec, kind);
  const State terminal = terminal_state(spec, kind);

  int steps = std::max(grid.K, 4096);
  std::vector<State> states = integrate(spec, rho_eff, terminal, steps);
  for (int round = 0; round < 12; ++round) {
    std::vector<State> fine = integrate(spec, rho_eff, terminal, 2 * steps);
    double diff = 0.0;
    for (int j = 0; j <= steps; ++j) {
      diff = std::max(diff,
                      (states[j].eta - fine[2 * j].eta).cwiseAbs().maxCoeff() +
                          (states[j].chi - fine[2 * j].chi).cwiseAbs().maxCoeff());
    }
    if (diff < 1e-8 && round > 0) break;
    steps *= 2;
    states = std::move(fine);
    if (diff < 1e-8) break;
  }

  RiccatiSolution sol;
  sol.kind = kind;
  sol.d = spec.d;
  sol.t0 = spec.t0;
  sol.T = spec.T;
  sol.steps = steps;
  sol.eta.reserve(steps + 1);
  for (int j = 0; j <= steps; ++j) {
    const State& u = states[j];
    sol.eta.push_back(u.eta);
    sol.chi.push_back(u.chi);
    sol.kappa.push_back(Vec::Zero(spec.d));
    const State d = time_derivative(u, spec, rho_eff);
    sol.eta_dot.push_back(d.eta);
    sol.chi_dot.push_back(d.chi);
    sol.P.push_back(u.P);
    sol.q.push_back(u.q);
    sol.r.push_back(u.r);
    sol.s.push_back(u.s);
  }

  // Internal consistency of the two ansatz layers: the value expansion must
  // reproduce the field through the identification of its kind.
  double worst = 0.0;
  for (int j = 0; j <= steps; ++j) {
    worst = std::max(worst, (sol.P[j] - sol.eta[j]).cwiseAbs().maxCoeff());
    const Mat chi_from_value = kind == ControlKind::kMfg
                                   ? sol.q[j]
                                   : Mat(2.0 * sol.q[j] + sol.r[j]);
    worst = std::max(worst, (chi_from_value - sol.chi[j]).cwiseAbs().maxCoeff());
  }
  if (worst > 1e-7)
    throw BlowUpError("solve_riccati: value expansion inconsistent with the "
                      "field coefficients (derivation violated)");
  return sol;
}

Mat RiccatiSolution::eta_at(double t) const { return interpolate(eta, *this, t); }
Mat RiccatiSolution::chi_at(double t) const { return interpolate(chi, *this, t); }
Mat RiccatiSolution::P_at(double t) const { return interpolate(P, *this, t); }
Mat RiccatiSolution::q_at(double t) const { return interpolate(q, *this, t); }
Mat RiccatiSolution::r_at(double t) const { return interpolate(r, *this, t); }

double RiccatiSolution::s_at(double t) const {
  if (t < t0 - 1e-12 || t > T + 1e-12)
    throw InvalidInput("oracle: query time outside [t0, T]");
  const double pos = (t - t0) / (T - t0) * steps;
  int j = static_cast<int>(std::floor(pos));
  if (j < 0) j = 0;
  if (j > steps - 1) j = steps - 1;
  const double w = pos - j;
  return (1.0 - w) * s[j] + w * s[j + 1];
}

Vec oracle_field(const RiccatiSolution& sol, double t, const Vec& x,
                 const EmpiricalMeasure& mu) {
  if (x.size() != sol.d || mu.dim() != sol.d)
    throw InvalidInput("oracle_field: dimension mismatch");
  return sol.eta_at(t) * x + sol.chi_at(t) * mu.mean();
}

double oracle_value(const RiccatiSolution& sol, const LqSpec& spec, double t,
                    const Vec& x, const EmpiricalMeasure& mu) {
  if (x.size() != sol.d || mu.dim() != sol.d)
    throw InvalidInput("oracle_value: dimension mismatch");
  (void)spec;
  const Vec m = mu.mean();
  return 0.5 * x.dot(sol.P_at(t) * x) + x.dot(sol.q_at(t) * m) +
         0.5 * m.dot(sol.r_at(t) * m) + sol.s_at(t);
}

}  // namespace mkv
