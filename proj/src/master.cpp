#include "mkv/master.hpp"

#include <cmath>

namespace mkv {

namespace {

// Time derivative of a field component bundle, one-sided at the ends.
Vec time_derivative(const MeasureField& U, double t, const Vec& x,
                    const EmpiricalMeasure& mu, double h_t) {
  const double lo = U.t_min();
  const double hi = U.t_max();
  const double h = h_t * (1.0 + std::abs(t));
  if (t - h < lo) return (U.value(t + h, x, mu) - U.value(t, x, mu)) / h;
  if (t + h > hi) return (U.value(t, x, mu) - U.value(t - h, x, mu)) / h;
  return (U.value(t + h, x, mu) - U.value(t - h, x, mu)) / (2.0 * h);
}

Mat space_gradient(const MeasureField& U, double t, const Vec& x,
                   const EmpiricalMeasure& mu, double h_x) {
  const int d = U.dim_x();
  const int m = U.dim_y();
  const double h = h_x * (1.0 + x.norm());
  Mat grad(m, d);
  for (int c = 0; c < d; ++c) {
    Vec up = x, down = x;
    up[c] += h;
    down[c] -= h;
    grad.col(c) = (U.value(t, up, mu) - U.value(t, down, mu)) / (2.0 * h);
  }
  return grad;
}

// Hessians of every component at once: hess[a] is d x d.
std::vector<Mat> space_hessians(const MeasureField& U, double t, const Vec& x,
                                const EmpiricalMeasure& mu, double h_x) {
  const int d = U.dim_x();
  const int m = U.dim_y();
  const double h = h_x * (1.0 + x.norm());
  const Vec center = U.value(t, x, mu);
  std::vector<Mat> hess(m, Mat::Zero(d, d));
  for (int a = 0; a < d; ++a) {
    Vec up = x, down = x;
    up[a] += h;
    down[a] -= h;
    const Vec fu = U.value(t, up, mu);
    const Vec fd = U.value(t, down, mu);
    for (int comp = 0; comp < m; ++comp)
      hess[comp](a, a) = (fu[comp] - 2.0 * center[comp] + fd[comp]) / (h * h);
    for (int b = a + 1; b < d; ++b) {
      Vec pp = x, pm = x, mp = x, mm = x;
      pp[a] += h; pp[b] += h;
      pm[a] += h; pm[b] -= h;
      mp[a] -= h; mp[b] += h;
      mm[a] -= h; mm[b] -= h;
      const Vec v = (U.value(t, pp, mu) - U.value(t, pm, mu) -
                     U.value(t, mp, mu) + U.value(t, mm, mu)) /
                    (4.0 * h * h);
      for (int comp = 0; comp < m; ++comp) {
        hess[comp](a, b) = v[comp];
        hess[comp](b, a) = v[comp];
      }
    }
  }
  return hess;
}

MeasureFunctional component_slice(const MeasureField& U, double t, const Vec& x,
                                  int comp) {
  MeasureFunctional f;
  f.label = "field-component";
  f.eval = [&U, t, x, comp](const EmpiricalMeasure& m) {
    return U.value(t, x, m)[comp];
  };
  return f;
}

}  // namespace

MeasureLift build_measure_lift(const MeasureField& U, double t,
                               const EmpiricalMeasure& mu) {
  const int n = mu.size();
  const int d = mu.dim();
  const int m = U.dim_y();
  Mat lifted(n, d + m);
  for (int i = 0; i < n; ++i) {
    const Vec v = mu.atom(i);
    lifted.row(i).head(d) = v.transpose();
    lifted.row(i).tail(m) = U.value(t, v, mu).transpose();
  }
  return MeasureLift{mu, EmpiricalMeasure(std::move(lifted))};
}

namespace {

// Shared assembly of the six master-equation summands at (t, x, mu).
MasterResidualBreakdown assemble(const MeasureField& U, const Coefficients& c,
                                 double t, const Vec& x,
                                 const EmpiricalMeasure& mu,
                                 const StencilSpec& st) {
  if (x.size() != U.dim_x() || mu.dim() != U.dim_x())
    throw InvalidInput("master_residual: dimension mismatch");
  if (t < U.t_min() - 1e-12 || t > U.t_max() + 1e-12)
    throw InvalidInput("master_residual: time outside the field's domain");

  const int m = U.dim_y();
  const int n = mu.size();
  const MeasureLift lift = build_measure_lift(U, t, mu);
  const EmpiricalMeasure& nu = lift.lifted;

  MasterResidualBreakdown out;
  out.t = t;
  out.x = x;
  out.stencils = st;

  const Vec U0 = U.value(t, x, mu);
  const Mat gradU = space_gradient(U, t, x, mu, st.h_x);
  const std::vector<Mat> hessU = space_hessians(U, t, x, mu, st.h_x);

  const Mat sig_x = c.sigma(x, U0, nu);
  const Mat a_x = sig_x * sig_x.transpose();
  const Mat z_x = gradU * sig_x;

  out.dt_term = time_derivative(U, t, x, mu, st.h_t);
  out.drift_term = gradU * c.b(x, U0, z_x, nu);
  out.trace_term = Vec(m);
  for (int comp = 0; comp < m; ++comp)
    out.trace_term[comp] = 0.5 * (hessU[comp] * a_x).trace();
  out.driver_term = c.f(x, U0, z_x, nu);

  // measure terms: Lions derivatives of mu' -> U(t, x, mu'), integrated
  // against the coefficient fields evaluated along the atoms
  std::vector<LionsDerivativeEstimate> grads(m), hsecs(m);
  for (int comp = 0; comp < m; ++comp) {
    const MeasureFunctional slice = component_slice(U, t, x, comp);
    grads[comp] = lions_derivative(slice, mu, st.h_mu);
    hsecs[comp] = lions_second_diag(slice, mu, st.h_mu);
  }

  out.measure_drift_term = Vec::Zero(m);
  out.measure_trace_term = Vec::Zero(m);
  for (int i = 0; i < n; ++i) {
    const Vec v = mu.atom(i);
    const Vec Uv = nu.atom(i).tail(m);
    const Mat gradUv = space_gradient(U, t, v, mu, st.h_x);
    const Mat sig_v = c.sigma(v, Uv, nu);
    const Vec b_v = c.b(v, Uv, gradUv * sig_v, nu);
    const Mat a_v = sig_v * sig_v.transpose();
    for (int comp = 0; comp < m; ++comp) {
      out.measure_drift_term[comp] += grads[comp].gradients[i].dot(b_v);
      out.measure_trace_term[comp] += 0.5 * (hsecs[comp].hessians[i] * a_v).trace();
    }
  }
  out.measure_drift_term /= n;
  out.measure_trace_term /= n;
  return out;
}

}  // namespace

MasterResidualBreakdown master_residual(const MeasureField& U,
                                        const Coefficients& c, double t,
                                        const Vec& x, const EmpiricalMeasure& mu,
                                        const StencilSpec& stencils) {
  MasterResidualBreakdown out = assemble(U, c, t, x, mu, stencils);
  out.total = out.dt_term + out.drift_term + out.trace_term + out.driver_term +
              out.measure_drift_term + out.measure_trace_term;
  return out;
}

MasterResidualBreakdown forward_form_residual(const MeasureField& u,
                                              const Coefficients& c, double t,
                                              const Vec& x,
                                              const EmpiricalMeasure& mu,
                                              const StencilSpec& stencils) {
  MasterResidualBreakdown out = assemble(u, c, t, x, mu, stencils);
  out.total = out.dt_term - out.drift_term - out.trace_term - out.driver_term -
              out.measure_drift_term - out.measure_trace_term;
  return out;
}

MfgMasterBreakdown mfg_master_residual(const MeasureField& V, const MfgSpec& spec,
                                       const MeasureField& U, double t,
                                       const Vec& x, const EmpiricalMeasure& mu,
                                       const StencilSpec& st) {
  if (V.dim_y() != 1)
    throw InvalidInput("mfg_master_residual: V must be scalar-valued");
  const int n = mu.size();
  const Mat a = spec.sigma * spec.sigma.transpose();

  MfgMasterBreakdown out;
  out.dt_term = time_derivative(V, t, x, mu, st.h_t)[0];

  const Mat gradV = space_gradient(V, t, x, mu, st.h_x);  // 1 x d
  const Vec alpha = minimize_hamiltonian(spec, x, mu, U.value(t, x, mu));
  out.drift_term = (gradV * spec.drift(x, mu, alpha))(0);
  out.cost_term = spec.running_cost(x, mu, alpha);

  const MeasureFunctional slice = component_slice(V, t, x, 0);
  const LionsDerivativeEstimate mgrad = lions_derivative(slice, mu, st.h_mu);
  const LionsDerivativeEstimate mhess = lions_second_diag(slice, mu, st.h_mu);

  double measure_drift = 0.0;
  Mat measure_hess = Mat::Zero(mu.dim(), mu.dim());
  for (int i = 0; i < n; ++i) {
    const Vec v = mu.atom(i);
    const Vec alpha_v = minimize_hamiltonian(spec, v, mu, U.value(t, v, mu));
    measure_drift += mgrad.gradients[i].dot(spec.drift(v, mu, alpha_v));
    measure_hess += mhess.hessians[i];
  }
  out.measure_drift_term = measure_drift / n;

  const Mat hessV = space_hessians(V, t, x, mu, st.h_x)[0];
  out.trace_term = 0.5 * ((hessV + measure_hess / n) * a).trace();

  out.total = out.dt_term + out.drift_term + out.cost_term +
              out.measure_drift_term + out.trace_term;
  return out;
}

}  // namespace mkv
