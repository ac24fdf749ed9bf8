#include "mkv/lions.hpp"

#include <cmath>

#include "mkv/rng.hpp"

namespace mkv {

namespace {

double eval_perturbed(const MeasureFunctional& U, const EmpiricalMeasure& mu,
                      double base, int atom, const Vec& replacement) {
  const double value = U.replace_eval
                           ? U.replace_eval(mu, base, atom, replacement)
                           : U.eval(mu.with_atom(atom, replacement));
  if (!std::isfinite(value))
    throw NumericDomainError(
        "measure functional '" + U.label + "' non-finite at perturbed atom", atom);
  return value;
}

void check_flow(const ParticleFlow& flow) {
  const size_t K = static_cast<size_t>(flow.grid.K);
  if (flow.states.size() != K + 1 || flow.drifts.size() != K ||
      flow.diffusions.size() != K)
    throw InvalidInput("ParticleFlow: grid/ensemble mismatch");
}

}  // namespace

double default_lions_step(const EmpiricalMeasure& mu) {
  const Mat centered = mu.atoms().rowwise() - mu.mean().transpose();
  double var = centered.array().square().sum() /
               std::max(1, mu.size() * mu.dim() - 1);
  double sd = std::sqrt(var);
  if (sd < 1e-8) sd = 1.0;  // degenerate cloud: fall back to unit scale
  return 1e-4 * sd;
}

LionsDerivativeEstimate lions_derivative(const MeasureFunctional& U,
                                         const EmpiricalMeasure& mu, double h) {
  if (!(h > 0.0)) throw InvalidInput("lions_derivative: need h > 0");
  const int n = mu.size();
  const int d = mu.dim();
  const double base = U.eval(mu);
  if (!std::isfinite(base))
    throw NumericDomainError("measure functional '" + U.label + "' non-finite");

  LionsDerivativeEstimate est;
  est.step = h;
  est.order = 1;
  est.gradients.resize(n);
  for (int i = 0; i < n; ++i) {
    const Vec xi = mu.atom(i);
    const double hi = h * (1.0 + xi.norm());
    RowVec grad(d);
    for (int c = 0; c < d; ++c) {
      Vec up = xi, down = xi;
      up[c] += hi;
      down[c] -= hi;
      const double fu = eval_perturbed(U, mu, base, i, up);
      const double fd = eval_perturbed(U, mu, base, i, down);
      grad[c] = n * (fu - fd) / (2.0 * hi);
    }
    est.gradients[i] = grad;
  }
  return est;
}

LionsDerivativeEstimate lions_second_diag(const MeasureFunctional& U,
                                          const EmpiricalMeasure& mu, double h) {
  if (!(h > 0.0)) throw InvalidInput("lions_second_diag: need h > 0");
  const int n = mu.size();
  const int d = mu.dim();
  const double base = U.eval(mu);
  if (!std::isfinite(base))
    throw NumericDomainError("measure functional '" + U.label + "' non-finite");

  LionsDerivativeEstimate est;
  est.step = h;
  est.order = 2;
  est.hessians.resize(n);
  for (int i = 0; i < n; ++i) {
    const Vec xi = mu.atom(i);
    const double hi = h * (1.0 + xi.norm());
    Mat block(d, d);
    for (int a = 0; a < d; ++a) {
      Vec up = xi, down = xi;
      up[a] += hi;
      down[a] -= hi;
      const double fu = eval_perturbed(U, mu, base, i, up);
      const double fd = eval_perturbed(U, mu, base, i, down);
      block(a, a) = n * (fu - 2.0 * base + fd) / (hi * hi);
      for (int b = a + 1; b < d; ++b) {
        Vec pp = xi, pm = xi, mp = xi, mm = xi;
        pp[a] += hi; pp[b] += hi;
        pm[a] += hi; pm[b] -= hi;
        mp[a] -= hi; mp[b] += hi;
        mm[a] -= hi; mm[b] -= hi;
        const double v = n *
                         (eval_perturbed(U, mu, base, i, pp) -
                          eval_perturbed(U, mu, base, i, pm) -
                          eval_perturbed(U, mu, base, i, mp) +
                          eval_perturbed(U, mu, base, i, mm)) /
                         (4.0 * hi * hi);
        block(a, b) = v;
        block(b, a) = v;
      }
    }
    est.hessians[i] = block;
  }
  return est;
}

double chain_rule_residual(const MeasureFunctional& U, const ParticleFlow& flow,
                           double h) {
  check_flow(flow);
  const int K = flow.grid.K;
  const int n = flow.particles();
  const double dt = flow.grid.dt();

  double integral = 0.0;
  for (int k = 0; k < K; ++k) {
    const EmpiricalMeasure mu_k = flow.measure_at(k);
    const LionsDerivativeEstimate grad = lions_derivative(U, mu_k, h);
    const LionsDerivativeEstimate hess = lions_second_diag(U, mu_k, h);
    double drift_term = 0.0;
    double trace_term = 0.0;
    for (int i = 0; i < n; ++i) {
      drift_term += grad.gradients[i].dot(flow.drifts[k].row(i));
      const Mat& s = flow.diffusions[k][i];
      trace_term += (hess.hessians[i] * (s * s.transpose())).trace();
    }
    integral += dt * (drift_term + 0.5 * trace_term) / n;
  }

  const double start = U.eval(flow.measure_at(0));
  const double end = U.eval(flow.measure_at(K));
  return std::abs(end - start - integral);
}

namespace {

// Lions estimators for the measure slice mu -> V(t, x, mu).
MeasureFunctional measure_slice(const TimeSpaceMeasureFunctional& V, double t,
                                const Vec& x) {
  MeasureFunctional slice;
  slice.label = V.label + "(t,x,.)";
  slice.eval = [&V, t, x](const EmpiricalMeasure& mu) { return V.eval(t, x, mu); };
  return slice;
}

}  // namespace

double full_ito_residual(const TimeSpaceMeasureFunctional& V,
                         const ParticleFlow& flow, int observed_path, double h) {
  check_flow(flow);
  const int K = flow.grid.K;
  const int n = flow.particles();
  const int d = flow.dim();
  const double dt = flow.grid.dt();
  if (observed_path >= n)
    throw InvalidInput("full_ito_residual: path index out of range");

  const bool pathwise = observed_path >= 0;
  const int i_lo = pathwise ? observed_path : 0;
  const int i_hi = pathwise ? observed_path + 1 : n;
  const int n_obs = i_hi - i_lo;

  double integral = 0.0;
  double martingale = 0.0;
  for (int k = 0; k < K; ++k) {
    const double t = flow.grid.node(k);
    const EmpiricalMeasure mu_k = flow.measure_at(k);
    const double ht = h * (1.0 + std::abs(t));

    double sum = 0.0;
    for (int i = i_lo; i < i_hi; ++i) {
      const Vec xi = flow.states[k].row(i).transpose();
      const Vec bi = flow.drifts[k].row(i).transpose();
      const Mat& si = flow.diffusions[k][i];
      const Mat ai = si * si.transpose();

      // time derivative (one-sided at the grid ends)
      double dtv;
      if (t - ht < flow.grid.t0)
        dtv = (V.eval(t + ht, xi, mu_k) - V.eval(t, xi, mu_k)) / ht;
      else if (t + ht > flow.grid.T)
        dtv = (V.eval(t, xi, mu_k) - V.eval(t - ht, xi, mu_k)) / ht;
      else
        dtv = (V.eval(t + ht, xi, mu_k) - V.eval(t - ht, xi, mu_k)) / (2.0 * ht);

      // space derivatives
      const double hx = h * (1.0 + xi.norm());
      RowVec grad_x(d);
      Mat hess_x(d, d);
      const double center = V.eval(t, xi, mu_k);
      for (int a = 0; a < d; ++a) {
        Vec up = xi, down = xi;
        up[a] += hx;
        down[a] -= hx;
        const double fu = V.eval(t, up, mu_k);
        const double fd = V.eval(t, down, mu_k);
        grad_x[a] = (fu - fd) / (2.0 * hx);
        hess_x(a, a) = (fu - 2.0 * center + fd) / (hx * hx);
        for (int b = a + 1; b < d; ++b) {
          Vec pp = xi, pm = xi, mp = xi, mm = xi;
          pp[a] += hx; pp[b] += hx;
          pm[a] += hx; pm[b] -= hx;
          mp[a] -= hx; mp[b] += hx;
          mm[a] -= hx; mm[b] -= hx;
          const double v = (V.eval(t, pp, mu_k) - V.eval(t, pm, mu_k) -
                            V.eval(t, mp, mu_k) + V.eval(t, mm, mu_k)) /
                           (4.0 * hx * hx);
          hess_x(a, b) = v;
          hess_x(b, a) = v;
        }
      }

      // measure terms, averaged over the auxiliary copy
      const MeasureFunctional slice = measure_slice(V, t, xi);
      const LionsDerivativeEstimate mg = lions_derivative(slice, mu_k, h);
      const LionsDerivativeEstimate mh = lions_second_diag(slice, mu_k, h);
      double measure_drift = 0.0;
      double measure_trace = 0.0;
      for (int j = 0; j < n; ++j) {
        const Mat& sj = flow.diffusions[k][j];
        measure_drift += mg.gradients[j].dot(flow.drifts[k].row(j));
        measure_trace += (mh.hessians[j] * (sj * sj.transpose())).trace();
      }
      measure_drift /= n;
      measure_trace /= n;

      sum += dtv + grad_x.dot(bi) + 0.5 * (hess_x * ai).trace() +
             measure_drift + 0.5 * measure_trace;

      if (pathwise) {
        const Vec dx = (flow.states[k + 1].row(i) - flow.states[k].row(i)).transpose();
        martingale += grad_x.dot(dx - bi * dt);
      }
    }
    integral += dt * sum / n_obs;
  }

  const EmpiricalMeasure mu_0 = flow.measure_at(0);
  const EmpiricalMeasure mu_T = flow.measure_at(K);
  double change = 0.0;
  for (int i = i_lo; i < i_hi; ++i) {
    change += V.eval(flow.grid.T, flow.states[K].row(i).transpose(), mu_T) -
              V.eval(flow.grid.t0, flow.states[0].row(i).transpose(), mu_0);
  }
  change /= n_obs;
  return std::abs(change - integral - martingale);
}

ParticleFlow brownian_flow(const Mat& initial_atoms, const TimeGrid& grid,
                           std::uint64_t seed) {
  const int n = static_cast<int>(initial_atoms.rows());
  const int d = static_cast<int>(initial_atoms.cols());
  const double sdt = std::sqrt(grid.dt());
  ParticleFlow flow;
  flow.grid = grid;
  flow.states.assign(grid.K + 1, Mat::Zero(n, d));
  flow.drifts.assign(grid.K, Mat::Zero(n, d));
  flow.diffusions.assign(grid.K, std::vector<Mat>(n, Mat::Identity(d, d)));
  flow.states[0] = initial_atoms;
  for (int k = 0; k < grid.K; ++k) {
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < d; ++c)
        flow.states[k + 1](i, c) =
            flow.states[k](i, c) +
            sdt * rng::gaussian(seed, rng::Stream::kBrownian, i,
                                static_cast<std::uint64_t>(k) * d + c);
  }
  return flow;
}

ParticleFlow ornstein_uhlenbeck_flow(const Mat& initial_atoms, const TimeGrid& grid,
                                     double theta, double sigma, std::uint64_t seed) {
  const int n = static_cast<int>(initial_atoms.rows());
  const int d = static_cast<int>(initial_atoms.cols());
  const double dt = grid.dt();
  const double sdt = std::sqrt(dt);
  ParticleFlow flow;
  flow.grid = grid;
  flow.states.assign(grid.K + 1, Mat::Zero(n, d));
  flow.drifts.assign(grid.K, Mat::Zero(n, d));
  flow.diffusions.assign(grid.K, std::vector<Mat>(n, sigma * Mat::Identity(d, d)));
  flow.states[0] = initial_atoms;
  for (int k = 0; k < grid.K; ++k) {
    flow.drifts[k] = -theta * flow.states[k];
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < d; ++c)
        flow.states[k + 1](i, c) =
            flow.states[k](i, c) + flow.drifts[k](i, c) * dt +
            sigma * sdt * rng::gaussian(seed, rng::Stream::kBrownian, i,
                                        static_cast<std::uint64_t>(k) * d + c);
  }
  return flow;
}

}  // namespace mkv
