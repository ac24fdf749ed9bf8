#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mkv/grid.hpp"
#include "mkv/measure.hpp"

namespace mkv {

// Scalar functional of a probability measure, U : P2(R^d) -> R.
// `eval` must be deterministic and permutation-invariant in the atoms.
// `replace_eval`, when provided, returns U of the measure with atom i
// replaced; estimators use it to avoid the O(N) re-evaluation per stencil
// point (base_value is U(mu) computed once).
struct MeasureFunctional {
  std::function<double(const EmpiricalMeasure&)> eval;
  std::function<double(const EmpiricalMeasure& mu, double base_value, int atom,
                       const Vec& replacement)>
      replace_eval;
  std::string label;

  double operator()(const EmpiricalMeasure& mu) const { return eval(mu); }
};

// Per-atom estimate of the Lions derivative of U at an empirical measure,
// obtained from finite differences of the empirical projection
// u^N(x^1,...,x^N) = U((1/N) sum delta_{x^i}).
//
// order 1: gradients[i] ~ dU/dmu(mu)(x^i), a 1 x d row vector.
// order 2: hessians[i] ~ d_v[dU/dmu(mu)](x^i), a d x d matrix.  The
//   estimator N * d^2_{x^i x^i} u^N also contains (1/N) d^2_{mumu} U, an
//   O(1/N) bias that is documented, not corrected.
struct LionsDerivativeEstimate {
  std::vector<RowVec> gradients;
  std::vector<Mat> hessians;
  double step = 0.0;
  int order = 1;
};

// Base step for the scale-aware stencils: 1e-4 of the pooled coordinate
// standard deviation of the ensemble (floored away from zero).
double default_lions_step(const EmpiricalMeasure& mu);

// First-order estimate: N * central difference of u^N in atom i, step
// h*(1+|x^i|) per atom.  Evaluated on the support of mu only.
LionsDerivativeEstimate lions_derivative(const MeasureFunctional& U,
                                         const EmpiricalMeasure& mu, double h);

// Diagonal second-order blocks d_v[dU/dmu](x^i) via N * second central
// differences (mixed stencils for the off-diagonal entries).
LionsDerivativeEstimate lions_second_diag(const MeasureFunctional& U,
                                          const EmpiricalMeasure& mu, double h);

// Discrete Ito flow: states on a time grid plus the per-particle drift and
// diffusion samples that generated them.
struct ParticleFlow {
  TimeGrid grid;
  std::vector<Mat> states;                 // K+1 entries, N x d
  std::vector<Mat> drifts;                 // K entries, N x d, b at t_k
  std::vector<std::vector<Mat>> diffusions;  // K entries, per particle d x d

  int particles() const { return static_cast<int>(states.front().rows()); }
  int dim() const { return static_cast<int>(states.front().cols()); }
  EmpiricalMeasure measure_at(int k) const { return EmpiricalMeasure(states.at(k)); }
};

// | U(mu_T) - U(mu_0) - sum_k dt ( E-hat[dU/dmu . b] + 1/2 E-hat[Tr(d_v dU/dmu a)] ) |
// with both derivatives taken from the estimators above and a = sigma sigma^T.
double chain_rule_residual(const MeasureFunctional& U, const ParticleFlow& flow,
                           double h);

// Functional of (t, x, mu), scalar-valued.
struct TimeSpaceMeasureFunctional {
  std::function<double(double t, const Vec& x, const EmpiricalMeasure& mu)> eval;
  std::string label;
};

// Residual of the full Ito expansion of V(t, X_t, [X_t]) along the flow.
// With observed_path < 0 the expansion is averaged across the ensemble so
// the Brownian integral contributes only its O(N^-1/2) mean; with a valid
// path index the expansion is checked pathwise, the martingale part summed
// explicitly from the flow increments.
double full_ito_residual(const TimeSpaceMeasureFunctional& V,
                         const ParticleFlow& flow, int observed_path, double h);

// Test flows, reproducible from the seed via counter-based streams.
ParticleFlow brownian_flow(const Mat& initial_atoms, const TimeGrid& grid,
                           std::uint64_t seed);
// dX = -theta X dt + sigma dW
ParticleFlow ornstein_uhlenbeck_flow(const Mat& initial_atoms, const TimeGrid& grid,
                                     double theta, double sigma, std::uint64_t seed);

}  // namespace mkv
