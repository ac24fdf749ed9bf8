#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mkv/basis.hpp"
#include "mkv/field.hpp"
#include "mkv/grid.hpp"
#include "mkv/measure.hpp"
#include "mkv/scenario.hpp"

namespace mkv {

// Initial law of the forward component.  Draws are counter-based, so the
// same (spec, N, seed) always reproduces the same atoms.
struct InitialLawSpec {
  enum class Kind { kGaussian, kUniform, kDirac, kAtoms };
  Kind kind = Kind::kGaussian;
  Vec mean, std_dev;  // gaussian
  Vec lo, hi;         // uniform
  Vec point;          // dirac
  Mat atoms;          // explicit atoms (used by restarts)

  static InitialLawSpec gaussian(const Vec& mean, const Vec& sd);
  static InitialLawSpec uniform(const Vec& lo, const Vec& hi);
  static InitialLawSpec dirac(const Vec& point);
  static InitialLawSpec from_atoms(Mat atoms);

  int dim() const;
  // Antithetic pairing mirrors the second half of the cloud, which pins the
  // empirical mean of gaussian/uniform draws at the spec value.
  Mat draw(int n, std::uint64_t seed, bool antithetic) const;
};

struct SolverParams {
  int particles = 1024;      // N
  int steps = 32;            // K of the full horizon
  int basis_degree = 1;
  bool mean_regressor = true;  // attach the measure-response channel
  int picard_max = 50;
  double tol_law = 1e-3;
  double damping = 1.0;        // law-flow update factor, auto-halved on oscillation
  double delta_min = 0.0;      // block-length floor; 0 -> 4 * dt
  double block_horizon = 0.0;  // initial block length; 0 -> whole horizon
  bool antithetic = true;
  double mean_shift = 1e-2;    // initial-law shift for the response solves
  std::uint64_t seed = 1;
};

// N particle paths of (X, Y, Z) on a grid.  Y rows hold the one-step
// conditional-expectation targets (the raw Monte Carlo samples of the
// backward component); the terminal row is g evaluated exactly on the final
// atoms before any regression smoothing.
struct PathEnsemble {
  TimeGrid grid;
  std::vector<Mat> X;   // K+1 entries, N x d
  std::vector<Mat> Y;   // K+1 entries, N x m
  std::vector<Mat> Z;   // K entries, N x (m*d), row-major per particle
  std::vector<Mat> dW;  // K entries, N x d
  std::uint64_t seed = 0;

  int particles() const { return static_cast<int>(X.front().rows()); }
  int dim_x() const { return static_cast<int>(X.front().cols()); }
  int dim_y() const { return static_cast<int>(Y.front().cols()); }
};

// Per-node regression representation of the decoupling field
//   U(t_k, x, mu) ~ coeffs_k' phi(x) + sum_l (mean(mu) - mean_k)_l D_{k,l}' phi(x).
// The x-part comes from the least-squares Monte Carlo backward pass; the
// measure response D (one channel per mean coordinate) comes from coupled
// re-solves with shifted initial laws, i.e. a finite-difference tangent.
// It is exact for fields that act on mu through its mean, which covers the
// built-in scenarios; richer measure dependence is out of its reach and
// queries at far-away measures extrapolate linearly.
struct DecouplingField {
  TimeGrid grid;
  PolyBasis basis{1, 1};
  int dim_y = 1;
  bool has_mean_channel = false;

  std::vector<Mat> coeffs;                     // K+1 entries, P x m
  std::vector<std::vector<Mat>> mean_channel;  // K+1 entries, d blocks of P x m
  std::vector<Mat> mu_atoms;                   // K+1 X-marginal snapshots, N x d
  std::vector<Vec> mean_x;                     // K+1 snapshot means

  std::vector<double> fit_residual;    // K+1, RMS regression residual per node
  std::vector<double> z_consistency;   // K, RMS |Z_reg - dxU sigma| per step
  std::vector<double> law_gaps;        // Picard gap per outer iteration
  double final_gap = 0.0;
  int picard_iterations = 0;
  std::string basis_descriptor;
  std::uint64_t seed = 0;

  int dim_x() const { return basis.dim(); }
  EmpiricalMeasure measure_at(int k) const { return EmpiricalMeasure(mu_atoms.at(k)); }

  Vec value_at_node(int k, const Vec& x) const;
  Mat grad_x_at_node(int k, const Vec& x) const;           // m x d
  Mat hess_x_at_node(int k, const Vec& x, int comp) const;  // d x d
  // Full query with the measure response and linear interpolation in t.
  Vec value(double t, const Vec& x, const EmpiricalMeasure& mu) const;
};

// Queryable wrapper used by the master-equation evaluators.
class SolverFieldAdapter : public MeasureField {
 public:
  explicit SolverFieldAdapter(const DecouplingField& f) : field_(f) {}
  int dim_x() const override { return field_.dim_x(); }
  int dim_y() const override { return field_.dim_y; }
  double t_min() const override { return field_.grid.t0; }
  double t_max() const override { return field_.grid.T; }
  Vec value(double t, const Vec& x, const EmpiricalMeasure& mu) const override {
    return field_.value(t, x, mu);
  }

 private:
  const DecouplingField& field_;
};

// Law-flow fixed point + backward least-squares regression on one grid.
// The outer loop freezes the joint (X,Y) law flow, the inner pass simulates
// forward with the current field and regresses backward; iterates until the
// sup-over-nodes law gap drops below params.tol_law.
std::pair<PathEnsemble, DecouplingField> solve_small_time(
    const Coefficients& c, const InitialLawSpec& init, const TimeGrid& grid,
    const SolverParams& params);

// Backward block recursion for horizons beyond the contraction regime: each
// block is solved by solve_small_time with the previous block's field as its
// terminal condition, and the block length is halved on convergence failure
// down to the delta_min floor.
DecouplingField solve_long_horizon(const Coefficients& c,
                                   const InitialLawSpec& init, double t0,
                                   double T, const SolverParams& params);

// max over nodes of the ensemble RMS gap between the stored backward samples
// and the field evaluated along the flow.
double decoupling_residual(const PathEnsemble& ens, const DecouplingField& U);

// Solve on [t0,T], restart at node s from the computed flow snapshot, and
// compare the two runs on [s, T]: sup W2 between the X-law flows plus the
// sup RMS field discrepancy on the restart atoms.
double flow_consistency(const Coefficients& c, const InitialLawSpec& init,
                        const TimeGrid& grid, const SolverParams& params,
                        int s_node);

// Sampled weak Lipschitz constant of xi -> Y_t0 over coupled ensembles
// (identical Brownian draws and coupled initial draws).
double weak_lipschitz_estimate(
    const Coefficients& c, const TimeGrid& grid, const SolverParams& params,
    const std::vector<std::pair<InitialLawSpec, InitialLawSpec>>& pairs);

}  // namespace mkv
