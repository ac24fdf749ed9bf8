#include "mkv/fbsde.hpp"

#include <cmath>
#include <memory>

#include "mkv/rng.hpp"

namespace mkv {

// ---------------------------------------------------------------------------
// initial laws

InitialLawSpec InitialLawSpec::gaussian(const Vec& mean, const Vec& sd) {
  if (mean.size() != sd.size()) throw InvalidInput("init gaussian: size mismatch");
  InitialLawSpec s;
  s.kind = Kind::kGaussian;
  s.mean = mean;
  s.std_dev = sd;
  return s;
}

InitialLawSpec InitialLawSpec::uniform(const Vec& lo, const Vec& hi) {
  if (lo.size() != hi.size()) throw InvalidInput("init uniform: size mismatch");
  InitialLawSpec s;
  s.kind = Kind::kUniform;
  s.lo = lo;
  s.hi = hi;
  return s;
}

InitialLawSpec InitialLawSpec::dirac(const Vec& point) {
  InitialLawSpec s;
  s.kind = Kind::kDirac;
  s.point = point;
  return s;
}

InitialLawSpec InitialLawSpec::from_atoms(Mat atoms) {
  InitialLawSpec s;
  s.kind = Kind::kAtoms;
  s.atoms = std::move(atoms);
  return s;
}

int InitialLawSpec::dim() const {
  switch (kind) {
    case Kind::kGaussian: return static_cast<int>(mean.size());
    case Kind::kUniform: return static_cast<int>(lo.size());
    case Kind::kDirac: return static_cast<int>(point.size());
    case Kind::kAtoms: return static_cast<int>(atoms.cols());
  }
  return 0;
}

Mat InitialLawSpec::draw(int n, std::uint64_t seed, bool antithetic) const {
  const int d = dim();
  if (kind == Kind::kAtoms) {
    if (n != atoms.rows())
      throw InvalidInput("init atoms: particle count does not match atom count");
    return atoms;
  }
  if (kind == Kind::kDirac) {
    Mat out(n, d);
    out.rowwise() = point.transpose();
    return out;
  }
  if (antithetic && n % 2 != 0)
    throw InvalidInput("init draw: antithetic pairing needs an even particle count");

  Mat out(n, d);
  const int n_draw = antithetic ? n / 2 : n;
  for (int i = 0; i < n_draw; ++i) {
    for (int c = 0; c < d; ++c) {
      if (kind == Kind::kGaussian) {
        out(i, c) = mean[c] + std_dev[c] * rng::gaussian(seed, rng::Stream::kInit, i, c);
      } else {
        const double u = rng::uniform(seed, rng::Stream::kInit, i, c);
        out(i, c) = lo[c] + (hi[c] - lo[c]) * u;
      }
    }
  }
  if (antithetic) {
    const RowVec center = kind == Kind::kGaussian
                              ? RowVec(mean.transpose())
                              : RowVec(0.5 * (lo + hi).transpose());
    for (int i = 0; i < n_draw; ++i)
      out.row(n_draw + i) = 2.0 * center - out.row(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// field evaluation

Vec DecouplingField::value_at_node(int k, const Vec& x) const {
  return coeffs.at(k).transpose() * basis.features(x);
}

Mat DecouplingField::grad_x_at_node(int k, const Vec& x) const {
  return coeffs.at(k).transpose() * basis.feature_jacobian(x);
}

Mat DecouplingField::hess_x_at_node(int k, const Vec& x, int comp) const {
  const int P = basis.size();
  Mat h = Mat::Zero(basis.dim(), basis.dim());
  for (int j = 0; j < P; ++j) h += coeffs.at(k)(j, comp) * basis.feature_hessian(j, x);
  return h;
}

namespace {

Vec node_value_with_measure(const DecouplingField& f, int k, const Vec& x,
                            const EmpiricalMeasure& mu) {
  Vec v = f.value_at_node(k, x);
  if (f.has_mean_channel) {
    const Vec dm = mu.mean() - f.mean_x.at(k);
    const Vec phi = f.basis.features(x);
    for (int l = 0; l < f.dim_x(); ++l)
      v += dm[l] * (f.mean_channel.at(k)[l].transpose() * phi);
  }
  return v;
}

}  // namespace

Vec DecouplingField::value(double t, const Vec& x, const EmpiricalMeasure& mu) const {
  if (!grid.contains(t, 1e-9 * (grid.T - grid.t0)))
    throw InvalidInput("DecouplingField: query time outside the grid");
  const int k = grid.cell(t);
  const double w = (t - grid.node(k)) / grid.dt();
  const Vec v0 = node_value_with_measure(*this, k, x, mu);
  if (w < 1e-14) return v0;
  const Vec v1 = node_value_with_measure(*this, k + 1, x, mu);
  return (1.0 - w) * v0 + w * v1;
}

// ---------------------------------------------------------------------------
// solver core

namespace {

using TerminalFn = std::function<Vec(const Vec&, const EmpiricalMeasure&)>;

struct StepFit {
  Mat coeffs;  // P x cols
  double rms = 0.0;
};

StepFit fit_least_squares(const Eigen::ColPivHouseholderQR<Mat>& qr, const Mat& Phi,
                          const Mat& targets) {
  if (qr.rank() < Phi.cols())
    throw IllConditionedBasis(
        "regression design matrix is rank deficient (basis too rich for the "
        "particle cloud)");
  StepFit fit;
  fit.coeffs = qr.solve(targets);
  fit.rms = std::sqrt((Phi * fit.coeffs - targets).squaredNorm() / Phi.rows());
  return fit;
}

struct CoreResult {
  PathEnsemble ens;
  DecouplingField field;
};

// One small-time solve: Picard iteration on the frozen joint law flow with a
// forward Euler-Maruyama pass and a backward one-step regression pass per
// iteration.  `step_offset` keys Brownian draws to global step indices so a
// restart or a block reuses the increments of the full-horizon run.
// `forced_iterations >= 0` disables the tolerance exit and runs exactly that
// many iterations (used to couple the measure-response re-solves with the
// base run).
CoreResult solve_core(const Coefficients& c, const Mat& atoms0,
                      const TimeGrid& grid, int step_offset,
                      const TerminalFn& g_term, const SolverParams& params,
                      int forced_iterations = -1) {
  const int N = static_cast<int>(atoms0.rows());
  const int d = c.dim_x;
  const int m = c.dim_y;
  const int K = grid.K;
  const double dt = grid.dt();
  const double sdt = std::sqrt(dt);
  if (atoms0.cols() != d) throw InvalidInput("solve: initial atoms have wrong dimension");

  // Brownian increments, antithetic in the particle index.
  std::vector<Mat> dW(K, Mat(N, d));
  const int n_draw = params.antithetic ? N / 2 : N;
  if (params.antithetic && N % 2 != 0)
    throw InvalidInput("solve: antithetic pairing needs an even particle count");
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < n_draw; ++i)
      for (int cc = 0; cc < d; ++cc)
        dW[k](i, cc) = sdt * rng::gaussian(
                                 params.seed, rng::Stream::kBrownian, i,
                                 static_cast<std::uint64_t>(step_offset + k) * d + cc);
    if (params.antithetic)
      for (int i = 0; i < n_draw; ++i) dW[k].row(n_draw + i) = -dW[k].row(i);
  }

  PolyBasis basis(d, params.basis_degree);
  const int P = basis.size();

  std::vector<Mat> laws;  // frozen joint (X,Y) atoms per node, N x (d+m)
  std::vector<Mat> X(K + 1), Yreg(K + 1), Yraw(K + 1), Z(K);
  std::vector<Mat> field_coeffs;  // previous iteration, P x m per node
  std::vector<double> gaps;
  std::vector<double> fit_res(K + 1, 0.0), z_cons(K, 0.0);
  double damping = params.damping;
  bool converged = false;
  int iterations = 0;

  const int max_iter = forced_iterations >= 0 ? forced_iterations : params.picard_max;

  for (int iter = 0; iter < std::max(1, max_iter); ++iter) {
    ++iterations;
    const bool have_field = !field_coeffs.empty();

    // --- forward pass
    X[0] = atoms0;
    std::vector<Mat> sigma_flat(K);  // per step, N x (d*d), reused in the step
    for (int k = 0; k < K; ++k) {
      std::optional<EmpiricalMeasure> frozen;
      if (!laws.empty()) {
        frozen.emplace(laws[k]);
      } else {
        Mat joint(N, d + m);
        joint.leftCols(d) = X[k];
        joint.rightCols(m).setZero();
        if (have_field)
          for (int i = 0; i < N; ++i)
            joint.row(i).tail(m) =
                (field_coeffs[k].transpose() * basis.features(X[k].row(i).transpose()))
                    .transpose();
        frozen.emplace(std::move(joint));
      }
      const EmpiricalMeasure& nu = *frozen;

      X[k + 1].resize(N, d);
      for (int i = 0; i < N; ++i) {
        const Vec xi = X[k].row(i).transpose();
        Vec yi = Vec::Zero(m);
        Mat grad = Mat::Zero(m, d);
        if (have_field) {
          const Vec phi = basis.features(xi);
          yi = field_coeffs[k].transpose() * phi;
          grad = field_coeffs[k].transpose() * basis.feature_jacobian(xi);
        }
        const Mat sig = c.sigma(xi, yi, nu);
        const Mat zi = grad * sig;
        const Vec drift = c.b(xi, yi, zi, nu);
        X[k + 1].row(i) = (xi + drift * dt).transpose() + dW[k].row(i) * sig.transpose();
      }
      if (!X[k + 1].allFinite() || X[k + 1].cwiseAbs().maxCoeff() > 1e10) {
        const double last = gaps.empty() ? std::nan("") : gaps.back();
        const double prev = gaps.size() > 1 ? gaps[gaps.size() - 2] : std::nan("");
        throw ConvergenceFailure(
            "solve: forward pass diverged (horizon too long for the Lipschitz "
            "constants?)",
            prev, last);
      }
    }

    // --- terminal condition (exact, before any smoothing)
    const EmpiricalMeasure muK{X[K]};
    Yraw[K].resize(N, m);
    for (int i = 0; i < N; ++i)
      Yraw[K].row(i) = g_term(X[K].row(i).transpose(), muK).transpose();
    Yreg[K] = Yraw[K];

    // --- backward regression sweep
    std::vector<EmpiricalMeasure> nu_hat;
    nu_hat.reserve(K + 1);
    for (int k = 0; k <= K; ++k) {
      if (!laws.empty()) {
        nu_hat.emplace_back(laws[k]);
      } else {
        Mat joint(N, d + m);
        joint.leftCols(d) = X[k];
        joint.rightCols(m) = k == K ? Yreg[K] : Mat::Zero(N, m);
        nu_hat.emplace_back(std::move(joint));
      }
    }

    std::vector<Mat> new_coeffs(K + 1);
    {
      // terminal fit: diagnostics + the gradient used for Z at the last step
      Mat PhiK(N, P);
      for (int i = 0; i < N; ++i)
        PhiK.row(i) = basis.features(X[K].row(i).transpose()).transpose();
      Eigen::ColPivHouseholderQR<Mat> qrK(PhiK);
      const StepFit termfit = fit_least_squares(qrK, PhiK, Yraw[K]);
      new_coeffs[K] = termfit.coeffs;
      fit_res[K] = termfit.rms;
    }

    // Z at the terminal node comes from the fitted terminal gradient (the
    // martingale-increment regression has no data there).
    Mat Znext(N, m * d);
    for (int i = 0; i < N; ++i) {
      const Vec xi = X[K].row(i).transpose();
      const Mat grad = new_coeffs[K].transpose() * basis.feature_jacobian(xi);
      const Mat sig = c.sigma(xi, Yreg[K].row(i).transpose(), nu_hat[K]);
      const Mat zi = grad * sig;
      for (int a = 0; a < m; ++a) Znext.row(i).segment(a * d, d) = zi.row(a);
    }

    for (int k = K - 1; k >= 0; --k) {
      Mat Phi(N, P);
      for (int i = 0; i < N; ++i)
        Phi.row(i) = basis.features(X[k].row(i).transpose()).transpose();
      Eigen::ColPivHouseholderQR<Mat> qr(Phi);

      // continuation value E_k[Y_{k+1}] for the driver argument at t_k
      const StepFit cont = fit_least_squares(qr, Phi, Yreg[k + 1]);
      const Mat Yhat = Phi * cont.coeffs;

      // martingale-increment regression for Z; subtracting the continuation
      // leaves only the increment part in the target (control variate)
      Mat Ztarget(N, m * d);
      for (int i = 0; i < N; ++i)
        for (int a = 0; a < m; ++a)
          Ztarget.row(i).segment(a * d, d) =
              (Yreg[k + 1](i, a) - Yhat(i, a)) * dW[k].row(i) / dt;
      const StepFit zfit = fit_least_squares(qr, Phi, Ztarget);
      Z[k] = Phi * zfit.coeffs;

      // trapezoidal driver within the explicit one-step scheme
      Mat target(N, m);
      for (int i = 0; i < N; ++i) {
        const Vec xi = X[k].row(i).transpose();
        const Vec xi1 = X[k + 1].row(i).transpose();
        Mat zk(m, d), zk1(m, d);
        for (int a = 0; a < m; ++a) {
          zk.row(a) = Z[k].row(i).segment(a * d, d);
          zk1.row(a) = Znext.row(i).segment(a * d, d);
        }
        const Vec fk = c.f(xi, Yhat.row(i).transpose(), zk, nu_hat[k]);
        const Vec fk1 = c.f(xi1, Yreg[k + 1].row(i).transpose(), zk1, nu_hat[k + 1]);
        target.row(i) =
            Yreg[k + 1].row(i) + 0.5 * dt * (fk + fk1).transpose();
      }

      const StepFit ufit = fit_least_squares(qr, Phi, target);
      new_coeffs[k] = ufit.coeffs;
      fit_res[k] = ufit.rms;
      Yraw[k] = target;
      Yreg[k] = Phi * ufit.coeffs;

      // Z-representation cross-check |Z_reg - dxU sigma|
      double zgap2 = 0.0;
      for (int i = 0; i < N; ++i) {
        const Vec xi = X[k].row(i).transpose();
        const Mat grad = new_coeffs[k].transpose() * basis.feature_jacobian(xi);
        const Mat sig = c.sigma(xi, Yreg[k].row(i).transpose(), nu_hat[k]);
        Mat zr(m, d);
        for (int a = 0; a < m; ++a) zr.row(a) = Z[k].row(i).segment(a * d, d);
        zgap2 += (zr - grad * sig).squaredNorm();
      }
      z_cons[k] = std::sqrt(zgap2 / N);
      Znext = Z[k];
    }

    // --- law-flow update and convergence check
    std::vector<Mat> new_laws(K + 1);
    for (int k = 0; k <= K; ++k) {
      new_laws[k].resize(N, d + m);
      new_laws[k].leftCols(d) = X[k];
      new_laws[k].rightCols(m) = Yreg[k];
    }
    field_coeffs = std::move(new_coeffs);

    if (laws.empty()) {
      laws = std::move(new_laws);
      continue;
    }
    double gap = 0.0;
    for (int k = 0; k <= K; ++k)
      gap = std::max(gap, std::sqrt((new_laws[k] - laws[k]).array().square().sum() / N));
    if (!gaps.empty() && gap > gaps.back() && damping > 1.0 / 16.0)
      damping = std::max(damping / 2.0, 1.0 / 16.0);
    gaps.push_back(gap);
    for (int k = 0; k <= K; ++k)
      laws[k] += damping * (new_laws[k] - laws[k]);

    if (forced_iterations < 0 && gap < params.tol_law) {
      converged = true;
      break;
    }
  }

  if (forced_iterations < 0 && !converged) {
    const double last = gaps.empty() ? std::nan("") : gaps.back();
    const double prev = gaps.size() > 1 ? gaps[gaps.size() - 2] : std::nan("");
    throw ConvergenceFailure(
        "solve: law-flow Picard iteration did not reach tol_law within "
        "picard_max (horizon too long for the Lipschitz constants?)",
        prev, last);
  }

  CoreResult out;
  out.ens.grid = grid;
  out.ens.X = std::move(X);
  out.ens.Y = std::move(Yraw);
  out.ens.Z = std::move(Z);
  out.ens.dW = std::move(dW);
  out.ens.seed = params.seed;

  out.field.grid = grid;
  out.field.basis = basis;
  out.field.dim_y = m;
  out.field.coeffs = std::move(field_coeffs);
  out.field.mu_atoms.resize(K + 1);
  out.field.mean_x.resize(K + 1);
  for (int k = 0; k <= K; ++k) {
    out.field.mu_atoms[k] = out.ens.X[k];
    out.field.mean_x[k] = out.ens.X[k].colwise().mean().transpose();
  }
  out.field.fit_residual = std::move(fit_res);
  out.field.z_consistency = std::move(z_cons);
  out.field.law_gaps = std::move(gaps);
  out.field.final_gap = out.field.law_gaps.empty() ? 0.0 : out.field.law_gaps.back();
  out.field.picard_iterations = iterations;
  out.field.basis_descriptor = basis.descriptor();
  out.field.seed = params.seed;
  return out;
}

// Measure-response channel by coupled re-solves from mean-shifted initial
// laws: a finite-difference replacement for the analytic tangent process.
// The re-solves run exactly as many Picard iterations as the base solve so
// the difference quotient compares like against like.
void attach_mean_channel(CoreResult& base, const Coefficients& c,
                         const Mat& atoms0, const TimeGrid& grid, int step_offset,
                         const TerminalFn& g_term, const SolverParams& params) {
  const int d = c.dim_x;
  const int K = grid.K;
  const int P = base.field.basis.size();
  const int m = c.dim_y;
  const double delta = params.mean_shift;
  const int iters = base.field.picard_iterations;

  std::vector<CoreResult> plus(d), minus(d);
  for (int l = 0; l < d; ++l) {
    Mat up = atoms0, down = atoms0;
    up.col(l).array() += delta;
    down.col(l).array() -= delta;
    plus[l] = solve_core(c, up, grid, step_offset, g_term, params, iters);
    minus[l] = solve_core(c, down, grid, step_offset, g_term, params, iters);
  }

  base.field.mean_channel.assign(K + 1, std::vector<Mat>(d, Mat::Zero(P, m)));
  for (int k = 0; k <= K; ++k) {
    Mat M(d, d);  // column l: mean displacement of the l-shifted pair at node k
    Mat dC(P * m, d);
    for (int l = 0; l < d; ++l) {
      M.col(l) = plus[l].field.mean_x[k] - minus[l].field.mean_x[k];
      const Mat diff = plus[l].field.coeffs[k] - minus[l].field.coeffs[k];
      dC.col(l) = Eigen::Map<const Vec>(diff.data(), P * m);
    }
    Eigen::FullPivLU<Mat> lu(M);
    if (!lu.isInvertible()) continue;  // flow insensitive to the shift: leave zero
    const Mat D = dC * lu.inverse();   // (P*m) x d, column j = response to mean_j
    for (int l = 0; l < d; ++l)
      base.field.mean_channel[k][l] =
          Eigen::Map<const Mat>(D.col(l).data(), P, m);
  }
  base.field.has_mean_channel = true;
}

CoreResult solve_block(const Coefficients& c, const Mat& atoms0,
                       const TimeGrid& grid, int step_offset,
                       const TerminalFn& g_term, const SolverParams& params) {
  CoreResult res = solve_core(c, atoms0, grid, step_offset, g_term, params);
  if (params.mean_regressor)
    attach_mean_channel(res, c, atoms0, grid, step_offset, g_term, params);
  return res;
}

}  // namespace

std::pair<PathEnsemble, DecouplingField> solve_small_time(
    const Coefficients& c, const InitialLawSpec& init, const TimeGrid& grid,
    const SolverParams& params) {
  if (init.dim() != c.dim_x)
    throw InvalidInput("solve_small_time: initial law dimension mismatch");
  const Mat atoms0 = init.draw(params.particles, params.seed, params.antithetic);
  TerminalFn g = [&c](const Vec& x, const EmpiricalMeasure& mu) { return c.g(x, mu); };
  CoreResult res = solve_block(c, atoms0, grid, 0, g, params);
  return {std::move(res.ens), std::move(res.field)};
}

namespace {

// Forward sweep over the whole horizon under a given concatenated field
// (zeros when absent); returns joint (X, Y) snapshots.
std::vector<Mat> global_forward(const Coefficients& c, const Mat& atoms0,
                                const TimeGrid& grid, const SolverParams& params,
                                const DecouplingField* field) {
  const int N = static_cast<int>(atoms0.rows());
  const int d = c.dim_x;
  const int m = c.dim_y;
  const int K = grid.K;
  const double dt = grid.dt();
  const double sdt = std::sqrt(dt);
  const int n_draw = params.antithetic ? N / 2 : N;

  std::vector<Mat> joint(K + 1);
  Mat Xk = atoms0;
  for (int k = 0; k <= K; ++k) {
    Mat jk(N, d + m);
    jk.leftCols(d) = Xk;
    for (int i = 0; i < N; ++i) {
      Vec yi = Vec::Zero(m);
      if (field) yi = field->value_at_node(k, Xk.row(i).transpose());
      jk.row(i).tail(m) = yi.transpose();
    }
    joint[k] = jk;
    if (k == K) break;

    const EmpiricalMeasure nu{jk};
    Mat Xn(N, d);
    Mat dWk(N, d);
    for (int i = 0; i < n_draw; ++i)
      for (int cc = 0; cc < d; ++cc)
        dWk(i, cc) = sdt * rng::gaussian(params.seed, rng::Stream::kBrownian, i,
                                         static_cast<std::uint64_t>(k) * d + cc);
    if (params.antithetic)
      for (int i = 0; i < n_draw; ++i) dWk.row(n_draw + i) = -dWk.row(i);
    for (int i = 0; i < N; ++i) {
      const Vec xi = Xk.row(i).transpose();
      const Vec yi = jk.row(i).tail(m).transpose();
      Mat grad = Mat::Zero(m, d);
      if (field) grad = field->grad_x_at_node(k, xi);
      const Mat sig = c.sigma(xi, yi, nu);
      const Vec drift = c.b(xi, yi, grad * sig, nu);
      Xn.row(i) = (xi + drift * dt).transpose() + dWk.row(i) * sig.transpose();
    }
    Xk = Xn;
  }
  return joint;
}

DecouplingField concatenate_blocks(const std::vector<CoreResult>& blocks,
                                   const std::vector<int>& starts,
                                   const TimeGrid& grid, const SolverParams& params) {
  // blocks[j] covers nodes [starts[j], starts[j+1]]; blocks are stored in
  // ascending time order here.
  DecouplingField out;
  out.grid = grid;
  out.basis = blocks.front().field.basis;
  out.dim_y = blocks.front().field.dim_y;
  out.has_mean_channel = blocks.front().field.has_mean_channel;
  out.basis_descriptor = blocks.front().field.basis_descriptor;
  out.seed = params.seed;
  const int K = grid.K;
  out.coeffs.resize(K + 1);
  out.mean_channel.resize(K + 1);
  out.mu_atoms.resize(K + 1);
  out.mean_x.resize(K + 1);
  out.fit_residual.resize(K + 1);
  out.z_consistency.resize(K);

  // block j fills nodes [starts[j], starts[j+1]); the last block also fills
  // the terminal node
  for (size_t j = 0; j < blocks.size(); ++j) {
    const DecouplingField& f = blocks[j].field;
    const int a = starts[j];
    const int b = starts[j + 1];
    const int last = j + 1 == blocks.size() ? b : b - 1;
    for (int k = a; k <= last; ++k) {
      const int local = k - a;
      out.coeffs[k] = f.coeffs[local];
      if (f.has_mean_channel) out.mean_channel[k] = f.mean_channel[local];
      out.mu_atoms[k] = f.mu_atoms[local];
      out.mean_x[k] = f.mean_x[local];
      out.fit_residual[k] = f.fit_residual[local];
      if (k < b) out.z_consistency[k] = f.z_consistency[local];
    }
  }
  return out;
}

}  // namespace

DecouplingField solve_long_horizon(const Coefficients& c,
                                   const InitialLawSpec& init, double t0,
                                   double T, const SolverParams& params) {
  const TimeGrid grid(t0, T, params.steps);
  const double dt = grid.dt();
  const double horizon = T - t0;

  if (params.block_horizon <= 0.0 || params.block_horizon >= horizon - 1e-12)
    return solve_small_time(c, init, grid, params).second;

  const double delta_min = params.delta_min > 0.0 ? params.delta_min : 4.0 * dt;
  const Mat atoms0 = init.draw(params.particles, params.seed, params.antithetic);
  TerminalFn g_raw = [&c](const Vec& x, const EmpiricalMeasure& mu) {
    return c.g(x, mu);
  };

  int block_steps =
      std::max(1, static_cast<int>(std::lround(params.block_horizon / dt)));

  while (true) {
    if (block_steps * dt < delta_min - 1e-12)
      throw BlowUpError(
          "solve_long_horizon: block length fell below delta_min without "
          "convergence (Lipschitz constant of the field appears to blow up)");
    try {
      // block boundaries laid from T backwards, per the backward recursion
      std::vector<int> starts{grid.K};
      for (int b = grid.K - block_steps; b > 0; b -= block_steps)
        starts.push_back(b);
      starts.push_back(0);
      std::reverse(starts.begin(), starts.end());
      const int n_blocks = static_cast<int>(starts.size()) - 1;

      if (n_blocks == 1) return solve_small_time(c, init, grid, params).second;

      std::vector<Mat> flow = global_forward(c, atoms0, grid, params, nullptr);
      std::optional<DecouplingField> concat;
      double gap = std::numeric_limits<double>::infinity();

      for (int outer = 0; outer < params.picard_max; ++outer) {
        std::vector<CoreResult> blocks(n_blocks);
        // keep the blocks' terminal functors alive while solving earlier ones
        std::vector<std::shared_ptr<DecouplingField>> terminal_fields;
        TerminalFn g_eff = g_raw;
        for (int j = n_blocks - 1; j >= 0; --j) {
          const int a = starts[j];
          const int b = starts[j + 1];
          const TimeGrid sub(grid.node(a), grid.node(b), b - a);
          const Mat init_atoms = flow[a].leftCols(c.dim_x);
          blocks[j] = solve_block(c, init_atoms, sub, a, g_eff, params);
          auto fptr = std::make_shared<DecouplingField>(blocks[j].field);
          terminal_fields.push_back(fptr);
          g_eff = [fptr](const Vec& x, const EmpiricalMeasure& mu) {
            return fptr->value(fptr->grid.t0, x, mu);
          };
        }
        concat = concatenate_blocks(blocks, starts, grid, params);
        std::vector<Mat> new_flow =
            global_forward(c, atoms0, grid, params, &*concat);
        gap = 0.0;
        for (int k = 0; k <= grid.K; ++k)
          gap = std::max(gap, std::sqrt((new_flow[k] - flow[k]).array().square().sum() /
                                        new_flow[k].rows()));
        flow = std::move(new_flow);
        concat->law_gaps.push_back(gap);
        concat->final_gap = gap;
        concat->picard_iterations = outer + 1;
        if (gap < params.tol_law) return *concat;
      }
      throw ConvergenceFailure(
          "solve_long_horizon: outer law iteration did not converge", gap, gap);
    } catch (const ConvergenceFailure&) {
      block_steps /= 2;
      if (block_steps < 1)
        throw BlowUpError(
            "solve_long_horizon: block length fell below delta_min without "
            "convergence (Lipschitz constant of the field appears to blow up)");
    }
  }
}

double decoupling_residual(const PathEnsemble& ens, const DecouplingField& U) {
  if (std::abs(ens.grid.t0 - U.grid.t0) > 1e-12 ||
      std::abs(ens.grid.T - U.grid.T) > 1e-12 || ens.grid.K != U.grid.K)
    throw InvalidInput("decoupling_residual: ensemble and field grids differ");
  const int N = ens.particles();
  double worst = 0.0;
  for (int k = 0; k <= ens.grid.K; ++k) {
    double acc = 0.0;
    for (int i = 0; i < N; ++i) {
      const Vec diff = ens.Y[k].row(i).transpose() -
                       U.value_at_node(k, ens.X[k].row(i).transpose());
      acc += diff.squaredNorm();
    }
    worst = std::max(worst, std::sqrt(acc / N));
  }
  return worst;
}

double flow_consistency(const Coefficients& c, const InitialLawSpec& init,
                        const TimeGrid& grid, const SolverParams& params,
                        int s_node) {
  if (s_node <= 0 || s_node >= grid.K)
    throw InvalidInput("flow_consistency: restart node must be interior");
  auto [ens1, field1] = solve_small_time(c, init, grid, params);

  const TimeGrid tail(grid.node(s_node), grid.T, grid.K - s_node);
  const Mat restart_atoms = ens1.X[s_node];
  TerminalFn g = [&c](const Vec& x, const EmpiricalMeasure& mu) { return c.g(x, mu); };
  SolverParams p2 = params;
  p2.mean_regressor = false;  // values are compared on atoms only
  CoreResult res2 = solve_core(c, restart_atoms, tail, s_node, g, p2);

  double w2_sup = 0.0;
  double field_sup = 0.0;
  const int N = ens1.particles();
  for (int k = s_node; k <= grid.K; ++k) {
    const int local = k - s_node;
    const EmpiricalMeasure mu1{ens1.X[k]};
    const EmpiricalMeasure mu2{res2.ens.X[local]};
    // exact by sorting in d = 1; synchronous upper bound otherwise
    w2_sup = std::max(w2_sup, c.dim_x == 1 ? w2_distance(mu1, mu2)
                                           : coupled_l2(mu1, mu2));
    double acc = 0.0;
    for (int i = 0; i < N; ++i) {
      const Vec x = res2.ens.X[local].row(i).transpose();
      acc += (field1.value_at_node(k, x) - res2.field.value_at_node(local, x))
                 .squaredNorm();
    }
    field_sup = std::max(field_sup, std::sqrt(acc / N));
  }
  return w2_sup + field_sup;
}

double weak_lipschitz_estimate(
    const Coefficients& c, const TimeGrid& grid, const SolverParams& params,
    const std::vector<std::pair<InitialLawSpec, InitialLawSpec>>& pairs) {
  if (pairs.empty()) throw InvalidInput("weak_lipschitz_estimate: no pairs");
  double worst = 0.0;
  for (const auto& [a, b] : pairs) {
    const Mat xi = a.draw(params.particles, params.seed, params.antithetic);
    const Mat xip = b.draw(params.particles, params.seed, params.antithetic);
    const double denom = std::sqrt((xi - xip).array().square().sum() / xi.rows());
    if (denom < 1e-14)
      throw InvalidInput("weak_lipschitz_estimate: coupled laws coincide atomwise");
    TerminalFn g = [&c](const Vec& x, const EmpiricalMeasure& mu) {
      return c.g(x, mu);
    };
    SolverParams p = params;
    p.mean_regressor = false;
    const CoreResult r1 = solve_core(c, xi, grid, 0, g, p);
    const CoreResult r2 = solve_core(c, xip, grid, 0, g, p);
    const int N = static_cast<int>(xi.rows());
    double num2 = 0.0;
    for (int i = 0; i < N; ++i) {
      const Vec y1 = r1.field.value_at_node(0, xi.row(i).transpose());
      const Vec y2 = r2.field.value_at_node(0, xip.row(i).transpose());
      num2 += (y1 - y2).squaredNorm();
    }
    worst = std::max(worst, std::sqrt(num2 / N) / denom);
  }
  return worst;
}

}  // namespace mkv
