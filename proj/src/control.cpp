#include "mkv/control.hpp"

#include <cmath>
#include <memory>

#include "mkv/lions.hpp"
#include "mkv/rng.hpp"

namespace mkv {

Vec MfgSpec::drift(const Vec& x, const EmpiricalMeasure& mu, const Vec& alpha) const {
  Vec out = b1 * x + b2 * alpha;
  if (b_mean.size() > 0 && !b_mean.isZero(0.0)) out += b_mean * mu.mean();
  return out;
}

double MfgSpec::running_cost(const Vec& x, const EmpiricalMeasure& mu,
                             const Vec& alpha) const {
  return F0(x, mu) + F1(x, alpha);
}

void MfgSpec::validate() const {
  if (d < 1 || k < 1) throw InvalidInput("MfgSpec: need d, k >= 1");
  if (b1.rows() != d || b1.cols() != d) throw InvalidInput("MfgSpec: b1 must be d x d");
  if (b2.rows() != d || b2.cols() != k) throw InvalidInput("MfgSpec: b2 must be d x k");
  if (sigma.rows() != d || sigma.cols() != d)
    throw InvalidInput("MfgSpec: sigma must be d x d");
  if (b_mean.size() > 0 && (b_mean.rows() != d || b_mean.cols() != d))
    throw InvalidInput("MfgSpec: b_mean must be d x d");
  if (!F0 || !F1 || !G) throw InvalidInput("MfgSpec: F0, F1, G are required");
  if (R_quad.size() > 0 && (R_quad.rows() != k || R_quad.cols() != k))
    throw InvalidInput("MfgSpec: R_quad must be k x k");
}

double hamiltonian(const MfgSpec& spec, const Vec& x, const EmpiricalMeasure& mu,
                   const Vec& y, const Vec& alpha) {
  if (x.size() != spec.d || y.size() != spec.d || alpha.size() != spec.k)
    throw InvalidInput("hamiltonian: dimension mismatch");
  return y.dot(spec.drift(x, mu, alpha)) + spec.running_cost(x, mu, alpha);
}

namespace {

Vec alpha_gradient(const MfgSpec& spec, const Vec& x, const Vec& alpha) {
  if (spec.da_F1) return spec.da_F1(x, alpha);
  if (spec.R_quad.size() > 0) {
    Vec g = spec.R_quad * alpha;
    if (spec.lin_alpha.size() > 0) g += spec.lin_alpha;
    return g;
  }
  const double h = 1e-6 * (1.0 + alpha.norm());
  Vec g(spec.k);
  for (int c = 0; c < spec.k; ++c) {
    Vec up = alpha, down = alpha;
    up[c] += h;
    down[c] -= h;
    g[c] = (spec.F1(x, up) - spec.F1(x, down)) / (2.0 * h);
  }
  return g;
}

}  // namespace

Vec minimize_hamiltonian(const MfgSpec& spec, const Vec& x,
                         const EmpiricalMeasure& mu, const Vec& y) {
  (void)mu;  // da F1 does not depend on the measure under the standing structure
  const Vec rhs = spec.b2.transpose() * y;

  Vec alpha;
  if (spec.R_quad.size() > 0) {
    Vec b = rhs;
    if (spec.lin_alpha.size() > 0) b += spec.lin_alpha;
    Eigen::LDLT<Mat> ldlt(spec.R_quad);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      throw InvalidInput("minimize_hamiltonian: singular or indefinite R");
    alpha = -ldlt.solve(b);
  } else {
    // damped Newton on the first-order condition b2'y + daF1(x, a) = 0
    alpha = Vec::Zero(spec.k);
    Vec foc = rhs + alpha_gradient(spec, x, alpha);
    bool done = foc.norm() < spec.newton_tol;
    for (int it = 0; it < 100 && !done; ++it) {
      const double h = 1e-6 * (1.0 + alpha.norm());
      Mat jac(spec.k, spec.k);
      for (int c = 0; c < spec.k; ++c) {
        Vec up = alpha, down = alpha;
        up[c] += h;
        down[c] -= h;
        jac.col(c) =
            (alpha_gradient(spec, x, up) - alpha_gradient(spec, x, down)) / (2.0 * h);
      }
      Eigen::FullPivLU<Mat> lu(jac);
      if (!lu.isInvertible())
        throw InvalidInput("minimize_hamiltonian: singular control Hessian");
      const Vec step = lu.solve(-foc);
      double scale = 1.0;
      while (scale > 1e-9) {
        const Vec cand = alpha + scale * step;
        const Vec cand_foc = rhs + alpha_gradient(spec, x, cand);
        if (cand_foc.norm() <= (1.0 - 0.5 * scale) * foc.norm()) {
          alpha = cand;
          foc = cand_foc;
          break;
        }
        scale *= 0.5;
      }
      if (scale <= 1e-9)
        throw ConvergenceFailure("minimize_hamiltonian: Newton stalled",
                                 foc.norm(), foc.norm());
      done = foc.norm() < spec.newton_tol;
    }
    if (!done)
      throw ConvergenceFailure("minimize_hamiltonian: Newton did not converge",
                               std::nan(""), foc.norm());
  }

  // first-order condition holds on every returned control
  const double check = (rhs + alpha_gradient(spec, x, alpha)).norm();
  if (!(check < std::max(spec.newton_tol, 1e-8 * (1.0 + rhs.norm()))))
    throw NumericDomainError("minimize_hamiltonian: optimality check failed");
  return alpha;
}

namespace {

Vec dx_F0_eval(const MfgSpec& spec, const Vec& x, const EmpiricalMeasure& mu) {
  if (spec.dx_F0) return spec.dx_F0(x, mu);
  const double h = 1e-6 * (1.0 + x.norm());
  Vec g(spec.d);
  for (int c = 0; c < spec.d; ++c) {
    Vec up = x, down = x;
    up[c] += h;
    down[c] -= h;
    g[c] = (spec.F0(up, mu) - spec.F0(down, mu)) / (2.0 * h);
  }
  return g;
}

Vec dx_F1_eval(const MfgSpec& spec, const Vec& x, const Vec& alpha) {
  if (spec.dx_F1) return spec.dx_F1(x, alpha);
  const double h = 1e-6 * (1.0 + x.norm());
  Vec g(spec.d);
  for (int c = 0; c < spec.d; ++c) {
    Vec up = x, down = x;
    up[c] += h;
    down[c] -= h;
    g[c] = (spec.F1(up, alpha) - spec.F1(down, alpha)) / (2.0 * h);
  }
  return g;
}

Vec dx_G_eval(const MfgSpec& spec, const Vec& x, const EmpiricalMeasure& mu) {
  if (spec.dx_G) return spec.dx_G(x, mu);
  const double h = 1e-6 * (1.0 + x.norm());
  Vec g(spec.d);
  for (int c = 0; c < spec.d; ++c) {
    Vec up = x, down = x;
    up[c] += h;
    down[c] -= h;
    g[c] = (spec.G(up, mu) - spec.G(down, mu)) / (2.0 * h);
  }
  return g;
}

// X-marginal of the joint (X, Y) law, memoized on the measure id: the solver
// evaluates the coefficients for every particle against the same measure.
struct MarginalCache {
  std::uint64_t key = 0;
  std::unique_ptr<EmpiricalMeasure> marginal;

  const EmpiricalMeasure& get(const EmpiricalMeasure& nu, int d) {
    if (!marginal || key != nu.id()) {
      marginal = std::make_unique<EmpiricalMeasure>(nu.atoms().leftCols(d));
      key = nu.id();
    }
    return *marginal;
  }
};

void check_sampled_convexity(const MfgSpec& spec) {
  // H' and H have identical increments under the constant-sigma structure.
  SeededSampler sampler(7, 1.0, 3);
  std::vector<ConvexitySample> samples;
  for (int i = 0; i < 8; ++i) {
    ConvexitySample s{sampler.point(spec.d), sampler.measure(spec.d),
                      sampler.point(spec.d), Mat::Zero(spec.d, spec.d),
                      sampler.point(spec.k), sampler.point(spec.d),
                      sampler.point(spec.k)};
    samples.push_back(std::move(s));
  }
  const auto H = [&spec](const Vec& x, const EmpiricalMeasure& mu, const Vec& y,
                         const Mat&, const Vec& alpha) {
    return hamiltonian(spec, x, mu, y, alpha);
  };
  const double lambda = check_convexity(H, samples);
  if (!(lambda > 0.0))
    throw InvalidInput(
        "build_pontryagin: sampled convexity of the Hamiltonian is not "
        "positive (lambda estimate " +
        std::to_string(lambda) + ")");
}

}  // namespace

Coefficients build_pontryagin_mfg(const MfgSpec& spec_in) {
  spec_in.validate();
  if (spec_in.b_mean.size() > 0 && !spec_in.b_mean.isZero(0.0))
    throw InvalidInput(
        "build_pontryagin_mfg: the game case has no mean coupling in the drift");
  check_sampled_convexity(spec_in);

  auto spec = std::make_shared<const MfgSpec>(spec_in);
  auto cache_f = std::make_shared<MarginalCache>();

  Coefficients c;
  c.dim_x = spec->d;
  c.dim_y = spec->d;  // the backward component is the adjoint
  c.label = spec->label.empty() ? "pontryagin-mfg" : spec->label;
  c.sigma_bound = spec->sigma.norm();

  c.b = [spec](const Vec& x, const Vec& y, const Mat&, const EmpiricalMeasure& nu) {
    const Vec alpha = minimize_hamiltonian(*spec, x, nu, y);
    return Vec(spec->b1 * x + spec->b2 * alpha);
  };
  c.sigma = [spec](const Vec&, const Vec&, const EmpiricalMeasure&) {
    return spec->sigma;
  };
  c.f = [spec, cache_f](const Vec& x, const Vec& y, const Mat&,
                        const EmpiricalMeasure& nu) {
    const EmpiricalMeasure& mu = cache_f->get(nu, spec->d);
    const Vec alpha = minimize_hamiltonian(*spec, x, mu, y);
    return Vec(spec->b1.transpose() * y + dx_F0_eval(*spec, x, mu) +
               dx_F1_eval(*spec, x, alpha));
  };
  c.g = [spec](const Vec& x, const EmpiricalMeasure& mu) {
    return dx_G_eval(*spec, x, mu);
  };
  return c;
}

Coefficients build_pontryagin_mkv(const MkvControlSpec& spec_in) {
  spec_in.validate();
  check_sampled_convexity(spec_in);

  auto spec = std::make_shared<const MkvControlSpec>(spec_in);
  auto cache_f = std::make_shared<MarginalCache>();

  const bool has_mean_drift =
      spec->b_mean.size() > 0 && !spec->b_mean.isZero(0.0);
  const bool has_dmu_f = static_cast<bool>(spec->dmu_F);
  const bool has_dmu_g = static_cast<bool>(spec->dmu_G);

  Coefficients c;
  c.dim_x = spec->d;
  c.dim_y = spec->d;
  c.label = spec->label.empty() ? "pontryagin-mkv" : spec->label;
  c.sigma_bound = spec->sigma.norm();

  c.b = [spec, has_mean_drift](const Vec& x, const Vec& y, const Mat&,
                               const EmpiricalMeasure& nu) {
    const Vec alpha = minimize_hamiltonian(*spec, x, nu, y);
    Vec out = spec->b1 * x + spec->b2 * alpha;
    if (has_mean_drift) out += spec->b_mean * nu.mean().head(spec->d);
    return out;
  };
  c.sigma = [spec](const Vec&, const Vec&, const EmpiricalMeasure&) {
    return spec->sigma;
  };
  c.f = [spec, cache_f, has_mean_drift, has_dmu_f](
            const Vec& x, const Vec& y, const Mat&, const EmpiricalMeasure& nu) {
    const EmpiricalMeasure& mu = cache_f->get(nu, spec->d);
    const Vec alpha = minimize_hamiltonian(*spec, x, mu, y);
    Vec out = spec->b1.transpose() * y + dx_F0_eval(*spec, x, mu) +
              dx_F1_eval(*spec, x, alpha);
    if (has_mean_drift) out += spec->b_mean.transpose() * nu.mean().tail(spec->d);
    if (has_dmu_f) {
      // averaged Lions derivative of the Hamiltonian cost over the lifted law
      Vec avg = Vec::Zero(spec->d);
      const int n = nu.size();
      for (int j = 0; j < n; ++j) {
        const Vec xj = nu.atom(j).head(spec->d);
        const Vec yj = nu.atom(j).tail(spec->d);
        const Vec aj = minimize_hamiltonian(*spec, xj, mu, yj);
        avg += spec->dmu_F(xj, mu, aj, x).transpose();
      }
      out += avg / n;
    }
    return out;
  };
  c.g = [spec, has_dmu_g](const Vec& x, const EmpiricalMeasure& mu) {
    Vec out = dx_G_eval(*spec, x, mu);
    if (has_dmu_g) {
      Vec avg = Vec::Zero(spec->d);
      const int n = mu.size();
      for (int j = 0; j < n; ++j)
        avg += spec->dmu_G(mu.atom(j), mu, x).transpose();
      out += avg / n;
    }
    return out;
  };
  return c;
}

McEstimate value_function(const MfgSpec& spec, const MeasureField& U_field,
                          double t, const Vec& x, const EmpiricalMeasure& mu,
                          const TimeGrid& grid, const McParams& mc) {
  if (std::abs(grid.t0 - t) > 1e-12)
    throw InvalidInput("value_function: grid must start at the query time");
  if (mu.dim() != spec.d || x.size() != spec.d)
    throw InvalidInput("value_function: dimension mismatch");
  const int n = mu.size();
  const int M = mc.tagged;
  const int K = grid.K;
  const double dt = grid.dt();
  const double sdt = std::sqrt(dt);
  const int d = spec.d;

  Mat ens = mu.atoms();
  Mat tag(M, d);
  tag.rowwise() = x.transpose();
  std::vector<double> cost(M, 0.0);

  for (int k = 0; k <= K; ++k) {
    const double tk = grid.node(k);
    const EmpiricalMeasure mu_k{ens};
    if (k == K) {
      for (int j = 0; j < M; ++j)
        cost[j] += spec.G(tag.row(j).transpose(), mu_k);
      break;
    }
    Mat ens_next(n, d), tag_next(M, d);
    for (int i = 0; i < n; ++i) {
      const Vec xi = ens.row(i).transpose();
      const Vec alpha =
          minimize_hamiltonian(spec, xi, mu_k, U_field.value(tk, xi, mu_k));
      Vec noise(d);
      for (int c = 0; c < d; ++c)
        noise[c] = sdt * rng::gaussian(mc.seed, rng::Stream::kBrownian, i,
                                       static_cast<std::uint64_t>(k) * d + c);
      ens_next.row(i) =
          (xi + spec.drift(xi, mu_k, alpha) * dt + spec.sigma * noise).transpose();
    }
    for (int j = 0; j < M; ++j) {
      const Vec xj = tag.row(j).transpose();
      const Vec alpha =
          minimize_hamiltonian(spec, xj, mu_k, U_field.value(tk, xj, mu_k));
      cost[j] += spec.running_cost(xj, mu_k, alpha) * dt;
      Vec noise(d);
      for (int c = 0; c < d; ++c)
        noise[c] = sdt * rng::gaussian(mc.seed, rng::Stream::kTagged, j,
                                       static_cast<std::uint64_t>(k) * d + c);
      tag_next.row(j) =
          (xj + spec.drift(xj, mu_k, alpha) * dt + spec.sigma * noise).transpose();
    }
    ens = std::move(ens_next);
    tag = std::move(tag_next);
  }

  double mean = 0.0;
  for (double v : cost) mean += v;
  mean /= M;
  double var = 0.0;
  for (double v : cost) var += (v - mean) * (v - mean);
  var /= std::max(1, M - 1);
  return McEstimate{mean, std::sqrt(var / M)};
}

double identification_check(ControlKind kind, const MeasureField& V_field,
                            const MeasureField& U_field, double t, const Vec& x,
                            const EmpiricalMeasure& mu, double h_x, double h_mu) {
  if (V_field.dim_y() != 1)
    throw InvalidInput("identification_check: V must be scalar-valued");
  const int d = mu.dim();

  const double h = h_x * (1.0 + x.norm());
  Vec grad_v(d);
  for (int c = 0; c < d; ++c) {
    Vec up = x, down = x;
    up[c] += h;
    down[c] -= h;
    grad_v[c] = (V_field.value(t, up, mu)[0] - V_field.value(t, down, mu)[0]) /
                (2.0 * h);
  }

  Vec rhs = grad_v;
  if (kind == ControlKind::kMkv) {
    // int dmuV(t, x', mu)(x) dmu(x') as the Lions derivative of the averaged
    // functional mu' -> (1/N) sum_i V(t, a_i, mu'), a_i frozen at mu's atoms
    const Mat frozen = mu.atoms();
    MeasureFunctional averaged;
    averaged.label = "averaged-value";
    averaged.eval = [&V_field, &frozen, t](const EmpiricalMeasure& q) {
      double acc = 0.0;
      for (int i = 0; i < frozen.rows(); ++i)
        acc += V_field.value(t, frozen.row(i).transpose(), q)[0];
      return acc / frozen.rows();
    };
    int at = -1;
    for (int i = 0; i < mu.size(); ++i)
      if ((mu.atom(i) - x).norm() < 1e-9 * (1.0 + x.norm())) {
        at = i;
        break;
      }
    if (at < 0)
      throw NumericDomainError(
          "identification_check: the mkv form needs x on the support of mu");
    const LionsDerivativeEstimate est = lions_derivative(averaged, mu, h_mu);
    rhs += est.gradients[at].transpose();
  }

  return (U_field.value(t, x, mu) - rhs).norm();
}

EmpiricalMeasure FlowMeasures::at(double t) const {
  if (!grid.contains(t, 1e-9 * (grid.T - grid.t0)))
    throw InvalidInput("FlowMeasures: time outside the grid");
  const int k = grid.cell(t);
  const double w = (t - grid.node(k)) / grid.dt();
  if (w < 1e-14) return EmpiricalMeasure(atoms.at(k));
  return EmpiricalMeasure((1.0 - w) * atoms.at(k) + w * atoms.at(k + 1));
}

double hjb_residual(const MfgSpec& spec, const MeasureField& V_field,
                    const FlowMeasures& flow, double t, const Vec& x,
                    const StencilSpec& st) {
  if (V_field.dim_y() != 1) throw InvalidInput("hjb_residual: V must be scalar");
  const int d = spec.d;
  auto W = [&](double s, const Vec& p) {
    return V_field.value(s, p, flow.at(s))[0];
  };

  const double ht = st.h_t * (1.0 + std::abs(t));
  double dt_term;
  if (t - ht < flow.grid.t0)
    dt_term = (W(t + ht, x) - W(t, x)) / ht;
  else if (t + ht > flow.grid.T)
    dt_term = (W(t, x) - W(t - ht, x)) / ht;
  else
    dt_term = (W(t + ht, x) - W(t - ht, x)) / (2.0 * ht);

  const double hx = st.h_x * (1.0 + x.norm());
  Vec grad(d);
  Mat hess(d, d);
  const double center = W(t, x);
  for (int a = 0; a < d; ++a) {
    Vec up = x, down = x;
    up[a] += hx;
    down[a] -= hx;
    const double fu = W(t, up), fd = W(t, down);
    grad[a] = (fu - fd) / (2.0 * hx);
    hess(a, a) = (fu - 2.0 * center + fd) / (hx * hx);
    for (int b = a + 1; b < d; ++b) {
      Vec pp = x, pm = x, mp = x, mm = x;
      pp[a] += hx; pp[b] += hx;
      pm[a] += hx; pm[b] -= hx;
      mp[a] -= hx; mp[b] += hx;
      mm[a] -= hx; mm[b] -= hx;
      const double v =
          (W(t, pp) - W(t, pm) - W(t, mp) + W(t, mm)) / (4.0 * hx * hx);
      hess(a, b) = v;
      hess(b, a) = v;
    }
  }

  const EmpiricalMeasure mu_t = flow.at(t);
  const Vec alpha = minimize_hamiltonian(spec, x, mu_t, grad);
  const Mat a_mat = spec.sigma * spec.sigma.transpose();
  const double res = dt_term + grad.dot(spec.drift(x, mu_t, alpha)) +
                     0.5 * (hess * a_mat).trace() +
                     spec.running_cost(x, mu_t, alpha);
  return std::abs(res);
}

}  // namespace mkv
