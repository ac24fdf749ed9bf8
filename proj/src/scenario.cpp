#include "mkv/scenario.hpp"

#include <cmath>

#include "mkv/rng.hpp"

namespace mkv {

double SeededSampler::gaussian() {
  return rng::gaussian(seed_, rng::Stream::kSampler, 0, counter_++);
}

Vec SeededSampler::point(int dim) {
  Vec p(dim);
  for (int c = 0; c < dim; ++c) p[c] = scale_ * gaussian();
  return p;
}

EmpiricalMeasure SeededSampler::measure(int dim) {
  Mat atoms(measure_atoms_, dim);
  for (int i = 0; i < measure_atoms_; ++i)
    for (int c = 0; c < dim; ++c) atoms(i, c) = scale_ * gaussian();
  return EmpiricalMeasure(std::move(atoms));
}

namespace {

void require_finite(const char* name, double v) {
  if (!std::isfinite(v))
    throw NumericDomainError(std::string("estimate_lipschitz: coefficient '") +
                             name + "' returned non-finite value");
}

}  // namespace

HypothesisReport estimate_lipschitz(const Coefficients& c, SeededSampler sampler,
                                    int n) {
  if (n < 2) throw InvalidInput("estimate_lipschitz: need n >= 2");
  const int d = c.dim_x;
  const int m = c.dim_y;

  HypothesisReport report;
  report.seed = sampler.seed();
  report.sample_count = n;
  report.sigma_bound_declared = c.sigma_bound;
  double lb = 0.0, lsigma = 0.0, lf = 0.0, lg = 0.0, sig_sup = 0.0;

  for (int s = 0; s < n; ++s) {
    const Vec x = sampler.point(d), xp = sampler.point(d);
    const Vec y = sampler.point(m), yp = sampler.point(m);
    Mat z(m, d), zp(m, d);
    for (int a = 0; a < m; ++a)
      for (int bcol = 0; bcol < d; ++bcol) {
        z(a, bcol) = sampler.gaussian();
        zp(a, bcol) = sampler.gaussian();
      }
    const EmpiricalMeasure nu = sampler.measure(d + m);
    const EmpiricalMeasure nup = sampler.measure(d + m);
    const EmpiricalMeasure mu = sampler.measure(d);
    const EmpiricalMeasure mup = sampler.measure(d);

    const double denom_joint = (x - xp).norm() + (y - yp).norm() +
                               (z - zp).norm() + w2_distance(nu, nup);
    const double denom_term = (x - xp).norm() + w2_distance(mu, mup);

    if (denom_joint > 1e-12) {
      const double db = (c.b(x, y, z, nu) - c.b(xp, yp, zp, nup)).norm();
      const double ds = (c.sigma(x, y, nu) - c.sigma(xp, yp, nup)).norm();
      const double df = (c.f(x, y, z, nu) - c.f(xp, yp, zp, nup)).norm();
      require_finite("b", db);
      require_finite("sigma", ds);
      require_finite("f", df);
      lb = std::max(lb, db / denom_joint);
      lsigma = std::max(lsigma, ds / denom_joint);
      lf = std::max(lf, df / denom_joint);
    }
    if (denom_term > 1e-12) {
      const double dg = (c.g(x, mu) - c.g(xp, mup)).norm();
      require_finite("g", dg);
      lg = std::max(lg, dg / denom_term);
    }
    sig_sup = std::max(sig_sup, c.sigma(x, y, nu).norm());
  }

  report.lipschitz["b"] = lb;
  report.lipschitz["sigma"] = lsigma;
  report.lipschitz["f"] = lf;
  report.lipschitz["g"] = lg;
  report.sigma_bound = sig_sup;
  return report;
}

double check_lasry_lions(
    const std::function<double(const Vec&, const EmpiricalMeasure&)>& h,
    const std::vector<std::pair<EmpiricalMeasure, EmpiricalMeasure>>& pairs) {
  if (pairs.empty()) throw InvalidInput("check_lasry_lions: no pairs");
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& [mu, mup] : pairs) {
    if (mu.size() != mup.size() || mu.dim() != mup.dim())
      throw InvalidInput("check_lasry_lions: unequal atom counts");
    const int n = mu.size();
    double value = 0.0;
    // integral against (mu - mu'): average over mu's atoms minus average
    // over mu''s atoms of the h-difference
    for (int i = 0; i < n; ++i) {
      const Vec xi = mu.atom(i);
      const Vec xip = mup.atom(i);
      value += (h(xi, mu) - h(xi, mup)) - (h(xip, mu) - h(xip, mup));
    }
    worst = std::min(worst, value / n);
  }
  return worst;
}

double check_convexity(
    const std::function<double(const Vec& x, const EmpiricalMeasure& mu,
                               const Vec& y, const Mat& z, const Vec& alpha)>& H,
    const std::vector<ConvexitySample>& samples) {
  if (samples.empty()) throw InvalidInput("check_convexity: no samples");
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& s : samples) {
    const double da2 = (s.alpha_prime - s.alpha).squaredNorm();
    if (da2 < 1e-24)
      throw InvalidInput("check_convexity: degenerate sample (alpha' == alpha)");

    const double base = H(s.x, s.mu, s.y, s.z, s.alpha);
    const double moved = H(s.x_prime, s.mu, s.y, s.z, s.alpha_prime);

    const double hx = 1e-5 * (1.0 + s.x.norm());
    Vec grad_x(s.x.size());
    for (int c = 0; c < s.x.size(); ++c) {
      Vec up = s.x, down = s.x;
      up[c] += hx;
      down[c] -= hx;
      grad_x[c] = (H(up, s.mu, s.y, s.z, s.alpha) -
                   H(down, s.mu, s.y, s.z, s.alpha)) /
                  (2.0 * hx);
    }
    const double ha = 1e-5 * (1.0 + s.alpha.norm());
    Vec grad_a(s.alpha.size());
    for (int c = 0; c < s.alpha.size(); ++c) {
      Vec up = s.alpha, down = s.alpha;
      up[c] += ha;
      down[c] -= ha;
      grad_a[c] = (H(s.x, s.mu, s.y, s.z, up) -
                   H(s.x, s.mu, s.y, s.z, down)) /
                  (2.0 * ha);
    }

    const double gap = moved - base - grad_x.dot(s.x_prime - s.x) -
                       grad_a.dot(s.alpha_prime - s.alpha);
    worst = std::min(worst, gap / da2);
  }
  return worst;
}

}  // namespace mkv
