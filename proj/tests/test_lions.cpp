#include <doctest.h>

#include <cmath>

#include "mkv/lions.hpp"
#include "mkv/rng.hpp"

using namespace mkv;

namespace {

Mat gaussian_cloud(int n, int d, std::uint64_t seed, double mean = 0.0,
                   double sd = 1.0) {
  Mat a(n, d);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c)
      a(i, c) = mean + sd * rng::gaussian(seed, rng::Stream::kInit, i, c);
  return a;
}

// int v dmu (d = 1), with the O(1)-update hook
MeasureFunctional mean_functional() {
  MeasureFunctional f;
  f.label = "mean";
  f.eval = [](const EmpiricalMeasure& mu) { return mu.mean()[0]; };
  f.replace_eval = [](const EmpiricalMeasure& mu, double base, int i,
                      const Vec& repl) {
    return base + (repl[0] - mu.atoms()(i, 0)) / mu.size();
  };
  return f;
}

// int |v|^2 dmu
MeasureFunctional quadratic_functional() {
  MeasureFunctional f;
  f.label = "second-moment";
  f.eval = [](const EmpiricalMeasure& mu) { return mu.second_moment(); };
  f.replace_eval = [](const EmpiricalMeasure& mu, double base, int i,
                      const Vec& repl) {
    return base + (repl.squaredNorm() - mu.atoms().row(i).squaredNorm()) / mu.size();
  };
  return f;
}

// || xi ||_2 = sqrt(int |v|^2 dmu)
MeasureFunctional l2norm_functional() {
  MeasureFunctional f;
  f.label = "l2-norm";
  f.eval = [](const EmpiricalMeasure& mu) { return std::sqrt(mu.second_moment()); };
  return f;
}

// (int v dmu)^2 (d = 1)
MeasureFunctional mean_squared_functional() {
  MeasureFunctional f;
  f.label = "mean-squared";
  f.eval = [](const EmpiricalMeasure& mu) {
    return mu.mean()[0] * mu.mean()[0];
  };
  return f;
}

}  // namespace

TEST_CASE("lions_derivative: linear functional is exact for any h") {
  EmpiricalMeasure mu(gaussian_cloud(64, 1, 5));
  for (double h : {1e-2, 1e-4}) {
    const auto est = lions_derivative(mean_functional(), mu, h);
    for (const auto& g : est.gradients)
      CHECK(g[0] == doctest::Approx(1.0).epsilon(1e-10));
  }
  // at very small h the quotient is limited by rounding of the evaluations
  const auto est = lions_derivative(mean_functional(), mu, 1e-6);
  for (const auto& g : est.gradients)
    CHECK(g[0] == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("lions_derivative: || xi ||_2 has derivative v / || xi ||_2") {
  EmpiricalMeasure mu(gaussian_cloud(128, 2, 6));
  const double norm = std::sqrt(mu.second_moment());
  const auto est = lions_derivative(l2norm_functional(), mu, 1e-5);
  for (int i = 0; i < mu.size(); ++i) {
    const Vec expect = mu.atom(i) / norm;
    CHECK((est.gradients[i].transpose() - expect).norm() < 1e-6 * (1 + expect.norm()));
  }
}

TEST_CASE("lions_derivative: (int v dmu)^2 has derivative 2 mean") {
  // Gateaux derivative of the lift (E X)^2 in direction chi is 2 E[X] E[chi],
  // so dmuU(mu)(v) = 2 m(mu) independently of v.
  EmpiricalMeasure mu(gaussian_cloud(64, 1, 7, 0.3));
  const double m = mu.mean()[0];
  const auto est = lions_derivative(mean_squared_functional(), mu, 1e-5);
  for (const auto& g : est.gradients)
    CHECK(g[0] == doctest::Approx(2.0 * m).epsilon(1e-6));
}

TEST_CASE("lions_derivative: atom permutation equivariance") {
  Mat atoms = gaussian_cloud(16, 1, 8);
  EmpiricalMeasure mu(atoms);
  Mat perm_atoms(16, 1);
  std::vector<int> perm(16);
  for (int i = 0; i < 16; ++i) perm[i] = (i * 5 + 3) % 16;
  for (int i = 0; i < 16; ++i) perm_atoms.row(i) = atoms.row(perm[i]);
  EmpiricalMeasure nu(perm_atoms);

  const auto em = lions_derivative(quadratic_functional(), mu, 1e-5);
  const auto en = lions_derivative(quadratic_functional(), nu, 1e-5);
  for (int i = 0; i < 16; ++i)
    CHECK(en.gradients[i][0] == doctest::Approx(em.gradients[perm[i]][0]));
}

TEST_CASE("lions_derivative: O(h^2) truncation (Richardson)") {
  // u^N in atom i is cubic, so the central-difference error is exactly h_i^2.
  MeasureFunctional cubic;
  cubic.label = "third-moment";
  cubic.eval = [](const EmpiricalMeasure& mu) {
    return mu.atoms().array().pow(3).sum() / mu.size();
  };
  EmpiricalMeasure mu(gaussian_cloud(16, 1, 9));
  auto err = [&](double h) {
    const auto est = lions_derivative(cubic, mu, h);
    double worst = 0.0;
    for (int i = 0; i < mu.size(); ++i) {
      const double exact = 3.0 * mu.atoms()(i, 0) * mu.atoms()(i, 0);
      worst = std::max(worst, std::abs(est.gradients[i][0] - exact));
    }
    return worst;
  };
  const double e1 = err(1e-3);
  const double e2 = err(5e-4);
  CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("lions_second_diag: quadratic functional gives 2 I") {
  EmpiricalMeasure mu(gaussian_cloud(32, 2, 10));
  const auto est = lions_second_diag(quadratic_functional(), mu, 1e-4);
  for (const auto& h : est.hessians)
    CHECK((h - 2.0 * Mat::Identity(2, 2)).norm() < 1e-5);
}

TEST_CASE("lions_second_diag: linear functional gives 0") {
  MeasureFunctional lin;
  lin.label = "linear";
  lin.eval = [](const EmpiricalMeasure& mu) {
    return 0.5 * mu.mean()[0] - 1.25 * mu.mean()[1];
  };
  EmpiricalMeasure mu(gaussian_cloud(32, 2, 11));
  const auto est = lions_second_diag(lin, mu, 1e-4);
  for (const auto& h : est.hessians) CHECK(h.norm() < 1e-6);
}

TEST_CASE("lions_second_diag: (int v dmu)^2 shows the documented 2/N bias") {
  // dmuU is constant in v, so the v-part vanishes; the estimator returns the
  // pure second-order measure term N * 2/N^2.
  const int n = 64;
  EmpiricalMeasure mu(gaussian_cloud(n, 1, 12));
  const auto est = lions_second_diag(mean_squared_functional(), mu, 1e-4);
  for (const auto& h : est.hessians)
    CHECK(h(0, 0) == doctest::Approx(2.0 / n).epsilon(1e-4));
}

TEST_CASE("lions_derivative propagates non-finite functional values") {
  MeasureFunctional bad;
  bad.label = "log-mean";
  bad.eval = [](const EmpiricalMeasure& mu) { return std::log(mu.mean()[0]); };
  Mat atoms(2, 1);
  atoms << 1e-9, 1e-9;  // perturbing an atom downward crosses zero
  bool threw = false;
  try {
    lions_derivative(bad, EmpiricalMeasure(atoms), 1e-2);
  } catch (const NumericDomainError& e) {
    threw = true;
    CHECK(e.atom_index >= 0);
  }
  CHECK(threw);
}

TEST_CASE("chain_rule_residual: constant functional vanishes exactly") {
  MeasureFunctional constant;
  constant.label = "constant";
  constant.eval = [](const EmpiricalMeasure&) { return 4.25; };
  const auto flow = brownian_flow(gaussian_cloud(64, 1, 13), TimeGrid(0, 1, 8), 99);
  CHECK(chain_rule_residual(constant, flow, 1e-4) == doctest::Approx(0.0));
}

TEST_CASE("chain_rule_residual: Brownian flow, quadratic functional") {
  // E|X_0 + W_t|^2 = E|X_0|^2 + d t; the chain-rule integral reproduces the
  // d t part exactly through the second-order estimator.
  const auto flow = brownian_flow(gaussian_cloud(1024, 1, 14), TimeGrid(0, 1, 32), 100);
  CHECK(chain_rule_residual(quadratic_functional(), flow, 1e-4) < 0.1);
}

TEST_CASE("chain_rule_residual: Ornstein-Uhlenbeck second moment") {
  // m2' = -2 m2 + 1 with m2(0) = 0 gives m2(1) = (1 - e^{-2}) / 2.
  const double m2_closed = 0.43233235838169365;
  const auto flow = ornstein_uhlenbeck_flow(Mat::Zero(2048, 1), TimeGrid(0, 1, 64),
                                            1.0, 1.0, 101);
  const double m2_flow = flow.measure_at(64).second_moment();
  CHECK(std::abs(m2_flow - m2_closed) < 0.03);
  CHECK(chain_rule_residual(quadratic_functional(), flow, 1e-4) < 0.08);
}

TEST_CASE("chain_rule_residual shrinks under refinement") {
  auto level = [&](int n, int k) {
    const auto flow = brownian_flow(gaussian_cloud(n, 1, 15), TimeGrid(0, 1, k), 102);
    return chain_rule_residual(quadratic_functional(), flow, 1e-4);
  };
  // averaged over a few seeds to tame the half-normal spread
  double coarse = 0.0, fine = 0.0;
  for (std::uint64_t s = 0; s < 8; ++s) {
    const auto fc = brownian_flow(gaussian_cloud(512, 1, 30 + s), TimeGrid(0, 1, 16),
                                  200 + s);
    const auto ff = brownian_flow(gaussian_cloud(2048, 1, 40 + s), TimeGrid(0, 1, 32),
                                  300 + s);
    coarse += chain_rule_residual(quadratic_functional(), fc, 1e-4);
    fine += chain_rule_residual(quadratic_functional(), ff, 1e-4);
  }
  CHECK(fine < coarse);
  (void)level;
}

TEST_CASE("full_ito_residual: measure-free and martingale cases") {
  TimeSpaceMeasureFunctional vt;
  vt.label = "time-only";
  vt.eval = [](double t, const Vec&, const EmpiricalMeasure&) { return t * t; };
  // left-endpoint quadrature of 2t carries the O(dt) Riemann error
  const auto flow = brownian_flow(gaussian_cloud(128, 1, 16), TimeGrid(0, 1, 64), 103);
  CHECK(full_ito_residual(vt, flow, -1, 1e-4) < 0.02);

  TimeSpaceMeasureFunctional vx;
  vx.label = "identity";
  vx.eval = [](double, const Vec& x, const EmpiricalMeasure&) { return x[0]; };
  CHECK(full_ito_residual(vx, flow, -1, 1e-4) < 0.2);
  // pathwise form includes the explicit martingale increments
  CHECK(full_ito_residual(vx, flow, 3, 1e-4) < 1e-8);
}

TEST_CASE("full_ito_residual: x times mean shows the 1/N correction") {
  // For V = x m(mu) and X = X_0 + W, E[X_t m_t] - X_0 m_0 = t/N exactly on
  // the N-particle system (cross-variation of the path with the mean), a
  // term outside the continuum expansion.
  const int n = 256;
  TimeSpaceMeasureFunctional v;
  v.label = "x-times-mean";
  v.eval = [](double, const Vec& x, const EmpiricalMeasure& mu) {
    return x[0] * mu.mean()[0];
  };
  const auto flow = brownian_flow(gaussian_cloud(n, 1, 17), TimeGrid(0, 1, 16), 104);
  const double residual = full_ito_residual(v, flow, -1, 1e-4);
  CHECK(residual < 1.0 / n + 0.04);
}
