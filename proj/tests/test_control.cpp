#include <doctest.h>

#include <cmath>

#include "mkv/control.hpp"
#include "mkv/lq_oracle.hpp"
#include "mkv/registry.hpp"
#include "mkv/rng.hpp"

using namespace mkv;

namespace {

EmpiricalMeasure cloud(int n, std::uint64_t seed, double shift = 0.0) {
  Mat a(n, 1);
  for (int i = 0; i < n; ++i)
    a(i, 0) = shift + rng::gaussian(seed, rng::Stream::kSampler, 3, i);
  return EmpiricalMeasure(a);
}

MfgSpec simple_quadratic_spec() {
  // d = k = 1, b = alpha, F = 1/2 alpha^2, G = 0
  MfgSpec spec;
  spec.d = 1;
  spec.k = 1;
  spec.b1 = Mat::Zero(1, 1);
  spec.b_mean = Mat::Zero(1, 1);
  spec.b2 = Mat::Identity(1, 1);
  spec.sigma = Mat::Identity(1, 1);
  spec.F0 = [](const Vec&, const EmpiricalMeasure&) { return 0.0; };
  spec.F1 = [](const Vec&, const Vec& a) { return 0.5 * a.squaredNorm(); };
  spec.G = [](const Vec&, const EmpiricalMeasure&) { return 0.0; };
  spec.R_quad = Mat::Identity(1, 1);
  return spec;
}

// Bisection oracle for the first-order condition of a scalar minimizer.
double bisect(const std::function<double(double)>& f, double lo, double hi) {
  double flo = f(lo);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if ((flo < 0) == (fm < 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("hamiltonian: direct substitutions") {
  const auto spec = simple_quadratic_spec();
  const auto mu = cloud(4, 1);

  CHECK(hamiltonian(spec, Vec::Zero(1), mu, Vec::Zero(1), Vec::Zero(1)) ==
        doctest::Approx(0.0));
  // y = 2, alpha = 1: y b(alpha) + F1 = 2 + 0.5
  CHECK(hamiltonian(spec, Vec::Zero(1), mu, Vec::Constant(1, 2.0),
                    Vec::Constant(1, 1.0)) == doctest::Approx(2.5));
}

TEST_CASE("minimize_hamiltonian: quadratic closed forms") {
  const auto mu = cloud(4, 2);
  auto spec = simple_quadratic_spec();
  // F1 = a^2/2, b = alpha: minimizer -y
  const Vec y = Vec::Constant(1, 0.7);
  CHECK(minimize_hamiltonian(spec, Vec::Zero(1), mu, y)[0] ==
        doctest::Approx(-0.7));

  // R = 2I, b2 = I: minimizer -y/2
  spec.R_quad = 2.0 * Mat::Identity(1, 1);
  spec.F1 = [](const Vec&, const Vec& a) { return a.squaredNorm(); };
  CHECK(minimize_hamiltonian(spec, Vec::Zero(1), mu, y)[0] ==
        doctest::Approx(-0.35));
}

TEST_CASE("minimize_hamiltonian: quartic cost via Newton matches bisection") {
  auto spec = simple_quadratic_spec();
  spec.R_quad = Mat();  // force the Newton path
  spec.F1 = [](const Vec&, const Vec& a) {
    return 0.25 * std::pow(a[0], 4) + 0.5 * a[0] * a[0];
  };
  spec.da_F1 = [](const Vec&, const Vec& a) {
    return Vec(Vec::Constant(1, a[0] * a[0] * a[0] + a[0]));
  };
  const auto mu = cloud(4, 3);
  const Vec y = Vec::Constant(1, 1.0);

  // oracle: unique real root of a^3 + a + 1 = 0
  const double root =
      bisect([](double a) { return a * a * a + a + 1.0; }, -2.0, 0.0);
  CHECK(root == doctest::Approx(-0.6823278038280193).epsilon(1e-10));

  const Vec alpha = minimize_hamiltonian(spec, Vec::Zero(1), mu, y);
  CHECK(alpha[0] == doctest::Approx(root).epsilon(1e-8));

  // H decreases by at least lambda |a - a_hat|^2 around the minimizer
  for (double da : {-0.5, 0.3, 1.0}) {
    const Vec probe = alpha + Vec::Constant(1, da);
    const double gap = hamiltonian(spec, Vec::Zero(1), mu, y, probe) -
                       hamiltonian(spec, Vec::Zero(1), mu, y, alpha);
    CHECK(gap >= 0.5 * da * da - 1e-9);
  }
}

TEST_CASE("minimize_hamiltonian at an LQ point matches a grid search") {
  const auto lq = LqSpec::scalar_default(-0.5);
  const auto spec = make_lq_mfg_spec(lq);
  const auto mu = cloud(8, 4, 0.3);
  const Vec x = Vec::Constant(1, 0.8);
  const Vec y = Vec::Constant(1, -0.4);
  const Vec alpha = minimize_hamiltonian(spec, x, mu, y);

  double best = std::numeric_limits<double>::infinity();
  double best_a = 0.0;
  for (double a = -3.0; a <= 3.0; a += 1e-4) {
    const double h = hamiltonian(spec, x, mu, y, Vec::Constant(1, a));
    if (h < best) {
      best = h;
      best_a = a;
    }
  }
  CHECK(alpha[0] == doctest::Approx(best_a).epsilon(1e-3));
  CHECK(hamiltonian(spec, x, mu, y, alpha) <= best + 1e-8);
}

TEST_CASE("build_pontryagin_mfg wires the LQ derivatives") {
  const auto lq = LqSpec::scalar_default(-0.5);
  const auto spec = make_lq_mfg_spec(lq);
  const auto c = build_pontryagin_mfg(spec);
  CHECK(c.dim_x == 1);
  CHECK(c.dim_y == 1);

  // joint law nu on R^2 with X-marginal mean m
  Mat joint(4, 2);
  joint << 0.2, 1.0, -0.4, 0.5, 1.1, -0.2, 0.7, 0.3;
  const EmpiricalMeasure nu(joint);
  const double m = joint.col(0).mean();

  const Vec x = Vec::Constant(1, 0.9);
  const Vec y = Vec::Constant(1, -0.6);
  const Mat z = Mat::Zero(1, 1);

  // b = b1 x + b2 ahat = -y for the scalar default
  CHECK(c.b(x, y, z, nu)[0] == doctest::Approx(0.6));
  // f = dxH = b1'y + Q(x - rho m)
  CHECK(c.f(x, y, z, nu)[0] == doctest::Approx(0.9 + 0.5 * m));
  // g = QG (x - rhoG m) against the X-marginal measure
  const EmpiricalMeasure mu(joint.col(0));
  CHECK(c.g(x, mu)[0] == doctest::Approx(0.9 + 0.5 * m));
  CHECK(c.sigma(x, y, nu)(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("build_pontryagin_mkv: averaged term matches the closed form") {
  // dmu F0(x', mu)(v) = -rho Q (x' - rho m); averaging over x' ~ mu gives
  // -rho (1 - rho) Q m
  const double rho = -0.5;
  const auto lq = LqSpec::scalar_default(rho);
  const auto spec = make_lq_mkv_spec(lq);
  const auto c = build_pontryagin_mkv(spec);

  Mat joint(6, 2);
  for (int i = 0; i < 6; ++i) {
    joint(i, 0) = 0.3 + 0.2 * i;
    joint(i, 1) = -0.1 * i;
  }
  const EmpiricalMeasure nu(joint);
  const double m = joint.col(0).mean();

  const Vec x = Vec::Constant(1, 0.4);
  const Vec y = Vec::Constant(1, 0.2);
  const Mat z = Mat::Zero(1, 1);
  const double mfg_driver = 1.0 * (0.4 - rho * m);  // Q (x - rho m), b1 = 0
  const double averaged = -rho * (1.0 - rho) * m;
  CHECK(c.f(x, y, z, nu)[0] == doctest::Approx(mfg_driver + averaged).epsilon(1e-12));

  // terminal: dxG + averaged dmuG
  const EmpiricalMeasure mu(joint.col(0));
  CHECK(c.g(x, mu)[0] == doctest::Approx(0.4 - rho * m + averaged).epsilon(1e-12));
}

TEST_CASE("build_pontryagin_mkv reduces to the game system without measure terms") {
  const auto lq = LqSpec::scalar_default(-0.5);
  MkvControlSpec spec = make_lq_mkv_spec(lq);
  spec.dmu_F = nullptr;
  spec.dmu_G = nullptr;
  const auto c_mkv = build_pontryagin_mkv(spec);
  const auto c_mfg = build_pontryagin_mfg(make_lq_mfg_spec(lq));

  Mat joint(5, 2);
  joint << 0.1, 0.4, -0.2, 0.3, 0.8, -0.5, 0.0, 0.2, 1.2, 0.9;
  const EmpiricalMeasure nu(joint);
  const EmpiricalMeasure mu(joint.col(0));
  const Vec x = Vec::Constant(1, -0.3);
  const Vec y = Vec::Constant(1, 0.8);
  const Mat z = Mat::Zero(1, 1);

  CHECK(c_mkv.b(x, y, z, nu)[0] == c_mfg.b(x, y, z, nu)[0]);
  CHECK(c_mkv.f(x, y, z, nu)[0] == c_mfg.f(x, y, z, nu)[0]);
  CHECK(c_mkv.g(x, mu)[0] == c_mfg.g(x, mu)[0]);
}

TEST_CASE("build_pontryagin_mkv: single-particle average is the bare derivative") {
  const double rho = -0.5;
  const auto spec = make_lq_mkv_spec(LqSpec::scalar_default(rho));
  const auto c = build_pontryagin_mkv(spec);
  Mat joint(1, 2);
  joint << 0.7, 0.1;
  const EmpiricalMeasure nu(joint);
  const Vec x = Vec::Constant(1, 0.25);
  // average over the single atom x' = 0.7 (m = 0.7)
  const double expected = -rho * (0.7 - rho * 0.7);
  const double driver = (0.25 - rho * 0.7);
  CHECK(c.f(x, Vec::Constant(1, 0.1), Mat::Zero(1, 1), nu)[0] ==
        doctest::Approx(driver + expected).epsilon(1e-12));
}

TEST_CASE("oracle scaling: rescaling both costs rescales the affine field") {
  const double scale = 2.5;
  LqSpec base = LqSpec::scalar_default(-0.5);
  LqSpec scaled = base;
  scaled.Q = scale * base.Q;
  scaled.QG = scale * base.QG;
  scaled.R = scale * base.R;
  const TimeGrid grid(0, 1, 16);
  const auto s0 = solve_riccati(base, ControlKind::kMfg, grid);
  const auto s1 = solve_riccati(scaled, ControlKind::kMfg, grid);
  for (double t : {0.0, 0.4, 1.0}) {
    CHECK(s1.eta_at(t)(0, 0) ==
          doctest::Approx(scale * s0.eta_at(t)(0, 0)).epsilon(1e-8));
    CHECK(s1.chi_at(t)(0, 0) ==
          doctest::Approx(scale * s0.chi_at(t)(0, 0)).epsilon(1e-8));
  }
}

TEST_CASE("value_function: constant terminal cost is exact") {
  auto spec = simple_quadratic_spec();
  spec.F1 = [](const Vec&, const Vec& a) { return 0.5 * a.squaredNorm(); };
  spec.F0 = [](const Vec&, const EmpiricalMeasure&) { return 0.0; };
  spec.G = [](const Vec&, const EmpiricalMeasure&) { return 3.25; };
  // with G constant the adjoint field is zero and no control is exerted
  AnalyticField zero(1, 1, 0.0, 1.0,
                     [](double, const Vec&, const EmpiricalMeasure&) {
                       return Vec::Zero(1);
                     });
  const auto mu = cloud(16, 6);
  const auto est = value_function(spec, zero, 0.0, Vec::Constant(1, 0.4), mu,
                                  TimeGrid(0, 1, 8), {64, 11});
  CHECK(est.value == doctest::Approx(3.25));
  CHECK(est.std_error == doctest::Approx(0.0));
}

TEST_CASE("value_function: decoupled LQ matches the quadratic expansion") {
  // rho = 0 keeps the population out of the cost; V = 1/2 P x^2 + s
  const auto lq = LqSpec::scalar_default(0.0);
  const auto spec = make_lq_mfg_spec(lq);
  const auto sol = solve_riccati(lq, ControlKind::kMfg, TimeGrid(0, 1, 32));
  const OracleFieldAdapter U(sol);
  const auto mu = cloud(64, 7);
  const Vec x = Vec::Constant(1, 0.9);
  const auto est =
      value_function(spec, U, 0.0, x, mu, TimeGrid(0, 1, 64), {512, 12});
  const double expected = oracle_value(sol, lq, 0.0, x, mu);
  CHECK(std::abs(est.value - expected) < 5.0 * est.std_error + 0.02);
}

TEST_CASE("value_function: full LQ game within Monte Carlo error") {
  const auto lq = LqSpec::scalar_default(-0.5);
  const auto spec = make_lq_mfg_spec(lq);
  const auto sol = solve_riccati(lq, ControlKind::kMfg, TimeGrid(0, 1, 32));
  const OracleFieldAdapter U(sol);
  const auto mu = cloud(256, 8, 0.5);
  const Vec x = Vec::Constant(1, -0.3);
  const auto est =
      value_function(spec, U, 0.0, x, mu, TimeGrid(0, 1, 64), {512, 13});
  const double expected = oracle_value(sol, lq, 0.0, x, mu);
  CHECK(std::abs(est.value - expected) < 5.0 * est.std_error + 0.03);
}

TEST_CASE("identification_check on the oracle pair") {
  const TimeGrid grid(0, 1, 32);
  const auto mu = cloud(64, 9, 0.4);

  SUBCASE("mfg: U = dxV") {
    const auto lq = LqSpec::scalar_default(-0.5);
    const auto sol = solve_riccati(lq, ControlKind::kMfg, grid);
    const OracleFieldAdapter U(sol);
    const OracleValueAdapter V(sol, lq);
    for (double t : {0.1, 0.5, 0.9}) {
      const Vec x = mu.atom(3);
      CHECK(identification_check(ControlKind::kMfg, V, U, t, x, mu, 1e-4, 1e-4) <
            1e-6);
    }
  }

  SUBCASE("mkv: U = dxV + averaged dmuV") {
    const auto lq = LqSpec::scalar_default(-0.5);
    const auto sol = solve_riccati(lq, ControlKind::kMkv, grid);
    const OracleFieldAdapter U(sol);
    const OracleValueAdapter V(sol, lq);
    for (double t : {0.1, 0.5, 0.9}) {
      const Vec x = mu.atom(5);
      CHECK(identification_check(ControlKind::kMkv, V, U, t, x, mu, 1e-4, 1e-4) <
            1e-6);
    }
    // the mkv identity needs the averaged term: dropping it (i.e. using the
    // mfg form) must leave a visible gap when rho != 0
    CHECK(identification_check(ControlKind::kMfg, V, U, 0.5, mu.atom(5), mu, 1e-4,
                               1e-4) > 1e-3);
  }

  SUBCASE("constant costs: both sides vanish") {
    AnalyticField U(1, 1, 0.0, 1.0,
                    [](double, const Vec&, const EmpiricalMeasure&) {
                      return Vec::Zero(1);
                    });
    AnalyticField V(1, 1, 0.0, 1.0,
                    [](double, const Vec&, const EmpiricalMeasure&) {
                      return Vec::Constant(1, 2.0);
                    });
    CHECK(identification_check(ControlKind::kMfg, V, U, 0.3, mu.atom(0), mu, 1e-4,
                               1e-4) == doctest::Approx(0.0));
  }
}

TEST_CASE("identification_check: mkv form rejects off-support points") {
  const auto lq = LqSpec::scalar_default(-0.5);
  const TimeGrid grid(0, 1, 8);
  const auto sol = solve_riccati(lq, ControlKind::kMkv, grid);
  const OracleFieldAdapter U(sol);
  const OracleValueAdapter V(sol, lq);
  const auto mu = cloud(8, 10);
  CHECK_THROWS_AS(identification_check(ControlKind::kMkv, V, U, 0.5,
                                       Vec::Constant(1, 123.0), mu, 1e-4, 1e-4),
                  NumericDomainError);
}

TEST_CASE("hjb_residual: constant value function and the LQ oracle") {
  const auto lq = LqSpec::scalar_default(-0.5);
  const auto spec = make_lq_mfg_spec(lq);
  const TimeGrid grid(0, 1, 32);
  const auto sol = solve_riccati(lq, ControlKind::kMfg, grid);

  // frozen equilibrium flow: the value function reads only the mean, whose
  // dynamics are m' = (b1 - S(eta+chi)) m; a fine deterministic transport
  // keeps the time-stencil error of the flow negligible
  const TimeGrid flow_grid(0, 1, 512);
  FlowMeasures flow;
  flow.grid = flow_grid;
  flow.atoms.resize(flow_grid.K + 1);
  Mat atoms = cloud(32, 11, 1.0).atoms();
  for (int k = 0; k <= flow_grid.K; ++k) {
    flow.atoms[k] = atoms;
    if (k < flow_grid.K) {
      const double t = flow_grid.node(k);
      const double rate = -(sol.eta_at(t)(0, 0) + sol.chi_at(t)(0, 0));
      atoms = atoms + flow_grid.dt() * rate * atoms;
    }
  }

  SUBCASE("constant costs give zero") {
    MfgSpec flat = spec;
    flat.F0 = [](const Vec&, const EmpiricalMeasure&) { return 0.0; };
    flat.G = [](const Vec&, const EmpiricalMeasure&) { return 1.0; };
    flat.dx_F0 = nullptr;
    flat.dx_G = nullptr;
    AnalyticField V(1, 1, 0.0, 1.0,
                    [](double, const Vec&, const EmpiricalMeasure&) {
                      return Vec::Constant(1, 1.0);
                    });
    CHECK(hjb_residual(flat, V, flow, 0.5, Vec::Constant(1, 0.3), {}) < 1e-9);
  }

  SUBCASE("oracle value function satisfies the HJB along its flow") {
    const OracleValueAdapter V(sol, lq);
    for (double t : {0.2, 0.5, 0.8})
      CHECK(hjb_residual(spec, V, flow, t, Vec::Constant(1, 0.6),
                         {1e-4, 1e-4, 1e-4}) < 5e-3);
  }
}
