#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "mkv/measure.hpp"
#include "mkv/rng.hpp"

using namespace mkv;

namespace {

// Independent oracle: exhaustive minimization over atom permutations.
double w2_brute_force(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  const int n = mu.size();
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (int i = 0; i < n; ++i)
      cost += (mu.atoms().row(i) - nu.atoms().row(perm[i])).squaredNorm();
    best = std::min(best, cost);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / n);
}

Mat random_atoms(int n, int d, std::uint64_t seed, std::uint64_t tag) {
  Mat a(n, d);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c)
      a(i, c) = 2.0 * rng::gaussian(seed, rng::Stream::kSampler, tag,
                                    static_cast<std::uint64_t>(i) * d + c);
  return a;
}

EmpiricalMeasure scalar_measure(std::initializer_list<double> xs) {
  Mat a(static_cast<int>(xs.size()), 1);
  int i = 0;
  for (double v : xs) a(i++, 0) = v;
  return EmpiricalMeasure(a);
}

}  // namespace

TEST_CASE("w2_distance: identity, translation, two-atom example") {
  auto mu = scalar_measure({0.0});
  CHECK(w2_distance(mu, mu) == doctest::Approx(0.0));

  auto nu = scalar_measure({3.0});
  CHECK(w2_distance(mu, nu) == doctest::Approx(3.0));

  // brute force over both pairings: sorted matching gives sqrt((1+1)/2) = 1
  auto a = scalar_measure({0.0, 2.0});
  auto b = scalar_measure({1.0, 3.0});
  CHECK(w2_brute_force(a, b) == doctest::Approx(1.0));
  CHECK(w2_distance(a, b) == doctest::Approx(1.0));
}

TEST_CASE("w2_distance: errors on shape mismatches") {
  auto mu = scalar_measure({0.0, 1.0});
  auto nu = scalar_measure({0.0});
  CHECK_THROWS_AS(w2_distance(mu, nu), InvalidInput);
  EmpiricalMeasure mu2(Mat::Zero(2, 2));
  CHECK_THROWS_AS(w2_distance(mu, mu2), InvalidInput);
}

TEST_CASE("w2_distance matches exhaustive minimization on small instances") {
  int cases = 0;
  for (int n = 1; n <= 6; ++n) {
    for (int d = 1; d <= 3; ++d) {
      for (int rep = 0; rep < 4; ++rep) {
        const std::uint64_t tag = 1000 * n + 100 * d + rep;
        EmpiricalMeasure mu(random_atoms(n, d, 11, tag));
        EmpiricalMeasure nu(random_atoms(n, d, 12, tag));
        CHECK(w2_distance(mu, nu) ==
              doctest::Approx(w2_brute_force(mu, nu)).epsilon(1e-12));
        ++cases;
      }
    }
  }
  CHECK(cases == 72);
}

TEST_CASE("w2_distance: symmetry, triangle inequality, translation covariance") {
  for (int rep = 0; rep < 10; ++rep) {
    const int n = 2 + rep % 5;
    const int d = 1 + rep % 3;
    EmpiricalMeasure mu(random_atoms(n, d, 21, rep));
    EmpiricalMeasure nu(random_atoms(n, d, 22, rep));
    EmpiricalMeasure rho(random_atoms(n, d, 23, rep));

    const double ab = w2_distance(mu, nu);
    CHECK(ab == doctest::Approx(w2_distance(nu, mu)));
    CHECK(ab <= w2_distance(mu, rho) + w2_distance(rho, nu) + 1e-12);

    Vec shift = Vec::Constant(d, 0.7);
    CHECK(w2_distance(mu.translated(shift), nu.translated(shift)) ==
          doctest::Approx(ab).epsilon(1e-12));
  }
}

TEST_CASE("second_moment and mean examples") {
  CHECK(second_moment(scalar_measure({0.0})) == doctest::Approx(0.0));
  CHECK(second_moment(scalar_measure({1.0, -1.0})) == doctest::Approx(1.0));

  Mat one_atom(1, 2);
  one_atom << 3.0, 4.0;
  CHECK(second_moment(EmpiricalMeasure(one_atom)) == doctest::Approx(25.0));

  CHECK(mean(scalar_measure({0.0}))[0] == doctest::Approx(0.0));
  CHECK(mean(scalar_measure({1.0, 3.0}))[0] == doctest::Approx(2.0));
  CHECK(mean(scalar_measure({-5.0, 5.0}))[0] == doctest::Approx(0.0));
}

TEST_CASE("EmpiricalMeasure validates its atoms") {
  CHECK_THROWS_AS(EmpiricalMeasure{Mat(0, 1)}, InvalidInput);
  Mat bad(1, 1);
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(EmpiricalMeasure{bad}, NumericDomainError);
}
