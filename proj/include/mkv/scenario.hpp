#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mkv/measure.hpp"

namespace mkv {

// Evaluable coefficient set (b, sigma, f, g) of the McKean-Vlasov system
//   dX = b(X, Y, Z, nu) dt + sigma(X, Y, nu) dW,
//   dY = -f(X, Y, Z, nu) dt + Z dW,   Y_T = g(X_T, mu_T),
// where nu is the joint empirical law of (X, Y) in R^{d+m} and mu the
// X-marginal.  Evaluators must be pure; the solver calls them from tight
// loops against shared measures.
struct Coefficients {
  int dim_x = 1;  // d
  int dim_y = 1;  // m

  std::function<Vec(const Vec& x, const Vec& y, const Mat& z,
                    const EmpiricalMeasure& nu)>
      b;
  std::function<Mat(const Vec& x, const Vec& y, const EmpiricalMeasure& nu)> sigma;
  std::function<Vec(const Vec& x, const Vec& y, const Mat& z,
                    const EmpiricalMeasure& nu)>
      f;
  std::function<Vec(const Vec& x, const EmpiricalMeasure& mu)> g;

  double sigma_bound = 0.0;  // declared bound on |sigma|
  std::string label;
};

struct HypothesisReport {
  std::map<std::string, double> lipschitz;  // sampled lower bound per coefficient
  double sigma_bound = 0.0;                 // sampled sup |sigma|
  double sigma_bound_declared = 0.0;
  double convexity_lambda = 0.0;
  double monotonicity_min = 0.0;
  int sample_count = 0;
  std::uint64_t seed = 0;
};

// Deterministic sample source for the hypothesis checks.
class SeededSampler {
 public:
  SeededSampler(std::uint64_t seed, double scale = 2.0, int measure_atoms = 4)
      : seed_(seed), scale_(scale), measure_atoms_(measure_atoms) {}

  std::uint64_t seed() const { return seed_; }
  double gaussian();
  Vec point(int dim);
  EmpiricalMeasure measure(int dim);

 private:
  std::uint64_t seed_;
  double scale_;
  int measure_atoms_;
  std::uint64_t counter_ = 0;
};

// Sampled Lipschitz lower bounds: max over n pairs of
// |h(p) - h(p')| / (|x-x'| + |y-y'| + |z-z'| + W2(nu, nu')).
HypothesisReport estimate_lipschitz(const Coefficients& c, SeededSampler sampler,
                                    int n);

// Lasry-Lions monotonicity functional, evaluated exactly on atom supports:
// min over pairs of integral of (h(x,mu) - h(x,mu')) d(mu - mu')(x).
// Nonnegative on every pair <=> monotone on the sample.
double check_lasry_lions(
    const std::function<double(const Vec&, const EmpiricalMeasure&)>& h,
    const std::vector<std::pair<EmpiricalMeasure, EmpiricalMeasure>>& pairs);

struct ConvexitySample {
  Vec x;
  EmpiricalMeasure mu;
  Vec y;
  Mat z;
  Vec alpha;
  Vec x_prime;
  Vec alpha_prime;
};

// Sampled strong-convexity constant of the full Hamiltonian in (x, alpha):
// min over samples of
//   [H'(x',..,a') - H'(x,..,a) - <x'-x, dH'/dx> - <a'-a, dH'/da>] / |a'-a|^2
// with gradients by central differences.  Positive <=> sampled lambda.
double check_convexity(
    const std::function<double(const Vec& x, const EmpiricalMeasure& mu,
                               const Vec& y, const Mat& z, const Vec& alpha)>& H,
    const std::vector<ConvexitySample>& samples);

}  // namespace mkv
