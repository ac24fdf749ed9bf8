#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "mkv/types.hpp"

namespace mkv {

// Uniformly weighted empirical measure (1/N) sum of Dirac masses on R^d.
// Atoms are rows of an N x d matrix; weights are implicitly 1/N.
// Immutable after construction.
class EmpiricalMeasure {
 public:
  explicit EmpiricalMeasure(Mat atoms);

  int size() const { return static_cast<int>(atoms_.rows()); }
  int dim() const { return static_cast<int>(atoms_.cols()); }
  const Mat& atoms() const { return atoms_; }
  Vec atom(int i) const { return atoms_.row(i).transpose(); }

  const Vec& mean() const { return mean_; }
  double second_moment() const { return second_moment_; }

  // Process-unique construction id; lets evaluators memoize per-measure work
  // (marginals, averaged terms) without guessing at object identity.
  std::uint64_t id() const { return id_; }

  EmpiricalMeasure with_atom(int i, const Vec& replacement) const;
  EmpiricalMeasure translated(const Vec& shift) const;

 private:
  Mat atoms_;
  Vec mean_;
  double second_moment_ = 0.0;
  std::uint64_t id_ = 0;
};

// Exact 2-Wasserstein distance between equal-size empirical measures:
// sorting for d = 1, optimal assignment for d > 1 (O(N^3), meant for
// small supports).
double w2_distance(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

double second_moment(const EmpiricalMeasure& mu);
Vec mean(const EmpiricalMeasure& mu);

// Root-mean-square distance between paired atoms (synchronous coupling).
// Upper bound on w2_distance; exact when the identity pairing is optimal.
double coupled_l2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

// Minimum-cost perfect matching for a square nonnegative cost matrix
// (shortest augmenting paths with potentials). Returns per-row assignment.
std::vector<int> solve_assignment(const Mat& cost);

}  // namespace mkv
