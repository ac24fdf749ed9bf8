#pragma once

#include <string>
#include <vector>

#include "mkv/types.hpp"

namespace mkv {

// Global polynomial features: all monomials x^alpha with |alpha| <= degree,
// ordered by total degree then lexicographically.  Gradients and Hessians
// are analytic, so a fitted field can be differentiated exactly.
class PolyBasis {
 public:
  PolyBasis(int dim, int degree);

  int dim() const { return dim_; }
  int degree() const { return degree_; }
  int size() const { return static_cast<int>(exponents_.size()); }
  std::string descriptor() const;

  Vec features(const Vec& x) const;           // size P
  Mat feature_jacobian(const Vec& x) const;   // P x d
  // Hessian of feature j at x, d x d.
  Mat feature_hessian(int j, const Vec& x) const;

  const std::vector<std::vector<int>>& exponents() const { return exponents_; }

 private:
  int dim_;
  int degree_;
  std::vector<std::vector<int>> exponents_;
};

}  // namespace mkv
