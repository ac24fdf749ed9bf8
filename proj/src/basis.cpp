#include "mkv/basis.hpp"

namespace mkv {

namespace {

void enumerate(int dim, int remaining, std::vector<int>& current,
               std::vector<std::vector<int>>& out) {
  if (static_cast<int>(current.size()) == dim) {
    out.push_back(current);
    return;
  }
  for (int e = remaining; e >= 0; --e) {
    current.push_back(e);
    enumerate(dim, remaining - e, current, out);
    current.pop_back();
  }
}

double int_pow(double x, int e) {
  double r = 1.0;
  for (int i = 0; i < e; ++i) r *= x;
  return r;
}

}  // namespace

PolyBasis::PolyBasis(int dim, int degree) : dim_(dim), degree_(degree) {
  if (dim < 1) throw InvalidInput("PolyBasis: need dim >= 1");
  if (degree < 0) throw InvalidInput("PolyBasis: need degree >= 0");
  for (int total = 0; total <= degree; ++total) {
    std::vector<std::vector<int>> level;
    std::vector<int> current;
    enumerate(dim, total, current, level);
    for (auto& e : level) {
      int s = 0;
      for (int v : e) s += v;
      if (s == total) exponents_.push_back(e);
    }
  }
}

std::string PolyBasis::descriptor() const {
  return "poly(d=" + std::to_string(dim_) + ",deg=" + std::to_string(degree_) + ")";
}

Vec PolyBasis::features(const Vec& x) const {
  if (x.size() != dim_) throw InvalidInput("PolyBasis: point dimension mismatch");
  Vec phi(size());
  for (int j = 0; j < size(); ++j) {
    double v = 1.0;
    for (int c = 0; c < dim_; ++c) v *= int_pow(x[c], exponents_[j][c]);
    phi[j] = v;
  }
  return phi;
}

Mat PolyBasis::feature_jacobian(const Vec& x) const {
  if (x.size() != dim_) throw InvalidInput("PolyBasis: point dimension mismatch");
  Mat jac = Mat::Zero(size(), dim_);
  for (int j = 0; j < size(); ++j) {
    for (int c = 0; c < dim_; ++c) {
      const int e = exponents_[j][c];
      if (e == 0) continue;
      double v = e * int_pow(x[c], e - 1);
      for (int c2 = 0; c2 < dim_; ++c2)
        if (c2 != c) v *= int_pow(x[c2], exponents_[j][c2]);
      jac(j, c) = v;
    }
  }
  return jac;
}

Mat PolyBasis::feature_hessian(int j, const Vec& x) const {
  if (j < 0 || j >= size()) throw InvalidInput("PolyBasis: feature index out of range");
  Mat h = Mat::Zero(dim_, dim_);
  const auto& e = exponents_[j];
  for (int a = 0; a < dim_; ++a) {
    for (int b = 0; b < dim_; ++b) {
      double v;
      if (a == b) {
        if (e[a] < 2) continue;
        v = static_cast<double>(e[a]) * (e[a] - 1) * int_pow(x[a], e[a] - 2);
        for (int c = 0; c < dim_; ++c)
          if (c != a) v *= int_pow(x[c], e[c]);
      } else {
        if (e[a] < 1 || e[b] < 1) continue;
        v = static_cast<double>(e[a]) * e[b] * int_pow(x[a], e[a] - 1) *
            int_pow(x[b], e[b] - 1);
        for (int c = 0; c < dim_; ++c)
          if (c != a && c != b) v *= int_pow(x[c], e[c]);
      }
      h(a, b) = v;
    }
  }
  return h;
}

}  // namespace mkv
