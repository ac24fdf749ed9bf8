#include "mkv/measure.hpp"

#include <algorithm>
#include <limits>

namespace mkv {

namespace {
std::atomic<std::uint64_t> g_measure_counter{1};
}

EmpiricalMeasure::EmpiricalMeasure(Mat atoms) : atoms_(std::move(atoms)) {
  if (atoms_.rows() < 1) throw InvalidInput("EmpiricalMeasure: need N >= 1");
  if (atoms_.cols() < 1) throw InvalidInput("EmpiricalMeasure: need d >= 1");
  if (!atoms_.allFinite())
    throw NumericDomainError("EmpiricalMeasure: non-finite atom coordinate");
  mean_ = atoms_.colwise().mean().transpose();
  second_moment_ = atoms_.array().square().sum() / atoms_.rows();
  id_ = g_measure_counter.fetch_add(1, std::memory_order_relaxed);
}

EmpiricalMeasure EmpiricalMeasure::with_atom(int i, const Vec& replacement) const {
  if (i < 0 || i >= size()) throw InvalidInput("with_atom: atom index out of range");
  if (replacement.size() != dim()) throw InvalidInput("with_atom: dimension mismatch");
  Mat a = atoms_;
  a.row(i) = replacement.transpose();
  return EmpiricalMeasure(std::move(a));
}

EmpiricalMeasure EmpiricalMeasure::translated(const Vec& shift) const {
  if (shift.size() != dim()) throw InvalidInput("translated: dimension mismatch");
  Mat a = atoms_;
  a.rowwise() += shift.transpose();
  return EmpiricalMeasure(std::move(a));
}

namespace {

double w2_sorted_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  std::vector<double> a(mu.size()), b(nu.size());
  for (int i = 0; i < mu.size(); ++i) a[i] = mu.atoms()(i, 0);
  for (int i = 0; i < nu.size(); ++i) b[i] = nu.atoms()(i, 0);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double cost = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    cost += diff * diff;
  }
  return std::sqrt(cost / static_cast<double>(a.size()));
}

}  // namespace

std::vector<int> solve_assignment(const Mat& cost) {
  // Jonker-Volgenant style shortest augmenting path, row by row.
  // Potentials keep reduced costs nonnegative, so Dijkstra applies.
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw InvalidInput("solve_assignment: cost matrix must be square");
  const double inf = std::numeric_limits<double>::infinity();

  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match_col(n + 1, n);  // match_col[j] = row assigned to column j
  std::vector<int> way(n + 1, 0);

  for (int i = 0; i < n; ++i) {
    match_col[n] = i;
    int j0 = n;  // virtual column
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match_col[j0];
      double delta = inf;
      int j1 = -1;
      for (int j = 0; j < n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match_col[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match_col[j0] != n);
    do {
      const int j1 = way[j0];
      match_col[j0] = match_col[j1];
      j0 = j1;
    } while (j0 != n);
  }

  std::vector<int> row_to_col(n, -1);
  for (int j = 0; j < n; ++j)
    if (match_col[j] != n) row_to_col[match_col[j]] = j;
  return row_to_col;
}

double w2_distance(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  if (mu.dim() != nu.dim())
    throw InvalidInput("w2_distance: dimension mismatch");
  if (mu.size() != nu.size())
    throw InvalidInput("w2_distance: unequal atom counts (resample first)");
  if (mu.dim() == 1) return w2_sorted_1d(mu, nu);

  const int n = mu.size();
  Mat cost(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      cost(i, j) = (mu.atoms().row(i) - nu.atoms().row(j)).squaredNorm();
  const std::vector<int> assign = solve_assignment(cost);
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += cost(i, assign[i]);
  return std::sqrt(total / n);
}

double second_moment(const EmpiricalMeasure& mu) { return mu.second_moment(); }

Vec mean(const EmpiricalMeasure& mu) { return mu.mean(); }

double coupled_l2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  if (mu.dim() != nu.dim() || mu.size() != nu.size())
    throw InvalidInput("coupled_l2: shape mismatch");
  return std::sqrt((mu.atoms() - nu.atoms()).array().square().sum() / mu.size());
}

}  // namespace mkv
