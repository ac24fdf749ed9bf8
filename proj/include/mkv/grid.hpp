#pragma once

#include "mkv/types.hpp"

namespace mkv {

// Uniform grid t_k = t0 + k*dt on [t0, T] with K steps (K+1 nodes).
struct TimeGrid {
  double t0 = 0.0;
  double T = 1.0;
  int K = 1;

  TimeGrid() = default;
  TimeGrid(double t0_, double T_, int K_) : t0(t0_), T(T_), K(K_) {
    if (!(T > t0)) throw InvalidInput("TimeGrid: need T > t0");
    if (K < 1) throw InvalidInput("TimeGrid: need K >= 1");
  }

  double dt() const { return (T - t0) / K; }
  double node(int k) const { return t0 + (T - t0) * k / K; }

  // Index of the last node with node(k) <= t (clamped to [0, K-1] so that
  // [node(k), node(k+1)] always brackets t inside the horizon).
  int cell(double t) const {
    int k = static_cast<int>(std::floor((t - t0) / dt()));
    if (k < 0) k = 0;
    if (k > K - 1) k = K - 1;
    return k;
  }

  bool contains(double t, double slack = 1e-12) const {
    return t >= t0 - slack && t <= T + slack;
  }
};

}  // namespace mkv
