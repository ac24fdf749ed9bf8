#pragma once

#include <functional>

#include "mkv/measure.hpp"

namespace mkv {

// Finite-difference steps for residual evaluators: time, space, and the
// atom perturbations behind the measure derivatives.
struct StencilSpec {
  double h_t = 1e-3;
  double h_x = 1e-3;
  double h_mu = 1e-4;
};

// R^m-valued function of (t, x, mu), evaluable anywhere on its time domain.
// Residual evaluators only ever query values; derivatives are taken by
// finite differences on top of this interface.
class MeasureField {
 public:
  virtual ~MeasureField() = default;
  virtual int dim_x() const = 0;
  virtual int dim_y() const = 0;
  virtual double t_min() const = 0;
  virtual double t_max() const = 0;
  virtual Vec value(double t, const Vec& x, const EmpiricalMeasure& mu) const = 0;
};

class AnalyticField : public MeasureField {
 public:
  using Fn = std::function<Vec(double, const Vec&, const EmpiricalMeasure&)>;
  AnalyticField(int dx, int dy, double t0, double T, Fn fn)
      : dx_(dx), dy_(dy), t0_(t0), T_(T), fn_(std::move(fn)) {}

  int dim_x() const override { return dx_; }
  int dim_y() const override { return dy_; }
  double t_min() const override { return t0_; }
  double t_max() const override { return T_; }
  Vec value(double t, const Vec& x, const EmpiricalMeasure& mu) const override {
    return fn_(t, x, mu);
  }

 private:
  int dx_, dy_;
  double t0_, T_;
  Fn fn_;
};

// u(t,.,.) := U(t_min + t_max - t,.,.), the time reversal used when checking
// the forward form of the master equation.
class TimeReversedField : public MeasureField {
 public:
  explicit TimeReversedField(const MeasureField& base) : base_(base) {}
  int dim_x() const override { return base_.dim_x(); }
  int dim_y() const override { return base_.dim_y(); }
  double t_min() const override { return base_.t_min(); }
  double t_max() const override { return base_.t_max(); }
  Vec value(double t, const Vec& x, const EmpiricalMeasure& mu) const override {
    return base_.value(base_.t_min() + base_.t_max() - t, x, mu);
  }

 private:
  const MeasureField& base_;
};

}  // namespace mkv
