#include "mkv/registry.hpp"

namespace mkv {

using nlohmann::json;

MfgSpec make_lq_mfg_spec(const LqSpec& lq) {
  lq.validate();
  MfgSpec spec;
  spec.d = lq.d;
  spec.k = lq.d;
  spec.b1 = lq.b1;
  spec.b_mean = Mat::Zero(lq.d, lq.d);
  spec.b2 = lq.b2;
  spec.sigma = lq.sigma;
  spec.R_quad = lq.R;
  spec.lambda = 0.5 * Eigen::SelfAdjointEigenSolver<Mat>(lq.R).eigenvalues().minCoeff();
  spec.label = "lq-mfg";

  const Mat Q = lq.Q, QG = lq.QG, R = lq.R;
  const double rho = lq.rho, rhoG = lq.rhoG;
  spec.F0 = [Q, rho](const Vec& x, const EmpiricalMeasure& mu) {
    const Vec z = x - rho * mu.mean();
    return 0.5 * z.dot(Q * z);
  };
  spec.dx_F0 = [Q, rho](const Vec& x, const EmpiricalMeasure& mu) {
    return Vec(Q * (x - rho * mu.mean()));
  };
  spec.F1 = [R](const Vec&, const Vec& a) { return 0.5 * a.dot(R * a); };
  spec.dx_F1 = [](const Vec& x, const Vec&) { return Vec(Vec::Zero(x.size())); };
  spec.da_F1 = [R](const Vec&, const Vec& a) { return Vec(R * a); };
  spec.G = [QG, rhoG](const Vec& x, const EmpiricalMeasure& mu) {
    const Vec z = x - rhoG * mu.mean();
    return 0.5 * z.dot(QG * z);
  };
  spec.dx_G = [QG, rhoG](const Vec& x, const EmpiricalMeasure& mu) {
    return Vec(QG * (x - rhoG * mu.mean()));
  };
  return spec;
}

MkvControlSpec make_lq_mkv_spec(const LqSpec& lq) {
  MkvControlSpec spec;
  static_cast<MfgSpec&>(spec) = make_lq_mfg_spec(lq);
  spec.label = "lq-mkv";
  const Mat Q = lq.Q, QG = lq.QG;
  const double rho = lq.rho, rhoG = lq.rhoG;
  // dmu F0(x, mu)(v) = -rho (x - rho m)'Q, constant in v
  spec.dmu_F = [Q, rho](const Vec& x, const EmpiricalMeasure& mu, const Vec&,
                        const Vec&) {
    return RowVec(-rho * (Q * (x - rho * mu.mean())).transpose());
  };
  spec.dmu_G = [QG, rhoG](const Vec& x, const EmpiricalMeasure& mu, const Vec&) {
    return RowVec(-rhoG * (QG * (x - rhoG * mu.mean())).transpose());
  };
  return spec;
}

namespace {

Mat block_from_json(const json& params, const std::string& key, int d,
                    double fallback) {
  if (!params.contains(key)) return fallback * Mat::Identity(d, d);
  const auto& v = params.at(key);
  if (v.is_number()) return v.get<double>() * Mat::Identity(d, d);
  Mat out(d, d);
  const auto rows = v.get<std::vector<std::vector<double>>>();
  if (static_cast<int>(rows.size()) != d)
    throw InvalidInput("scenario: block '" + key + "' has wrong shape");
  for (int i = 0; i < d; ++i) {
    if (static_cast<int>(rows[i].size()) != d)
      throw InvalidInput("scenario: block '" + key + "' has wrong shape");
    for (int j = 0; j < d; ++j) out(i, j) = rows[i][j];
  }
  return out;
}

void reject_unknown(const json& params,
                    const std::vector<std::string>& known) {
  for (const auto& [key, value] : params.items()) {
    (void)value;
    bool ok = false;
    for (const auto& k : known) ok = ok || k == key;
    if (!ok) throw InvalidInput("scenario: unknown parameter '" + key + "'");
  }
}

}  // namespace

LqSpec lq_spec_from_params(const json& params, double t0, double T) {
  reject_unknown(params, {"d", "b1", "b2", "sigma", "R", "Q", "QG", "rho", "rhoG"});
  LqSpec lq;
  lq.d = params.value("d", 1);
  lq.b1 = block_from_json(params, "b1", lq.d, 0.0);
  lq.b2 = block_from_json(params, "b2", lq.d, 1.0);
  lq.sigma = block_from_json(params, "sigma", lq.d, 1.0);
  lq.R = block_from_json(params, "R", lq.d, 1.0);
  lq.Q = block_from_json(params, "Q", lq.d, 1.0);
  lq.QG = block_from_json(params, "QG", lq.d, 1.0);
  lq.rho = params.value("rho", 0.0);
  lq.rhoG = params.value("rhoG", params.value("rho", 0.0));
  lq.t0 = t0;
  lq.T = T;
  lq.validate();
  return lq;
}

ScenarioBundle make_scenario(const std::string& name, const json& params,
                             double t0, double T) {
  ScenarioBundle bundle;
  bundle.name = name;

  if (name == "constant_terminal") {
    reject_unknown(params, {"value", "d", "m"});
    const int d = params.value("d", 1);
    const int m = params.value("m", 1);
    const double value = params.value("value", 1.0);
    Coefficients c;
    c.dim_x = d;
    c.dim_y = m;
    c.label = name;
    c.b = [d](const Vec&, const Vec&, const Mat&, const EmpiricalMeasure&) {
      return Vec(Vec::Zero(d));
    };
    c.sigma = [d](const Vec&, const Vec&, const EmpiricalMeasure&) {
      return Mat(Mat::Identity(d, d));
    };
    c.f = [m](const Vec&, const Vec&, const Mat&, const EmpiricalMeasure&) {
      return Vec(Vec::Zero(m));
    };
    c.g = [m, value](const Vec&, const EmpiricalMeasure&) {
      return Vec(Vec::Constant(m, value));
    };
    c.sigma_bound = std::sqrt(static_cast<double>(d));
    bundle.coefficients = std::move(c);
    return bundle;
  }

  if (name == "identity_terminal") {
    reject_unknown(params, {"d"});
    const int d = params.value("d", 1);
    Coefficients c;
    c.dim_x = d;
    c.dim_y = d;
    c.label = name;
    c.b = [d](const Vec&, const Vec&, const Mat&, const EmpiricalMeasure&) {
      return Vec(Vec::Zero(d));
    };
    c.sigma = [d](const Vec&, const Vec&, const EmpiricalMeasure&) {
      return Mat(Mat::Identity(d, d));
    };
    c.f = [d](const Vec&, const Vec&, const Mat&, const EmpiricalMeasure&) {
      return Vec(Vec::Zero(d));
    };
    c.g = [](const Vec& x, const EmpiricalMeasure&) { return x; };
    c.sigma_bound = std::sqrt(static_cast<double>(d));
    bundle.coefficients = std::move(c);
    return bundle;
  }

  if (name == "lq_mfg") {
    bundle.lq = lq_spec_from_params(params, t0, T);
    auto spec = std::make_shared<const MfgSpec>(make_lq_mfg_spec(*bundle.lq));
    bundle.coefficients = build_pontryagin_mfg(*spec);
    bundle.mfg = spec;
    bundle.kind = ControlKind::kMfg;
    return bundle;
  }

  if (name == "lq_mkv") {
    bundle.lq = lq_spec_from_params(params, t0, T);
    auto spec = std::make_shared<const MkvControlSpec>(make_lq_mkv_spec(*bundle.lq));
    bundle.coefficients = build_pontryagin_mkv(*spec);
    bundle.mfg = spec;
    bundle.mkv = spec;
    bundle.kind = ControlKind::kMkv;
    return bundle;
  }

  throw InvalidInput("scenario: unknown name '" + name + "'");
}

}  // namespace mkv
