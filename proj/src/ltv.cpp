#include "platoon/ltv.hpp"

#include <cmath>

namespace platoon::ltv {

LongitudinalCoeffs longitudinal_coeffs(double v_bar, double v_d_bar, const dynamics::DynamicsConstants& c) {
  LongitudinalCoeffs k;
  k.alpha = c.c6 + 2.0 * c.c7 * (v_bar - v_d_bar);
  k.beta = std::exp(kControlDt * k.alpha);
  k.lag = std::abs(k.alpha) < 1e-12 ? kControlDt : std::expm1(kControlDt * k.alpha) / k.alpha;
  k.theta = k.beta - 0.1;
  k.sigma_obs = k.lag - kControlDt;
  return k;
}

LtvSystem build_AB(std::span<const SpeedRef> refs, const dynamics::DynamicsConstants& c) {
  const int kappa = static_cast<int>(refs.size());
  if (kappa < 2) throw ConfigError("build_AB: kappa must be at least 2");
  LtvSystem s;
  s.kappa = kappa;
  const int p = 2 * kappa - 1;
  s.A = MatrixXd::Zero(p, p);
  s.B = MatrixXd::Zero(p, kappa);
  s.coeffs.resize(kappa);
  for (int i = 0; i < kappa; ++i) s.coeffs[i] = longitudinal_coeffs(refs[i].v, refs[i].v_d, c);
  for (int m = 0; m < kappa - 1; ++m) {
    s.A(m, m) = 1.0;
    s.A(m, speed_index(kappa, m)) = s.coeffs[m].lag;
    s.A(m, speed_index(kappa, m + 1)) = -s.coeffs[m + 1].lag;
  }
  for (int i = 0; i < kappa; ++i) {
    const auto& k = s.coeffs[i];
    s.A(speed_index(kappa, i), speed_index(kappa, i)) = k.beta;
    if (i >= 1) s.B(gap_index(i - 1), i) = k.lag - kControlDt;
    if (i <= kappa - 2) s.B(gap_index(i), i) = kControlDt - k.lag;
    s.B(speed_index(kappa, i), i) = 1.0 - k.beta;
  }
  return s;
}

LtvSystem build_AB_uniform(int kappa, double v_bar, double v_d_bar, const dynamics::DynamicsConstants& c) {
  std::vector<SpeedRef> refs(kappa, SpeedRef{v_bar, v_d_bar});
  return build_AB(refs, c);
}

MatrixXd measurement_matrix(MeasurementModel model, int kappa, int i) {
  if (i < 0 || i >= kappa) throw ConfigError("measurement_matrix: vehicle index out of range");
  const int p = 2 * kappa - 1;
  if (model == MeasurementModel::LeaderBroadcast) {
    if (i != 0) throw ConfigError("leader broadcast applies to vehicle 1 only");
    MatrixXd C = MatrixXd::Zero(kappa, p);
    for (int m = 0; m < kappa - 1; ++m)
      for (int q = 0; q <= m; ++q) C(m, q) = 1.0;
    C(kappa - 1, speed_index(kappa, 0)) = 1.0;
    return C;
  }
  if (i == 0) {
    MatrixXd C = MatrixXd::Zero(1, p);
    C(0, speed_index(kappa, 0)) = 1.0;
    return C;
  }
  MatrixXd C = MatrixXd::Zero(2, p);
  C(0, gap_index(i - 1)) = 1.0;
  C(1, speed_index(kappa, i)) = 1.0;
  return C;
}

MatrixXd measurement_matrix(Level level, int kappa, int i) {
  return measurement_matrix(measurement_model(level, i), kappa, i);
}

LateralLtv build_lateral(double v_bar, double delta_bar, const dynamics::DynamicsConstants& c) {
  double arg = c.c1 * delta_bar + c.c2;
  double cs = std::cos(arg);
  if (cs == 0.0) throw ArgumentError("build_lateral: steering argument at a pole");
  double factor = c.c1 * v_bar / (cs * cs * (c.c3 + c.c4 * v_bar * v_bar));
  LateralLtv l;
  l.A << 1.0, v_bar / 20.0, 0.0, 1.0;
  l.B << factor * ((c.c8 + c.c9 * v_bar * v_bar) / 20.0 + v_bar / 800.0), factor / 20.0;
  return l;
}

}  // namespace platoon::ltv
