#include "platoon/dynamics.hpp"

#include <cmath>
#include <sstream>

namespace platoon::dynamics {

double longitudinal_accel(double v, double v_d, const DynamicsConstants& c) {
  double x = v - v_d;
  return c.c5 + c.c6 * x + c.c7 * x * x;
}

double yaw_curvature(double v, double delta, const DynamicsConstants& c) {
  double den = c.c3 + c.c4 * v * v;
  return std::tan(c.c1 * delta + c.c2) / den;
}

VehicleState state_derivative(const VehicleState& s, const VehicleInput& u, const DynamicsConstants& c) {
  double den = c.c3 + c.c4 * s.v * s.v;
  double psi_dot = std::tan(c.c1 * u.delta + c.c2) * s.v / den;
  double slip = psi_dot * (c.c8 + c.c9 * s.v * s.v);
  double cs = std::cos(s.psi), sn = std::sin(s.psi);
  VehicleState d;
  d.x = s.v * cs - slip * sn;
  d.y = s.v * sn + slip * cs;
  d.psi = psi_dot;
  d.v = longitudinal_accel(s.v, u.v_d, c);
  return d;
}

namespace {

VehicleState axpy(const VehicleState& s, double h, const VehicleState& k) {
  return {s.x + h * k.x, s.y + h * k.y, s.psi + h * k.psi, s.v + h * k.v};
}

bool finite(const VehicleState& s) {
  return std::isfinite(s.x) && std::isfinite(s.y) && std::isfinite(s.psi) && std::isfinite(s.v);
}

[[noreturn]] void fail(int vehicle, long step, const char* what) {
  std::ostringstream os;
  os << "integration failure (" << what << ") for vehicle " << vehicle + 1 << " at step " << step;
  throw IntegrationError(os.str());
}

}  // namespace

double wrap_angle(double a) {
  double w = std::atan2(std::sin(a), std::cos(a));
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

VehicleState step_nonlinear(const VehicleState& s, const VehicleInput& u, const DynamicsConstants& c,
                            double dt, int vehicle, long step) {
  if (!(dt > 0.0)) throw ArgumentError("step_nonlinear: dt must be positive");
  if (!std::isfinite(u.delta) || !std::isfinite(u.v_d)) fail(vehicle, step, "non-finite input");
  if (c.c3 + c.c4 * s.v * s.v == 0.0) fail(vehicle, step, "singular steering denominator");
  VehicleState k1 = state_derivative(s, u, c);
  VehicleState k2 = state_derivative(axpy(s, dt / 2, k1), u, c);
  VehicleState k3 = state_derivative(axpy(s, dt / 2, k2), u, c);
  VehicleState k4 = state_derivative(axpy(s, dt, k3), u, c);
  if (!finite(k1) || !finite(k2) || !finite(k3) || !finite(k4)) fail(vehicle, step, "non-finite derivative");
  VehicleState out;
  out.x = s.x + dt / 6 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x);
  out.y = s.y + dt / 6 * (k1.y + 2 * k2.y + 2 * k3.y + k4.y);
  out.psi = wrap_angle(s.psi + dt / 6 * (k1.psi + 2 * k2.psi + 2 * k3.psi + k4.psi));
  out.v = s.v + dt / 6 * (k1.v + 2 * k2.v + 2 * k3.v + k4.v);
  if (!finite(out)) fail(vehicle, step, "non-finite state");
  return out;
}

PlatoonGeometry PlatoonGeometry::from(std::vector<double> gaps, std::vector<double> speeds, double length) {
  if (speeds.size() < 1 || gaps.size() + 1 != speeds.size())
    throw ConfigError("platoon geometry needs kappa-1 gaps for kappa speeds");
  PlatoonGeometry g;
  g.d = std::move(gaps);
  g.v = std::move(speeds);
  g.length = length;
  g.recompute_lead();
  return g;
}

void PlatoonGeometry::recompute_lead() {
  d_lead.assign(v.size(), 0.0);
  for (std::size_t i = 1; i < v.size(); ++i) d_lead[i] = d_lead[i - 1] + d[i - 1];
}

VectorXd PlatoonGeometry::stacked() const {
  const int k = kappa();
  VectorXd x(2 * k - 1);
  for (int i = 0; i < k - 1; ++i) x(i) = d[i];
  for (int i = 0; i < k; ++i) x(k - 1 + i) = v[i];
  return x;
}

double bumper_to_bumper(double d, double length) {
  if (length < 0.0) throw ArgumentError("vehicle length must be non-negative");
  return d - length;
}

bool is_crash(double bumper) { return bumper <= 0.0; }

PlatoonGeometry apply_process_noise(const PlatoonGeometry& g, const VectorXd& w) {
  const int k = g.kappa();
  if (w.size() != 2 * k - 1) throw ConfigError("process noise dimension mismatch");
  PlatoonGeometry out = g;
  for (int i = 0; i < k - 1; ++i) out.d[i] += w(i);
  for (int i = 0; i < k; ++i) out.v[i] += w(k - 1 + i);
  out.recompute_lead();
  return out;
}

PlatoonGeometry inject_process_noise(const PlatoonGeometry& g, const MatrixXd& cov_w, RngStream& rng) {
  const int p = 2 * g.kappa() - 1;
  if (cov_w.rows() != p || cov_w.cols() != p) throw ConfigError("process covariance must be (2k-1) square");
  GaussianSampler sampler(cov_w);
  return apply_process_noise(g, sampler.sample(rng));
}

VectorXd measure_exact(const PlatoonGeometry& g, Level level, int i) {
  const int k = g.kappa();
  if (i < 0 || i >= k) throw ConfigError("measure: vehicle index out of range");
  if (measurement_model(level, i) == MeasurementModel::LeaderBroadcast) {
    VectorXd y(k);
    for (int m = 1; m < k; ++m) y(m - 1) = g.d_lead[m];
    y(k - 1) = g.v[0];
    return y;
  }
  if (i == 0) return VectorXd::Constant(1, g.v[0]);
  VectorXd y(2);
  y << g.d[i - 1], g.v[i];
  return y;
}

VectorXd measure(const PlatoonGeometry& g, Level level, int i, const MatrixXd& cov_z, RngStream& rng) {
  VectorXd y = measure_exact(g, level, i);
  if (cov_z.rows() != y.size() || cov_z.cols() != y.size())
    throw ConfigError("measure: noise covariance dimension does not match measurement");
  return y + GaussianSampler(cov_z).sample(rng);
}

}  // namespace platoon::dynamics
