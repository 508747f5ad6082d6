#pragma once

#include "platoon/common.hpp"

#include <vector>

namespace platoon::dynamics {

// Fitted constants of the vehicle model; defaults are the published fit.
struct DynamicsConstants {
  double c1 = 1.6615e-5;
  double c2 = -1.9555e-7;
  double c3 = 3.619e-6;
  double c4 = 4.382e-7;
  double c5 = -8.1112e-2;
  double c6 = -1.4736;
  double c7 = 1.2569e-1;
  double c8 = 7.6459e-2;
  double c9 = -1.3991e-2;
};

struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double psi = 0.0;
  double v = 0.0;
};

struct VehicleInput {
  double delta = 0.0;
  double v_d = 0.0;
};

// Right-hand side of the model.
VehicleState state_derivative(const VehicleState& s, const VehicleInput& u, const DynamicsConstants& c);

// Longitudinal acceleration for speed v and desired speed v_d.
double longitudinal_accel(double v, double v_d, const DynamicsConstants& c);

// Yaw rate divided by speed for a given steering input.
double yaw_curvature(double v, double delta, const DynamicsConstants& c);

// Classical RK4 with the input held. vehicle/step only label errors.
VehicleState step_nonlinear(const VehicleState& s, const VehicleInput& u, const DynamicsConstants& c,
                            double dt, int vehicle = -1, long step = -1);

double wrap_angle(double a);

struct PlatoonGeometry {
  std::vector<double> d;       // kappa-1 gaps, centre to centre
  std::vector<double> v;       // kappa speeds
  std::vector<double> d_lead;  // kappa entries, d_lead[0] = 0
  double length = 0.5;

  static PlatoonGeometry from(std::vector<double> gaps, std::vector<double> speeds, double length = 0.5);
  int kappa() const { return static_cast<int>(v.size()); }
  void recompute_lead();
  // Stacked LTV ordering [d_1..d_{k-1}, v_1..v_k].
  VectorXd stacked() const;
};

double bumper_to_bumper(double d, double length);
bool is_crash(double bumper);

// Adds w ~ N(0, cov_w) in LTV coordinates.
PlatoonGeometry inject_process_noise(const PlatoonGeometry& g, const MatrixXd& cov_w, RngStream& rng);
PlatoonGeometry apply_process_noise(const PlatoonGeometry& g, const VectorXd& w);

// Selects the level's measurement of vehicle i (0-based) and adds noise.
VectorXd measure(const PlatoonGeometry& g, Level level, int i, const MatrixXd& cov_z, RngStream& rng);
VectorXd measure_exact(const PlatoonGeometry& g, Level level, int i);

}  // namespace platoon::dynamics
