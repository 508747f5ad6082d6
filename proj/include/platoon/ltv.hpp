#pragma once

#include "platoon/common.hpp"
#include "platoon/dynamics.hpp"

#include <span>
#include <vector>

namespace platoon::ltv {

struct LongitudinalCoeffs {
  double alpha = 0.0;
  double beta = 0.0;
  double theta = 0.0;      // beta - 0.1
  double sigma_obs = 0.0;  // (beta - 1)/alpha - 0.05
  double lag = 0.0;        // (beta - 1)/alpha
};

LongitudinalCoeffs longitudinal_coeffs(double v_bar, double v_d_bar, const dynamics::DynamicsConstants& c = {});

struct SpeedRef {
  double v = 0.0;
  double v_d = 0.0;
};

// Longitudinal LTV model over [d_1..d_{k-1}, v_1..v_k].
struct LtvSystem {
  int kappa = 0;
  MatrixXd A;
  MatrixXd B;  // column i is B_i
  std::vector<LongitudinalCoeffs> coeffs;
  int p() const { return 2 * kappa - 1; }
  VectorXd B_col(int i) const { return B.col(i); }
};

LtvSystem build_AB(std::span<const SpeedRef> refs, const dynamics::DynamicsConstants& c = {});
LtvSystem build_AB_uniform(int kappa, double v_bar, double v_d_bar, const dynamics::DynamicsConstants& c = {});

// Index helpers into the stacked state (0-based vehicles and gaps).
inline int gap_index(int m) { return m; }
inline int speed_index(int kappa, int i) { return kappa - 1 + i; }

MatrixXd measurement_matrix(MeasurementModel model, int kappa, int i);
MatrixXd measurement_matrix(Level level, int kappa, int i);

struct LateralLtv {
  Eigen::Matrix2d A;
  Eigen::Vector2d B;
};

LateralLtv build_lateral(double v_bar, double delta_bar, const dynamics::DynamicsConstants& c = {});

}  // namespace platoon::ltv
