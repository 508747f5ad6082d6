#pragma once

#include "platoon/common.hpp"
#include "platoon/dynamics.hpp"
#include "platoon/ltv.hpp"

#include <optional>
#include <span>
#include <vector>

namespace platoon::control {

// Per-channel observer gain and residual maps seen by one receiver.
struct ChannelMaps {
  int sender = 0;
  MatrixXd L;  // p_i x m_j
  MatrixXd U;  // common-state rows from the receiver's observed state (empty at level 1)
  MatrixXd W;  // common-state rows from the sender's message (empty at level 1)
  MatrixXd C;  // sender's measurement matrix
};

struct VehicleDesign {
  Level level = Level::Full;
  int kappa = 0;
  int vehicle = 0;
  MatrixXd N;  // observed state = N x
  std::vector<ChannelMaps> channels;  // ordered by sender
  MatrixXd k_stack;  // level 3: every vehicle's gain, one row each
  MatrixXd lc_sum;   // level 3: sum of L C over all senders

  int dim() const { return static_cast<int>(N.rows()); }
  const ChannelMaps* find(int sender) const;
};

VehicleDesign make_design(Level level, int kappa, int vehicle);

RowVectorXd gain_level3(int kappa, int i);
RowVectorXd gain_level2(int kappa, int i, double v_bar, double v_d_bar, const dynamics::DynamicsConstants& c = {});
RowVectorXd gain_level2_prescale(int kappa, int i);
RowVectorXd gain_level1(int kappa, int i);

// Hand-written M blocks (without the N B K term).
MatrixXd level2_block(int kappa, int i, std::span<const ltv::LongitudinalCoeffs> k);
MatrixXd level1_block(int kappa, int i, std::span<const ltv::LongitudinalCoeffs> k);

struct StepMatrices {
  RowVectorXd K;
  MatrixXd M;
  VectorXd NB;  // N B_i
};

// Gains and update matrix for one vehicle given the system it linearizes about.
StepMatrices step_matrices(const VehicleDesign& d, const ltv::LtvSystem& sys);

struct ControllerBank {
  Level level = Level::Full;
  int kappa = 0;
  std::vector<VehicleDesign> designs;

  static ControllerBank make(Level level, int kappa);
  std::vector<StepMatrices> snapshot(const ltv::LtvSystem& sys) const;
};

struct ObserverState {
  VectorXd x_hat;
  Level level = Level::Full;
};

// x+ = M x + N B_i e - sum_j L_(i,j) s_(i,j); messages follow d.channels order.
ObserverState observer_step(const VehicleDesign& d, const ObserverState& state, const StepMatrices& m, double e,
                            std::span<const VectorXd> messages);

double control_input(const RowVectorXd& K, const VectorXd& x_hat, double e, double u_ref);

struct LateralEstimate {
  double lat = 0.0;
  double heading = 0.0;
};

double lateral_control(const LateralEstimate& est);
Eigen::Matrix2d lateral_observer_gain(double v_bar);
LateralEstimate lateral_observer_step(const LateralEstimate& est, double v_bar, double delta_bar, double d_delta,
                                      const Eigen::Vector2d& y_lat, const dynamics::DynamicsConstants& c = {});

// Absolute references needed to re-base deviations at a spacing-policy change.
struct Rebase {
  double gap_old = 0.0, gap_new = 0.0;          // reference gap ahead of the vehicle
  double v_prev_old = 0.0, v_prev_new = 0.0;    // predecessor speed reference
  double v_own_old = 0.0, v_own_new = 0.0;      // own speed reference
};

// Slots of (d_{i-1}, v_{i-1}, v_i), or v_1 for the leader, in a level's observed state.
std::vector<int> level1_slots(Level from, int kappa, int i);

ObserverState reformat_estimate(Level from, const VectorXd& x_hat, int i, int kappa,
                                const std::optional<Rebase>& rebase = std::nullopt);

}  // namespace platoon::control
