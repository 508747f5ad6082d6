#pragma once

#include "platoon/channels.hpp"
#include "platoon/control.hpp"
#include "platoon/ltv.hpp"

#include <span>
#include <vector>

namespace platoon::ltv {

// Plant plus every vehicle's observer, stacked [x; x_hat_1; ...; x_hat_k].
struct ClosedLoop {
  MatrixXd A_bar;
  MatrixXd B_bar;  // one column per vehicle watermark
  MatrixXd L_bar;  // acts on [0; z + a per receiver]
  int p = 0;
  std::vector<int> obs_offset;  // row offset of each observer block
  std::vector<int> obs_dim;
  int message_dim = 0;          // sum of message sizes, one receiver block of L_bar
};

ClosedLoop build_closed_loop(const LtvSystem& sys, const control::ControllerBank& bank,
                             std::span<const control::StepMatrices> mats, const channels::ChannelSet& H);

// Frozen closed loop with every vehicle at (v_bar, v_d_bar).
ClosedLoop nominal_closed_loop(Level level, int kappa, double v_bar, double v_d_bar,
                               const dynamics::DynamicsConstants& c = {});

double spectral_radius(const MatrixXd& A);

// [W C_j | 0] A_{n-1} ... A_{n-rho} B_{n-rho-1} e_i. window[0] supplies B, window[1..rho] the A's.
MatrixXd correlation_condition(Channel channel, int rho, std::span<const ClosedLoop> window, const MatrixXd& W,
                               const MatrixXd& C_j);

struct RhoChoice {
  int rho = 0;
  double norm = 0.0;
};

RhoChoice select_rho(const channels::ChannelSet& H, Channel channel, int rho_max, const ClosedLoop& nominal,
                     const MatrixXd& W, const MatrixXd& C_j);

}  // namespace platoon::ltv
