#include "platoon/closed_loop.hpp"

#include <Eigen/Eigenvalues>

#include <string>

namespace platoon::ltv {

namespace {

std::string block_name(const char* what, int i, int j) {
  return std::string(what) + "_(" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ")";
}

}  // namespace

ClosedLoop build_closed_loop(const LtvSystem& sys, const control::ControllerBank& bank,
                             std::span<const control::StepMatrices> mats, const channels::ChannelSet& H) {
  const int kappa = sys.kappa;
  if (bank.kappa != kappa || static_cast<int>(mats.size()) != kappa || H.kappa != kappa)
    throw AssemblyError("closed loop: kappa mismatch between system, bank and channel set");
  ClosedLoop cl;
  cl.p = sys.p();
  int total = cl.p;
  for (int i = 0; i < kappa; ++i) {
    cl.obs_offset.push_back(total);
    cl.obs_dim.push_back(bank.designs[i].dim());
    total += bank.designs[i].dim();
  }
  std::vector<int> msg_offset(kappa);
  for (int j = 0; j < kappa; ++j) {
    msg_offset[j] = cl.message_dim;
    cl.message_dim += static_cast<int>(measurement_matrix(bank.level, kappa, j).rows());
  }
  cl.A_bar = MatrixXd::Zero(total, total);
  cl.B_bar = MatrixXd::Zero(total, kappa);
  cl.L_bar = MatrixXd::Zero(total, kappa * cl.message_dim);
  cl.A_bar.topLeftCorner(cl.p, cl.p) = sys.A;
  for (int i = 0; i < kappa; ++i) {
    const auto& d = bank.designs[i];
    const auto& m = mats[i];
    const int off = cl.obs_offset[i], pi = cl.obs_dim[i];
    if (m.K.size() != pi) throw AssemblyError(block_name("K", i, i) + " width does not match observer");
    if (m.M.rows() != pi || m.M.cols() != pi) throw AssemblyError(block_name("M", i, i) + " has the wrong shape");
    cl.A_bar.block(0, off, cl.p, pi) = sys.B.col(i) * m.K;
    cl.A_bar.block(off, off, pi, pi) = m.M;
    cl.B_bar.block(0, i, cl.p, 1) = sys.B.col(i);
    cl.B_bar.block(off, i, pi, 1) = m.NB;
    for (int j : H.senders_of[i])
      if (!d.find(j)) throw AssemblyError(block_name("L", i, j) + " missing from the observer design");
    for (const auto& ch : d.channels) {
      if (!H.contains({i, ch.sender})) continue;
      if (ch.L.rows() != pi) throw AssemblyError(block_name("L", i, ch.sender) + " row count mismatch");
      cl.A_bar.block(off, 0, pi, cl.p) -= ch.L * ch.C;
      cl.L_bar.block(off, i * cl.message_dim + msg_offset[ch.sender], pi, ch.L.cols()) = ch.L;
    }
  }
  return cl;
}

ClosedLoop nominal_closed_loop(Level level, int kappa, double v_bar, double v_d_bar,
                               const dynamics::DynamicsConstants& c) {
  LtvSystem sys = build_AB_uniform(kappa, v_bar, v_d_bar, c);
  auto bank = control::ControllerBank::make(level, kappa);
  auto mats = bank.snapshot(sys);
  return build_closed_loop(sys, bank, mats, channels::active_set(level, kappa));
}

double spectral_radius(const MatrixXd& A) {
  Eigen::EigenSolver<MatrixXd> es(A, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

MatrixXd correlation_condition(Channel channel, int rho, std::span<const ClosedLoop> window, const MatrixXd& W,
                               const MatrixXd& C_j) {
  if (rho < 0) throw ArgumentError("correlation_condition: rho must be non-negative");
  if (static_cast<int>(window.size()) != rho + 1)
    throw ArgumentError("correlation_condition: window must hold rho + 1 closed loops");
  const ClosedLoop& first = window.front();
  if (channel.receiver < 0 || channel.receiver >= first.B_bar.cols())
    throw ArgumentError("correlation_condition: receiver out of range");
  VectorXd v = first.B_bar.col(channel.receiver);
  for (int t = 1; t <= rho; ++t) v = window[t].A_bar * v;
  MatrixXd WC = W * C_j;
  return WC * v.head(first.p);
}

RhoChoice select_rho(const channels::ChannelSet& H, Channel channel, int rho_max, const ClosedLoop& nominal,
                     const MatrixXd& W, const MatrixXd& C_j) {
  if (rho_max < 0) throw ArgumentError("select_rho: rho_max must be non-negative");
  if (!H.contains(channel)) throw ArgumentError("select_rho: channel " + channel.label() + " is not active");
  RhoChoice best{-1, 0.0};
  VectorXd v = nominal.B_bar.col(channel.receiver);
  MatrixXd WC = W * C_j;
  for (int rho = 0; rho <= rho_max; ++rho) {
    if (rho > 0) v = nominal.A_bar * v;
    double n = (WC * v.head(nominal.p)).norm();
    if (n > best.norm) best = {rho, n};
  }
  if (best.rho < 0)
    throw ArgumentError("channel " + channel.label() + " cannot be watermark-verified (no propagation)");
  return best;
}

}  // namespace platoon::ltv
