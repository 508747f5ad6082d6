#include "platoon/control.hpp"

#include <cmath>
#include <string>

namespace platoon::control {

using ltv::speed_index;

namespace {

RowVectorXd unit_row(int p, int idx) {
  RowVectorXd r = RowVectorXd::Zero(p);
  r(idx) = 1.0;
  return r;
}

RowVectorXd lead_row(int kappa, int vehicle) {
  RowVectorXd r = RowVectorXd::Zero(2 * kappa - 1);
  for (int m = 0; m < vehicle; ++m) r(m) = 1.0;
  return r;
}

MatrixXd stack(const std::vector<RowVectorXd>& rows, int p) {
  MatrixXd N(static_cast<int>(rows.size()), p);
  for (std::size_t r = 0; r < rows.size(); ++r) N.row(static_cast<int>(r)) = rows[r];
  return N;
}

// Level-2 observed state rows.
MatrixXd level2_N(int kappa, int i) {
  const int p = 2 * kappa - 1;
  auto g = [&](int m) { return unit_row(p, m); };
  auto v = [&](int m) { return unit_row(p, speed_index(kappa, m)); };
  if (i == 0) return stack({g(0), v(0), v(1)}, p);
  if (i == 1) return stack({g(0), g(1), v(0), v(1), v(2)}, p);
  if (i == kappa - 1) return stack({lead_row(kappa, i), g(i - 1), v(0), v(i - 1), v(i)}, p);
  return stack({lead_row(kappa, i), g(i - 1), g(i), v(0), v(i - 1), v(i), v(i + 1)}, p);
}

MatrixXd level1_N(int kappa, int i) {
  const int p = 2 * kappa - 1;
  if (i == 0) return stack({unit_row(p, speed_index(kappa, 0))}, p);
  return stack({unit_row(p, i - 1), unit_row(p, speed_index(kappa, i - 1)), unit_row(p, speed_index(kappa, i))}, p);
}

std::vector<int> level2_senders(int kappa, int i) {
  std::vector<int> s;
  for (int j = 0; j < kappa; ++j)
    if (j == 0 || std::abs(i - j) <= 1) s.push_back(j);
  return s;
}

MatrixXd level3_L(int kappa, int j) {
  const int p = 2 * kappa - 1;
  if (j == 0) {
    MatrixXd L = MatrixXd::Zero(p, 1);
    L(0, 0) = -0.05;
    L(speed_index(kappa, 0), 0) = -0.1;
    return L;
  }
  MatrixXd L = MatrixXd::Zero(p, 2);
  L(j - 1, 0) = -0.5;
  L(j - 1, 1) = 0.05;
  if (j <= kappa - 2) L(j, 1) = -0.05;
  L(speed_index(kappa, j), 1) = -0.1;
  return L;
}

MatrixXd level2_L(int kappa, int i, int j) {
  const int mj = j == 0 ? kappa : 2;
  const int vcol = kappa - 1;  // leader message speed column
  if (i == 0) {
    MatrixXd L = MatrixXd::Zero(3, mj);
    if (j == 0) {
      L(0, vcol) = -0.05;
      L(1, vcol) = -0.1;
    } else {
      L(0, 0) = -0.5;
      L(0, 1) = 0.05;
      L(2, 1) = -0.1;
    }
    return L;
  }
  if (i == 1) {
    MatrixXd L = MatrixXd::Zero(5, mj);
    if (j == 0) {
      L(0, 0) = -0.25;
      L(0, vcol) = -0.05;
      L(2, vcol) = -0.1;
    } else if (j == 1) {
      L(0, 0) = -0.25;
      L(0, 1) = 0.05;
      L(1, 1) = -0.05;
      L(3, 1) = -0.1;
    } else {
      L(1, 0) = -0.5;
      L(1, 1) = 0.05;
      L(4, 1) = -0.1;
    }
    return L;
  }
  if (i == kappa - 1) {
    MatrixXd L = MatrixXd::Zero(5, mj);
    if (j == 0) {
      L(0, i - 1) = -0.5;
      L(0, vcol) = -0.05;
      L(2, vcol) = -0.1;
    } else if (j == i - 1) {
      L(1, 1) = -0.05;
      L(3, 1) = -0.1;
    } else {
      L(1, 0) = -0.5;
      L(0, 1) = 0.05;
      L(1, 1) = 0.05;
      L(4, 1) = -0.1;
    }
    return L;
  }
  MatrixXd L = MatrixXd::Zero(7, mj);
  if (j == 0) {
    L(0, i - 1) = -0.5;
    L(0, vcol) = -0.05;
    L(3, vcol) = -0.1;
  } else if (j == i - 1) {
    L(1, 1) = -0.05;
    L(4, 1) = -0.1;
  } else if (j == i) {
    L(1, 0) = -0.5;
    L(0, 1) = 0.05;
    L(1, 1) = 0.05;
    L(2, 1) = -0.05;
    L(5, 1) = -0.1;
  } else {
    L(2, 0) = -0.5;
    L(2, 1) = 0.05;
    L(6, 1) = -0.1;
  }
  return L;
}

// Rows of the sender message that the receiver also estimates.
MatrixXd level2_W(int kappa, int i, int j) {
  if (j == 0) {
    if (i == 0) {
      MatrixXd W = MatrixXd::Zero(1, kappa);
      W(0, kappa - 1) = 1.0;
      return W;
    }
    MatrixXd W = MatrixXd::Zero(2, kappa);
    W(0, i - 1) = 1.0;
    W(1, kappa - 1) = 1.0;
    return W;
  }
  if (i == j + 1) {
    MatrixXd W = MatrixXd::Zero(1, 2);
    W(0, 1) = 1.0;
    return W;
  }
  return MatrixXd::Identity(2, 2);
}

// U chosen row by row so that U N = W C.
MatrixXd match_rows(const MatrixXd& N, const MatrixXd& WC, Level level, int i, int j) {
  MatrixXd U = MatrixXd::Zero(WC.rows(), N.rows());
  for (int r = 0; r < WC.rows(); ++r) {
    int hit = -1;
    for (int q = 0; q < N.rows(); ++q)
      if (N.row(q) == WC.row(r)) {
        hit = q;
        break;
      }
    if (hit < 0)
      throw AssemblyError("no observed component for common state row " + std::to_string(r) + " of channel (" +
                          std::to_string(i + 1) + "," + std::to_string(j + 1) + ") at level " +
                          std::to_string(to_int(level)));
    U(r, hit) = 1.0;
  }
  return U;
}

}  // namespace

const ChannelMaps* VehicleDesign::find(int sender) const {
  for (const auto& c : channels)
    if (c.sender == sender) return &c;
  return nullptr;
}

VehicleDesign make_design(Level level, int kappa, int i) {
  if (kappa < 2) throw ConfigError("platoon needs at least 2 vehicles");
  if (i < 0 || i >= kappa) throw ConfigError("vehicle index out of range");
  if (level == Level::LeaderFollow && kappa < 3)
    throw ConfigError("level 2 needs at least 3 vehicles (its observer layout has distinct vehicle-2 and last roles)");
  VehicleDesign d;
  d.level = level;
  d.kappa = kappa;
  d.vehicle = i;
  const int p = 2 * kappa - 1;
  switch (level) {
    case Level::Full: {
      d.N = MatrixXd::Identity(p, p);
      for (int j = 0; j < kappa; ++j) {
        ChannelMaps c;
        c.sender = j;
        c.C = ltv::measurement_matrix(Level::Full, kappa, j);
        c.L = level3_L(kappa, j);
        c.W = MatrixXd::Identity(c.C.rows(), c.C.rows());
        c.U = match_rows(d.N, c.W * c.C, level, i, j);
        d.channels.push_back(std::move(c));
      }
      d.k_stack = MatrixXd(kappa, p);
      for (int j = 0; j < kappa; ++j) d.k_stack.row(j) = gain_level3(kappa, j);
      d.lc_sum = MatrixXd::Zero(p, p);
      for (const auto& c : d.channels) d.lc_sum += c.L * c.C;
      break;
    }
    case Level::LeaderFollow: {
      d.N = level2_N(kappa, i);
      for (int j : level2_senders(kappa, i)) {
        ChannelMaps c;
        c.sender = j;
        c.C = ltv::measurement_matrix(Level::LeaderFollow, kappa, j);
        c.L = level2_L(kappa, i, j);
        c.W = level2_W(kappa, i, j);
        c.U = match_rows(d.N, c.W * c.C, level, i, j);
        d.channels.push_back(std::move(c));
      }
      break;
    }
    case Level::Acc: {
      d.N = level1_N(kappa, i);
      ChannelMaps c;
      c.sender = i;
      c.C = ltv::measurement_matrix(Level::Acc, kappa, i);
      if (i == 0) {
        c.L = MatrixXd::Constant(1, 1, -0.1);
      } else {
        c.L = MatrixXd(3, 2);
        c.L << -0.5, 0.05, -1.2, 0.0, 0.0, -0.1;
      }
      d.channels.push_back(std::move(c));
      break;
    }
  }
  for (const auto& c : d.channels)
    if (c.L.rows() != d.dim() || c.L.cols() != c.C.rows())
      throw AssemblyError("observer gain L_(" + std::to_string(i + 1) + "," + std::to_string(c.sender + 1) +
                          ") has the wrong shape");
  return d;
}

RowVectorXd gain_level3(int kappa, int i) {
  if (kappa < 2) throw ConfigError("gain_level3: kappa must be at least 2");
  RowVectorXd K(2 * kappa - 1);
  for (int m = 0; m < kappa - 1; ++m)
    K(m) = m < i ? 0.5 / std::ldexp(1.0, i - m) : -0.5 / std::ldexp(1.0, m - i);
  for (int m = 0; m < kappa; ++m)
    K(speed_index(kappa, m)) = m < i ? 0.1 / std::ldexp(1.0, i - m) : -0.1 / std::ldexp(1.0, m - i);
  return K;
}

RowVectorXd gain_level2_prescale(int kappa, int i) {
  RowVectorXd K;
  if (i == 0) {
    K.resize(3);
    K << 0.0, -2.92, 0.0;
  } else if (i == 1) {
    K.resize(5);
    K << 1.32, 0.0, 2.92, -2.92, 0.0;
  } else if (i == kappa - 1) {
    K.resize(5);
    K << 0.72, 0.6, 1.32, 1.6, -2.92;
  } else {
    K.resize(7);
    K << 0.72, 0.6, 0.0, 1.32, 1.6, -2.92, 0.0;
  }
  return K;
}

RowVectorXd gain_level2(int kappa, int i, double v_bar, double v_d_bar, const dynamics::DynamicsConstants& c) {
  double den = -1.2 * (c.c6 + 2.0 * c.c7 * (v_bar - v_d_bar));
  if (den == 0.0) throw ArgumentError("level-2 gain is singular at this reference");
  return gain_level2_prescale(kappa, i) / den;
}

RowVectorXd gain_level1(int /*kappa*/, int i) {
  RowVectorXd K;
  if (i == 0) {
    K = RowVectorXd::Constant(1, -1.0);
  } else {
    K.resize(3);
    K << 1.0, 1.2, -1.2;
  }
  return K;
}

MatrixXd level2_block(int kappa, int i, std::span<const ltv::LongitudinalCoeffs> k) {
  auto s = [&](int m) { return k[m].sigma_obs; };
  auto t = [&](int m) { return k[m].theta; };
  if (i == 0) {
    MatrixXd B(3, 3);
    B << 0.5, s(0), -s(1), 0, t(0), 0, 0, 0, t(1);
    return B;
  }
  if (i == 1) {
    MatrixXd B = MatrixXd::Zero(5, 5);
    B(0, 0) = 0.5;
    B(1, 1) = 0.5;
    B(0, 2) = s(0);
    B(0, 3) = -s(1);
    B(1, 3) = s(1);
    B(1, 4) = -s(2);
    B(2, 2) = t(0);
    B(3, 3) = t(1);
    B(4, 4) = t(2);
    return B;
  }
  if (i == kappa - 1) {
    MatrixXd B = MatrixXd::Zero(5, 5);
    B(0, 0) = 0.5;
    B(1, 1) = 0.5;
    B(0, 2) = s(0);
    B(0, 4) = -s(i);
    B(1, 3) = s(i - 1);
    B(1, 4) = -s(i);
    B(2, 2) = t(0);
    B(3, 3) = t(i - 1);
    B(4, 4) = t(i);
    return B;
  }
  MatrixXd B = MatrixXd::Zero(7, 7);
  B(0, 0) = B(1, 1) = B(2, 2) = 0.5;
  B(0, 3) = s(0);
  B(0, 5) = -s(i);
  B(1, 4) = s(i - 1);
  B(1, 5) = -s(i);
  B(2, 5) = s(i);
  B(2, 6) = -s(i + 1);
  B(3, 3) = t(0);
  B(4, 4) = t(i - 1);
  B(5, 5) = t(i);
  B(6, 6) = t(i + 1);
  return B;
}

MatrixXd level1_block(int /*kappa*/, int i, std::span<const ltv::LongitudinalCoeffs> k) {
  if (i == 0) return MatrixXd::Constant(1, 1, k[0].theta);
  MatrixXd B(3, 3);
  B << 0.5, k[i - 1].lag, -k[i].sigma_obs, -1.2, k[i - 1].beta, 0.0, 0.0, 0.0, k[i].theta;
  return B;
}

StepMatrices step_matrices(const VehicleDesign& d, const ltv::LtvSystem& sys) {
  if (sys.kappa != d.kappa) throw AssemblyError("system and design disagree on kappa");
  StepMatrices m;
  const int i = d.vehicle;
  m.NB = d.N * sys.B.col(i);
  switch (d.level) {
    case Level::Full: {
      m.K = d.k_stack.row(i);
      m.M = sys.A + d.lc_sum;
      m.M.noalias() += sys.B * d.k_stack;
      break;
    }
    case Level::LeaderFollow: {
      double den = -1.2 * sys.coeffs[i].alpha;
      if (den == 0.0) throw ArgumentError("level-2 gain is singular at this reference");
      m.K = gain_level2_prescale(d.kappa, i) / den;
      m.M = m.NB * m.K + level2_block(d.kappa, i, sys.coeffs);
      break;
    }
    case Level::Acc: {
      m.K = gain_level1(d.kappa, i);
      m.M = m.NB * m.K + level1_block(d.kappa, i, sys.coeffs);
      break;
    }
  }
  return m;
}

ControllerBank ControllerBank::make(Level level, int kappa) {
  ControllerBank b;
  b.level = level;
  b.kappa = kappa;
  for (int i = 0; i < kappa; ++i) b.designs.push_back(make_design(level, kappa, i));
  return b;
}

std::vector<StepMatrices> ControllerBank::snapshot(const ltv::LtvSystem& sys) const {
  std::vector<StepMatrices> out;
  for (const auto& d : designs) out.push_back(step_matrices(d, sys));
  return out;
}

ObserverState observer_step(const VehicleDesign& d, const ObserverState& state, const StepMatrices& m, double e,
                            std::span<const VectorXd> messages) {
  if (messages.size() != d.channels.size())
    throw ConfigError("observer_step: expected one message per active channel");
  ObserverState out;
  out.level = state.level;
  out.x_hat = m.M * state.x_hat + m.NB * e;
  for (std::size_t c = 0; c < d.channels.size(); ++c) {
    const auto& ch = d.channels[c];
    if (messages[c].size() != ch.L.cols())
      throw ConfigError("stale or missing message on channel (" + std::to_string(d.vehicle + 1) + "," +
                        std::to_string(ch.sender + 1) + ")");
    out.x_hat.noalias() -= ch.L * messages[c];
  }
  return out;
}

double control_input(const RowVectorXd& K, const VectorXd& x_hat, double e, double u_ref) {
  if (K.size() != x_hat.size()) throw ConfigError("control_input: gain and estimate dimensions differ");
  return u_ref + K.dot(x_hat) + e;
}

double lateral_control(const LateralEstimate& est) { return -0.25 * est.lat - 1.0 * est.heading; }

Eigen::Matrix2d lateral_observer_gain(double v_bar) {
  Eigen::Matrix2d Lo;
  Lo << 0.3, v_bar / 20.0, 0.0, 0.2;
  return Lo;
}

LateralEstimate lateral_observer_step(const LateralEstimate& est, double v_bar, double delta_bar, double d_delta,
                                      const Eigen::Vector2d& y_lat, const dynamics::DynamicsConstants& c) {
  ltv::LateralLtv sys = ltv::build_lateral(v_bar, delta_bar, c);
  Eigen::Matrix2d Lo = lateral_observer_gain(v_bar);
  Eigen::Vector2d x(est.lat, est.heading);
  Eigen::Vector2d nx = (sys.A - Lo) * x + sys.B * d_delta + Lo * y_lat;
  return {nx(0), nx(1)};
}

std::vector<int> level1_slots(Level from, int kappa, int i) {
  switch (from) {
    case Level::Full:
      if (i == 0) return {speed_index(kappa, 0)};
      return {i - 1, speed_index(kappa, i - 1), speed_index(kappa, i)};
    case Level::LeaderFollow:
      if (i == 0) return {1};
      if (i == 1) return {0, 2, 3};
      if (i == kappa - 1) return {1, 3, 4};
      return {1, 4, 5};
    case Level::Acc:
      if (i == 0) return {0};
      return {0, 1, 2};
  }
  return {};
}

ObserverState reformat_estimate(Level from, const VectorXd& x_hat, int i, int kappa,
                                const std::optional<Rebase>& rebase) {
  std::vector<int> slots = level1_slots(from, kappa, i);
  ObserverState out;
  out.level = Level::Acc;
  out.x_hat.resize(static_cast<int>(slots.size()));
  for (std::size_t q = 0; q < slots.size(); ++q) {
    if (slots[q] >= x_hat.size()) throw ConfigError("reformat_estimate: source estimate too short");
    out.x_hat(static_cast<int>(q)) = x_hat(slots[q]);
  }
  if (rebase) {
    const Rebase& r = *rebase;
    if (i == 0) {
      out.x_hat(0) += r.v_own_old - r.v_own_new;
    } else {
      out.x_hat(0) += r.gap_old - r.gap_new;
      out.x_hat(1) += r.v_prev_old - r.v_prev_new;
      out.x_hat(2) += r.v_own_old - r.v_own_new;
    }
  }
  return out;
}

}  // namespace platoon::control
