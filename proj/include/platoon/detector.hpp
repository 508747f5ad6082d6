#pragma once

#include "platoon/channels.hpp"
#include "platoon/common.hpp"

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace platoon::detector {

VectorXd residual(const MatrixXd& U, const MatrixXd& W, const VectorXd& x_hat, const VectorXd& s);

// r_bar = V [e_delayed; r]
VectorXd normalize(const MatrixXd& V, const VectorXd& e_delayed, const VectorXd& r);

// S^(-1/2) by symmetric eigendecomposition; eigenvalues floored at 1e-12 of the largest.
MatrixXd inverse_sqrt(const MatrixXd& S, bool* floored = nullptr);

inline constexpr double kInfiniteNll = std::numeric_limits<double>::infinity();

// (1 - l + m) log|S| + tr S with S = P G^-1 P^T; +inf when S is singular.
double nll(const MatrixXd& P, const MatrixXd& G);
double nll_from_S(const MatrixXd& S, int ell);

struct ChannelTable {
  Channel channel;
  int r_dim = 0;   // residual size
  int q_dim = 1;   // watermark size
  int rho = 0;
  std::vector<MatrixXd> V;      // per V bin (one entry for the LTI form)
  std::vector<MatrixXd> G;      // per G bin
  std::vector<MatrixXd> G_chol; // lower Cholesky factors of G
  std::vector<long> f;          // samples per V bin
  std::vector<double> b;        // smoothing weight sum per V bin
  std::vector<double> g;        // straddle counts per G bin
  std::vector<std::uint8_t> v_filled, g_filled, v_floored;
  double threshold = std::numeric_limits<double>::quiet_NaN();

  int dim() const { return r_dim + q_dim; }
  bool has_V() const { return !V.empty(); }
  bool has_G() const { return !G.empty(); }
  bool monitored() const { return rho >= 0; }  // rho -1: no watermark path, never tested
};

struct NormalizationTables {
  int kappa = 0;
  Level level = Level::Full;
  int ell = 25;
  double fa_rate = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t trajectory_hash = 0;
  long trajectory_size = 0;
  int v_bin = 10;
  int g_bin = 200;
  double decay = 0.8;
  int half_width = 10;
  bool lti = false;
  std::vector<ChannelTable> channels;  // same order as the level's channel set

  long v_bins() const { return (trajectory_size + v_bin - 1) / v_bin; }
  long g_bins() const { return (trajectory_size + g_bin - 1) / g_bin; }
  const MatrixXd& V_at(int c, long k) const;
  const MatrixXd& G_chol_at(int c, long k) const;
  const MatrixXd& G_at(int c, long k) const;
  bool thresholds_ready() const;
  void factor_G();  // fills G_chol

  void save(const std::string& path) const;
  static NormalizationTables load(const std::string& path, std::uint64_t expected_hash);
  bool operator==(const NormalizationTables& o) const;
};

// Empty tables carrying channel dimensions and delays.
NormalizationTables skeleton(Level level, int kappa, const std::vector<int>& rho, const std::vector<int>& r_dims,
                             std::uint64_t hash, long traj_size, int ell = 25, int v_bin = 10, int g_bin = 200);

// Binned sample covariance (one channel).
class CovarianceAccumulator {
 public:
  CovarianceAccumulator() = default;
  CovarianceAccumulator(int dim, long bins);
  void add(long bin, const VectorXd& zeta);
  void merge(const CovarianceAccumulator& o);
  MatrixXd sigma(long bin) const;  // zero when empty
  long count(long bin) const { return count_[bin]; }
  long bins() const { return static_cast<long>(count_.size()); }
  int dim() const { return dim_; }

 private:
  int dim_ = 0;
  std::vector<MatrixXd> sum_;
  std::vector<long> count_;
};

// Weighted +-half_width average of the binned covariances, then inverse square root.
// Throws CalibrationError if singular or unsupported.
MatrixXd smooth_invert(const CovarianceAccumulator& acc, long bin, double decay, int half_width, const Channel& ch,
                       double* weight_sum = nullptr, bool* floored = nullptr);

void finalize_V(ChannelTable& t, const CovarianceAccumulator& acc, double decay, int half_width);

// Interpolated ensemble Gram average over straddling steps, binned over hi-res indices.
class AutocorrAccumulator {
 public:
  AutocorrAccumulator() = default;
  // size: trajectory length in hi-res indices; windows at unwrapped indices are wrapped into it.
  AutocorrAccumulator(int ell, int dim, long size, int bin_width);
  // Window P_n (dim x ell) at hi-res index h_n. Windows must arrive in time order per realization.
  void add_window(const MatrixXd& P, long h);
  void end_realization();
  void merge(const AutocorrAccumulator& o);
  double count(long bin) const { return g_[bin]; }
  long bins() const { return static_cast<long>(g_.size()); }
  MatrixXd average(long bin) const;  // symmetric, scaled by 1/(dim g)

 private:
  void flush_pending();
  void credit(long h0, long h1, std::vector<std::pair<long, double>>& bins0,
              std::vector<std::pair<long, double>>& bins1);

  int ell_ = 0, dim_ = 0, width_ = 1;
  long size_ = 0;
  std::vector<MatrixXd> sum_;  // lower triangle accumulated
  std::vector<double> g_;
  bool have_prev_ = false;
  MatrixXd prev_P_;
  long prev_h_ = 0;
  std::vector<std::pair<long, double>> prev_weights_;
};

void finalize_G(ChannelTable& t, const AutocorrAccumulator& acc);

struct ThresholdResult {
  double threshold;
  long samples;
};

// (1 - fa_rate) empirical quantile of pooled values.
ThresholdResult calibrate_threshold(std::vector<double> values, double fa_rate);

struct DetectionPolicy {
  int window = 40;
  int count = 24;
};

struct ChannelDetection {
  std::array<std::uint8_t, 40> ring{};
  int head = 0;
  int filled = 0;
  int sum = 0;
  double latest = std::numeric_limits<double>::quiet_NaN();
  long first_exceed = -1;
};

struct DetectionState {
  std::vector<ChannelDetection> channels;
  bool fired = false;
  long fired_step = -1;
  int fired_channel = -1;

  explicit DetectionState(std::size_t n = 0) : channels(n) {}
};

struct DetectStep {
  bool exceeded = false;
  bool degrade = false;
};

DetectStep detect_step(DetectionState& state, int channel, double nll_value, double threshold,
                       const DetectionPolicy& policy, long step);

// NLL of window P at hi-res index k using the stored G factor.
double window_nll(const NormalizationTables& t, int c, long k, const MatrixXd& P);

// Trajectory-averaged V with G = I; thresholds are left for separate calibration.
NormalizationTables lti_baseline(const NormalizationTables& ltv, long steps);

}  // namespace platoon::detector
