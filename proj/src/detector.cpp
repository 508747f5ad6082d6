#include "platoon/detector.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace platoon::detector {

namespace {

std::string where(const Channel& ch, long bin) {
  return "channel (" + std::to_string(ch.receiver + 1) + "," + std::to_string(ch.sender + 1) + ") bin " +
         std::to_string(bin);
}

long wrap_index(long k, long n) {
  if (n <= 0) return k;
  long w = k % n;
  return w < 0 ? w + n : w;
}

template <class Flag>
void fill_nearest(std::vector<MatrixXd>& table, std::vector<Flag>& filled, const std::vector<bool>& have,
                  const std::string& what) {
  const long n = static_cast<long>(table.size());
  long any = -1;
  for (long b = 0; b < n; ++b)
    if (have[b]) {
      any = b;
      break;
    }
  if (any < 0) throw CalibrationError(what + ": no calibrated index at all");
  std::vector<long> left(n, -1), right(n, -1);
  for (long b = 0, last = -1; b < n; ++b) {
    if (have[b]) last = b;
    left[b] = last;
  }
  for (long b = n - 1, last = -1; b >= 0; --b) {
    if (have[b]) last = b;
    right[b] = last;
  }
  for (long b = 0; b < n; ++b) {
    if (have[b]) continue;
    long src = left[b];
    if (src < 0 || (right[b] >= 0 && right[b] - b < b - src)) src = right[b];
    table[b] = table[src];
    filled[b] = 1;
  }
}

}  // namespace

VectorXd residual(const MatrixXd& U, const MatrixXd& W, const VectorXd& x_hat, const VectorXd& s) {
  return U * x_hat - W * s;
}

VectorXd normalize(const MatrixXd& V, const VectorXd& e_delayed, const VectorXd& r) {
  VectorXd z(e_delayed.size() + r.size());
  z << e_delayed, r;
  return V * z;
}

MatrixXd inverse_sqrt(const MatrixXd& S, bool* floored) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (S + S.transpose()));
  if (es.info() != Eigen::Success) throw CalibrationError("eigendecomposition failed");
  VectorXd lam = es.eigenvalues();
  double top = lam.maxCoeff();
  if (!(top > 0.0)) throw CalibrationError("matrix is singular");
  const double floor = 1e-12 * top;
  bool hit = false;
  for (int q = 0; q < lam.size(); ++q)
    if (lam(q) < floor) {
      lam(q) = floor;
      hit = true;
    }
  if (floored) *floored = hit;
  return es.eigenvectors() * lam.cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

double nll_from_S(const MatrixXd& S, int ell) {
  const int m = static_cast<int>(S.rows());
  Eigen::LLT<MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) return kInfiniteNll;
  const auto& L = llt.matrixLLT();
  double logdet = 0.0;
  for (int q = 0; q < m; ++q) {
    double d = L(q, q);
    if (!(d > 0.0) || !std::isfinite(d)) return kInfiniteNll;
    logdet += 2.0 * std::log(d);
  }
  return (1.0 - ell + m) * logdet + S.trace();
}

namespace {

double nll_chol(const MatrixXd& P, const MatrixXd& G_lower) {
  MatrixXd Y = G_lower.triangularView<Eigen::Lower>().solve(P.transpose());
  MatrixXd S = Y.transpose() * Y;
  return nll_from_S(S, static_cast<int>(P.cols()));
}

}  // namespace

double nll(const MatrixXd& P, const MatrixXd& G) {
  if (G.rows() != P.cols() || G.cols() != P.cols()) throw ArgumentError("nll: G must be l x l");
  Eigen::LLT<MatrixXd> llt(G);
  if (llt.info() != Eigen::Success) throw ArgumentError("nll: G is not positive definite");
  return nll_chol(P, llt.matrixL());
}

const MatrixXd& NormalizationTables::V_at(int c, long k) const {
  const auto& V = channels[c].V;
  if (V.size() == 1) return V.front();
  long b = wrap_index(k, trajectory_size) / v_bin;
  return V[std::min<long>(b, static_cast<long>(V.size()) - 1)];
}

const MatrixXd& NormalizationTables::G_at(int c, long k) const {
  const auto& G = channels[c].G;
  if (G.size() == 1) return G.front();
  long b = wrap_index(k, trajectory_size) / g_bin;
  return G[std::min<long>(b, static_cast<long>(G.size()) - 1)];
}

const MatrixXd& NormalizationTables::G_chol_at(int c, long k) const {
  const auto& G = channels[c].G_chol;
  if (G.size() == 1) return G.front();
  long b = wrap_index(k, trajectory_size) / g_bin;
  return G[std::min<long>(b, static_cast<long>(G.size()) - 1)];
}

bool NormalizationTables::thresholds_ready() const {
  if (channels.empty()) return false;
  bool any = false;
  for (const auto& t : channels) {
    if (!t.monitored()) continue;
    if (!std::isfinite(t.threshold) || !t.has_V() || !t.has_G()) return false;
    any = true;
  }
  return any;
}

void NormalizationTables::factor_G() {
  for (auto& t : channels) {
    t.G_chol.clear();
    t.G_chol.reserve(t.G.size());
    for (std::size_t b = 0; b < t.G.size(); ++b) {
      Eigen::LLT<MatrixXd> llt(t.G[b]);
      if (llt.info() != Eigen::Success)
        throw CalibrationError("G not positive definite at " + where(t.channel, static_cast<long>(b)));
      t.G_chol.push_back(llt.matrixL());
    }
  }
}

NormalizationTables skeleton(Level level, int kappa, const std::vector<int>& rho, const std::vector<int>& r_dims,
                             std::uint64_t hash, long traj_size, int ell, int v_bin, int g_bin) {
  auto H = channels::active_set(level, kappa);
  if (rho.size() != H.size() || r_dims.size() != H.size())
    throw ArgumentError("skeleton: one delay and one residual size per channel required");
  NormalizationTables t;
  t.kappa = kappa;
  t.level = level;
  t.ell = ell;
  t.trajectory_hash = hash;
  t.trajectory_size = traj_size;
  t.v_bin = v_bin;
  t.g_bin = g_bin;
  for (std::size_t c = 0; c < H.size(); ++c) {
    ChannelTable ct;
    ct.channel = H.pairs[c];
    ct.rho = rho[c];
    ct.r_dim = r_dims[c];
    ct.q_dim = 1;
    if (ct.monitored() && ell <= ct.dim()) throw ConfigError("window length must exceed p + q on every channel");
    t.channels.push_back(std::move(ct));
  }
  return t;
}

CovarianceAccumulator::CovarianceAccumulator(int dim, long bins)
    : dim_(dim), sum_(bins, MatrixXd::Zero(dim, dim)), count_(bins, 0) {}

void CovarianceAccumulator::add(long bin, const VectorXd& zeta) {
  if (bin < 0 || bin >= bins()) throw ArgumentError("covariance accumulator: bin out of range");
  sum_[bin].noalias() += zeta * zeta.transpose();
  ++count_[bin];
}

void CovarianceAccumulator::merge(const CovarianceAccumulator& o) {
  if (o.dim_ != dim_ || o.bins() != bins()) throw ArgumentError("covariance accumulator: shape mismatch");
  for (long b = 0; b < bins(); ++b) {
    sum_[b] += o.sum_[b];
    count_[b] += o.count_[b];
  }
}

MatrixXd CovarianceAccumulator::sigma(long bin) const {
  if (count_[bin] == 0) return MatrixXd::Zero(dim_, dim_);
  return sum_[bin] / static_cast<double>(count_[bin]);
}

MatrixXd smooth_invert(const CovarianceAccumulator& acc, long bin, double decay, int half_width, const Channel& ch,
                       double* weight_sum, bool* floored) {
  MatrixXd avg = MatrixXd::Zero(acc.dim(), acc.dim());
  double b = 0.0;
  long support = 0;
  for (long e = std::max(0L, bin - half_width); e <= std::min(acc.bins() - 1, bin + half_width); ++e) {
    if (acc.count(e) == 0) continue;
    double w = std::pow(decay, static_cast<double>(std::abs(bin - e)));
    avg += w * acc.sigma(e);
    b += w;
    support += acc.count(e);
  }
  if (weight_sum) *weight_sum = b;
  if (b == 0.0) throw CalibrationError("no samples near " + where(ch, bin));
  if (support < acc.dim()) throw CalibrationError("too few samples for a full-rank covariance at " + where(ch, bin));
  avg /= b;
  try {
    return inverse_sqrt(avg, floored);
  } catch (const CalibrationError&) {
    throw CalibrationError("singular covariance at " + where(ch, bin));
  }
}

void finalize_V(ChannelTable& t, const CovarianceAccumulator& acc, double decay, int half_width) {
  const long n = acc.bins();
  t.V.assign(n, MatrixXd());
  t.f.assign(n, 0);
  t.b.assign(n, 0.0);
  t.v_filled.assign(n, 0);
  t.v_floored.assign(n, 0);
  std::vector<bool> have(n, false);
  for (long bin = 0; bin < n; ++bin) {
    t.f[bin] = acc.count(bin);
    bool near = false;
    for (long e = std::max(0L, bin - half_width); e <= std::min(n - 1, bin + half_width); ++e)
      if (acc.count(e) > 0) near = true;
    if (!near) continue;
    bool fl = false;
    t.V[bin] = smooth_invert(acc, bin, decay, half_width, t.channel, &t.b[bin], &fl);
    t.v_floored[bin] = fl;
    have[bin] = true;
  }
  fill_nearest(t.V, t.v_filled, have, "V table for channel " + t.channel.label());
}

AutocorrAccumulator::AutocorrAccumulator(int ell, int dim, long size, int bin_width)
    : ell_(ell), dim_(dim), width_(bin_width), size_(size) {
  long bins = (size + bin_width - 1) / bin_width;
  sum_.assign(bins, MatrixXd::Zero(ell, ell));
  g_.assign(bins, 0.0);
}

void AutocorrAccumulator::credit(long h0, long h1, std::vector<std::pair<long, double>>& bins0,
                                 std::vector<std::pair<long, double>>& bins1) {
  if (h1 == h0) return;
  // Interpolate over the indices passed between the two steps; backward motion uses the mirrored range.
  const long lo = std::min(h0, h1), hi = std::max(h0, h1);
  const double span = static_cast<double>(hi - lo);
  long k = lo;
  while (k < hi) {
    long kw = wrap_index(k, size_);
    long bin = kw / width_;
    long bin_end = std::min((bin + 1) * static_cast<long>(width_), size_);
    long seg_end = std::min(hi, k + (bin_end - kw));
    double count = static_cast<double>(seg_end - k);
    // sum over k' in [k, seg_end) of |k' - h1| / |h1 - h0| is the weight on the earlier window.
    double sum_to_hi = count * static_cast<double>(hi) - 0.5 * static_cast<double>(k + seg_end - 1) * count;
    double w_lo_end = sum_to_hi / span;  // weight of the window sitting at lo
    double w_hi_end = count - w_lo_end;
    double w0 = h0 == lo ? w_lo_end : w_hi_end;
    double w1 = count - w0;
    bins0.emplace_back(bin, w0);
    bins1.emplace_back(bin, w1);
    g_[bin] += count;
    k = seg_end;
  }
}

void AutocorrAccumulator::flush_pending() {
  if (!have_prev_ || prev_weights_.empty()) return;
  MatrixXd gram = prev_P_.transpose() * prev_P_;
  for (const auto& [bin, w] : prev_weights_)
    if (w != 0.0) sum_[bin] += w * gram;
  prev_weights_.clear();
}

void AutocorrAccumulator::add_window(const MatrixXd& P, long h) {
  if (P.rows() != dim_ || P.cols() != ell_) throw ArgumentError("autocorrelation accumulator: window shape");
  std::vector<std::pair<long, double>> next;
  if (have_prev_) {
    std::vector<std::pair<long, double>> mine;
    credit(prev_h_, h, mine, next);
    prev_weights_.insert(prev_weights_.end(), mine.begin(), mine.end());
    flush_pending();
  }
  have_prev_ = true;
  prev_P_ = P;
  prev_h_ = h;
  prev_weights_ = std::move(next);
}

void AutocorrAccumulator::end_realization() {
  flush_pending();
  have_prev_ = false;
}

void AutocorrAccumulator::merge(const AutocorrAccumulator& o) {
  if (o.ell_ != ell_ || o.dim_ != dim_ || o.bins() != bins()) throw ArgumentError("autocorrelation merge: shape");
  for (long b = 0; b < bins(); ++b) {
    sum_[b] += o.sum_[b];
    g_[b] += o.g_[b];
  }
}

MatrixXd AutocorrAccumulator::average(long bin) const {
  if (g_[bin] == 0.0) return MatrixXd::Zero(ell_, ell_);
  MatrixXd a = sum_[bin] / (dim_ * g_[bin]);
  return 0.5 * (a + a.transpose());
}

void finalize_G(ChannelTable& t, const AutocorrAccumulator& acc) {
  const long n = acc.bins();
  t.G.assign(n, MatrixXd());
  t.g.assign(n, 0.0);
  t.g_filled.assign(n, 0);
  std::vector<bool> have(n, false);
  for (long b = 0; b < n; ++b) {
    t.g[b] = acc.count(b);
    if (acc.count(b) == 0.0) continue;
    t.G[b] = acc.average(b);
    Eigen::LLT<MatrixXd> llt(t.G[b]);
    if (llt.info() != Eigen::Success) throw CalibrationError("G not positive definite at " + where(t.channel, b));
    have[b] = true;
  }
  fill_nearest(t.G, t.g_filled, have, "G table for channel " + t.channel.label());
  t.G_chol.clear();
  for (const auto& G : t.G) t.G_chol.push_back(Eigen::LLT<MatrixXd>(G).matrixL());
}

ThresholdResult calibrate_threshold(std::vector<double> values, double fa_rate) {
  if (!(fa_rate > 0.0) || fa_rate > 1.0) throw ArgumentError("false-alarm rate must lie in (0, 1]");
  const long n = static_cast<long>(values.size());
  if (n == 0) throw CalibrationError("no NLL samples for the threshold");
  if (fa_rate < 1.0 && static_cast<double>(n) * fa_rate < 1.0)
    throw CalibrationError("too few NLL samples (" + std::to_string(n) + ") for the requested false-alarm rate");
  long idx = static_cast<long>(std::floor((1.0 - fa_rate) * static_cast<double>(n - 1)));
  std::nth_element(values.begin(), values.begin() + idx, values.end());
  return {values[idx], n};
}

DetectStep detect_step(DetectionState& state, int channel, double nll_value, double threshold,
                       const DetectionPolicy& policy, long step) {
  if (policy.window < 1 || policy.window > 40) throw ArgumentError("detection window must be in [1, 40]");
  if (policy.count > policy.window) throw ArgumentError("detection count exceeds the window");
  auto& c = state.channels.at(channel);
  DetectStep out;
  out.exceeded = !(nll_value <= threshold);  // NaN and +inf count as exceedances
  if (c.filled == policy.window) c.sum -= c.ring[c.head];
  else ++c.filled;
  c.ring[c.head] = out.exceeded;
  c.sum += out.exceeded;
  c.head = (c.head + 1) % policy.window;
  c.latest = nll_value;
  if (out.exceeded && c.first_exceed < 0) c.first_exceed = step;
  if (!state.fired && c.sum > policy.count) {
    state.fired = true;
    state.fired_step = step;
    state.fired_channel = channel;
  }
  out.degrade = state.fired;
  return out;
}

NormalizationTables lti_baseline(const NormalizationTables& ltv, long steps) {
  if (steps <= 0) throw ArgumentError("lti_baseline: step count must be positive");
  NormalizationTables t = ltv;
  t.lti = true;
  t.fa_rate = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t c = 0; c < t.channels.size(); ++c) {
    auto& ct = t.channels[c];
    if (!ct.monitored()) continue;
    if (!ltv.channels[c].has_V()) throw CalibrationError("lti_baseline: LTV V table missing");
    MatrixXd avg = MatrixXd::Zero(ct.dim(), ct.dim());
    for (long n = 0; n < steps; ++n) avg += ltv.V_at(static_cast<int>(c), n * kHighResPerStep);
    avg /= static_cast<double>(steps);
    ct.V = {avg};
    ct.G = {MatrixXd::Identity(t.ell, t.ell)};
    ct.G_chol = ct.G;
    ct.f = {0};
    ct.b = {0.0};
    ct.g = {0.0};
    ct.v_filled = {0};
    ct.g_filled = {0};
    ct.v_floored = {0};
    ct.threshold = std::numeric_limits<double>::quiet_NaN();
  }
  return t;
}

double window_nll(const NormalizationTables& t, int c, long k, const MatrixXd& P) {
  return nll_chol(P, t.G_chol_at(c, k));
}

}  // namespace platoon::detector
