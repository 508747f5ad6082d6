#include "platoon/closed_loop.hpp"
#include "platoon/control.hpp"
#include "platoon/harness.hpp"
#include "platoon/ltv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace platoon::harness {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

VectorXd reference_message(Level level, int j, const trajgen::PlatoonTrajectory& traj, long k) {
  const int kappa = traj.kappa();
  if (measurement_model(level, j) == MeasurementModel::LeaderBroadcast) {
    VectorXd r(kappa);
    for (int m = 1; m < kappa; ++m) r(m - 1) = traj.lead_distance(k, m);
    r(kappa - 1) = traj.v(k, 0);
    return r;
  }
  if (j == 0) return VectorXd::Constant(1, traj.v(k, 0));
  VectorXd r(2);
  r << traj.gap(k, j - 1), traj.v(k, j);
  return r;
}

// Level-1 view of a measurement taken under another level's layout.
VectorXd own_states(Level level, int j, const VectorXd& y) {
  if (measurement_model(level, j) == MeasurementModel::LeaderBroadcast) return y.tail(1);
  return y;
}

struct Monitor {
  std::shared_ptr<const detector::NormalizationTables> tables;
  std::vector<MatrixXd> P;    // per channel, time-ordered columns
  std::vector<long> filled;   // normalized samples so far
  detector::DetectionState det;
  MonitorSummary summary;
};

void check_tables(const detector::NormalizationTables& t, const RunConfig& cfg, const channels::ChannelSet& H,
                  const trajgen::PlatoonTrajectory& traj) {
  if (t.kappa != cfg.kappa || t.level != cfg.level)
    throw ConfigError("normalization tables were calibrated for another level or platoon size");
  if (t.trajectory_hash != traj.hash() || t.trajectory_size != traj.size())
    throw ConfigError("normalization tables were calibrated against a different trajectory");
  if (t.channels.size() != H.size()) throw ConfigError("normalization tables do not cover the channel set");
  for (std::size_t c = 0; c < H.size(); ++c)
    if (t.channels[c].channel != H.pairs[c]) throw ConfigError("normalization tables list channels out of order");
}

// Reference pose between grid points, at the vehicle's along-track offset from sample k.
trajgen::ReferencePoint interpolated(const trajgen::PlatoonTrajectory& traj, long k, int i, double x, double y) {
  auto a = traj.point(k, i);
  double along = (x - a.x) * std::cos(a.psi) + (y - a.y) * std::sin(a.psi);
  auto b = traj.point(along >= 0.0 ? k + 1 : k - 1, i);
  double step = std::hypot(b.x - a.x, b.y - a.y);
  if (step <= 0.0) return a;
  double t = std::min(std::abs(along) / step, 1.0);
  a.x += t * (b.x - a.x);
  a.y += t * (b.y - a.y);
  a.psi += t * dynamics::wrap_angle(b.psi - a.psi);
  return a;
}

// Steering is held for a whole control step, so feed forward its mean over that step.
double held_steering(const trajgen::PlatoonTrajectory& traj, long k, int i) {
  double acc = 0.0;
  for (int q = 0; q < kHighResPerStep; ++q) acc += traj.point(k + q, i).delta;
  return acc / kHighResPerStep;
}

}  // namespace

MatrixXd measurement_cov(const NoiseConfig& noise, Level level, int kappa, int i) {
  if (measurement_model(level, i) == MeasurementModel::LeaderBroadcast) {
    VectorXd d = VectorXd::Constant(kappa, noise.follower_gap);
    d(kappa - 1) = noise.leader_speed;
    return d.asDiagonal();
  }
  if (i == 0) return MatrixXd::Constant(1, 1, noise.leader_speed);
  return VectorXd((VectorXd(2) << noise.follower_gap, noise.follower_speed).finished()).asDiagonal();
}

std::string to_string(DetectorKind k) {
  switch (k) {
    case DetectorKind::None: return "none";
    case DetectorKind::Ltv: return "ltv";
    case DetectorKind::Lti: return "lti";
  }
  return "none";
}

DetectorKind detector_kind_from_string(const std::string& s) {
  if (s == "none") return DetectorKind::None;
  if (s == "ltv") return DetectorKind::Ltv;
  if (s == "lti") return DetectorKind::Lti;
  throw ConfigError("unknown detector '" + s + "'");
}

double RunRecord::spacing_mean() const {
  return spacing_count ? spacing_sum / static_cast<double>(spacing_count) : kNaN;
}

double RunRecord::spacing_std() const {
  if (spacing_count < 2) return kNaN;
  double m = spacing_mean();
  double var = (spacing_sumsq - spacing_count * m * m) / static_cast<double>(spacing_count - 1);
  return std::sqrt(std::max(0.0, var));
}

std::vector<int> select_delays(Level level, int kappa, const trajgen::PlatoonTrajectory& traj, int rho_max,
                               const dynamics::DynamicsConstants& c) {
  double v_bar = traj.path().mean_speed();
  double v_d_bar = trajgen::invert_speed_input(v_bar, 0.0, c);
  auto nominal = ltv::nominal_closed_loop(level, kappa, v_bar, v_d_bar, c);
  auto H = channels::active_set(level, kappa);
  auto bank = control::ControllerBank::make(level, kappa);
  std::vector<int> out;
  for (const auto& ch : H.pairs) {
    const auto* maps = bank.designs[ch.receiver].find(ch.sender);
    try {
      out.push_back(ltv::select_rho(H, ch, rho_max, nominal, maps->W, maps->C).rho);
    } catch (const ArgumentError&) {
      out.push_back(-1);  // the receiver's watermark never reaches this sender
    }
  }
  return out;
}

RunRecord run_realization(const RunConfig& cfg) {
  const int K = cfg.kappa;
  if (K < 2) throw ConfigError("platoon needs at least two vehicles");
  if (cfg.duration < 1) throw ConfigError("duration must be at least one step");
  Level level = cfg.level;
  if (level == Level::LeaderFollow && K < 3) throw ConfigError("level 2 needs at least three vehicles");
  if (!cfg.headway && (level == Level::Acc || cfg.mitigate))
    throw ConfigError("level-1 operation needs a headway reference trajectory");
  if (level != Level::Acc && !cfg.trajectory) throw ConfigError("run needs a reference trajectory");
  const trajgen::PlatoonTrajectory* traj = level == Level::Acc ? cfg.headway.get() : cfg.trajectory.get();
  if (traj->kappa() != K) throw ConfigError("trajectory was generated for another platoon size");
  if (cfg.headway && cfg.headway->kappa() != K) throw ConfigError("headway trajectory has the wrong platoon size");
  const auto& dc = cfg.constants;
  const double length = traj->spacing().length;
  const trajgen::Path& path = traj->path();

  auto H = channels::active_set(level, K);
  auto bank = control::ControllerBank::make(level, K);
  if (cfg.mitigate && level != Level::Acc && !cfg.tables)
    throw ConfigError("mitigation needs normalization tables with thresholds");

  std::vector<Monitor> monitors;
  if (level != Level::Acc) {
    std::vector<std::pair<std::shared_ptr<const detector::NormalizationTables>, DetectorKind>> srcs;
    if (cfg.tables) srcs.emplace_back(cfg.tables, cfg.detector);
    for (const auto& t : cfg.shadow)
      if (t) srcs.emplace_back(t, t->lti ? DetectorKind::Lti : DetectorKind::Ltv);
    for (auto& [t, kind] : srcs) {
      check_tables(*t, cfg, H, *traj);
      if (cfg.mitigate && monitors.empty() && !t->thresholds_ready())
        throw ConfigError("mitigation needs calibrated thresholds");
      Monitor m;
      m.tables = t;
      m.det = detector::DetectionState(H.size());
      m.summary.kind = kind;
      m.summary.nll_count.assign(H.size(), 0);
      m.summary.exceed_count.assign(H.size(), 0);
      for (const auto& ct : t->channels) {
        m.P.push_back(MatrixXd::Zero(ct.dim(), t->ell));
        m.filled.push_back(0);
      }
      monitors.push_back(std::move(m));
    }
  }
  int hist = 2;
  for (const auto& m : monitors)
    for (const auto& ct : m.tables->channels) hist = std::max(hist, ct.rho + 2);

  RunRecord rec;
  rec.kappa = K;
  rec.level = level;
  rec.seed = cfg.seed;
  rec.duration = cfg.duration;
  rec.attack = cfg.attack.kind;
  rec.onset_step = cfg.attack.kind == channels::AttackKind::None ? -1 : cfg.attack.onset_step();
  rec.attacked = cfg.attack.targets;
  rec.mitigate = cfg.mitigate;
  rec.detector = cfg.tables ? cfg.detector : DetectorKind::None;
  rec.channels = H.pairs;
  rec.min_bumper = std::numeric_limits<double>::infinity();
  if (cfg.record_series) rec.rows.reserve(cfg.duration);

  // Streams
  RngStream rng_w(derive_seed(cfg.seed, stream::kProcess));
  std::vector<RngStream> rng_z, rng_e;
  for (int i = 0; i < K; ++i) {
    rng_z.emplace_back(derive_seed(cfg.seed, stream::kMeasurement, i));
    rng_e.emplace_back(derive_seed(cfg.seed, stream::kWatermark, i));
  }
  const int p = 2 * K - 1;
  GaussianSampler sampler_w(MatrixXd::Identity(p, p) * cfg.noise.process);
  std::vector<GaussianSampler> sampler_z;
  auto build_meas_samplers = [&] {
    sampler_z.clear();
    for (int i = 0; i < K; ++i) sampler_z.emplace_back(measurement_cov(cfg.noise, level, K, i));
  };
  build_meas_samplers();
  if (cfg.noise.watermark < 0.0) throw ConfigError("watermark variance must be non-negative");
  const double e_std = std::sqrt(cfg.noise.watermark);

  // Vehicles start on their reference points.
  std::vector<dynamics::VehicleState> st(K);
  std::vector<trajgen::PathCursor> pcur(K);
  std::vector<trajgen::TrajectoryCursor> tcur(K);
  for (int i = 0; i < K; ++i) {
    auto r = traj->point(0, i);
    st[i] = {r.x, r.y, r.psi, r.v};
    double s = path.project_global({r.x, r.y});
    if (i > 0 && s > pcur[i - 1].s) s -= path.length();
    pcur[i] = {s, 60};
  }
  std::vector<VectorXd> x_hat(K);
  for (int i = 0; i < K; ++i) x_hat[i] = VectorXd::Zero(bank.designs[i].dim());
  std::vector<control::LateralEstimate> lat(K);
  std::vector<std::vector<double>> e_hist(K, std::vector<double>(hist, 0.0));

  bool degraded = false;
  std::vector<double> s_arc(K), gaps(K - 1), speeds(K);
  std::vector<long> h(K);
  std::vector<VectorXd> y(K);
  std::vector<std::vector<VectorXd>> dev(K);
  std::vector<ltv::SpeedRef> refs(K);

  long n = 0;
  for (; n < cfg.duration; ++n) {
    // Ground truth
    for (int i = 0; i < K; ++i) {
      if (!std::isfinite(st[i].x) || !std::isfinite(st[i].y) || !std::isfinite(st[i].v))
        throw IntegrationError("non-finite state for vehicle " + std::to_string(i + 1) + " at step " +
                               std::to_string(n));
      s_arc[i] = path.project({st[i].x, st[i].y}, pcur[i]);
      speeds[i] = st[i].v;
    }
    bool crashed_now = false;
    for (int m = 0; m < K - 1; ++m) {
      gaps[m] = s_arc[m] - s_arc[m + 1];
      double b = dynamics::bumper_to_bumper(gaps[m], length);
      rec.spacing_sum += b;
      rec.spacing_sumsq += b * b;
      ++rec.spacing_count;
      rec.min_bumper = std::min(rec.min_bumper, b);
      if (dynamics::is_crash(b) && rec.crash_step < 0) {
        rec.crash_step = n;
        rec.crash_gap = m;
        rec.crash_after_degrade = degraded;
        crashed_now = true;
      }
    }
    auto geom = dynamics::PlatoonGeometry::from(gaps, speeds, length);
    for (int i = 0; i < K; ++i) h[i] = trajgen::closest_index(*traj, i, st[i].x, st[i].y, tcur[i]);

    // Measurements and messages
    for (int j = 0; j < K; ++j) y[j] = dynamics::measure_exact(geom, level, j) + sampler_z[j].sample(rng_z[j]);
    for (int i = 0; i < K; ++i) {
      dev[i].clear();
      for (int j : H.senders_of[i]) {
        VectorXd s = channels::transmit(y[j], {i, j}, cfg.attack, n);
        dev[i].push_back(s - reference_message(level, j, *traj, h[i]));
      }
    }

    StepRow row;
    if (cfg.record_series && !monitors.empty()) {
      row.nll.assign(rec.channels.size(), kNaN);
      row.exceed.assign(rec.channels.size(), 0);
    }

    // Detection
    if (!degraded && !monitors.empty()) {
      for (std::size_t mi = 0; mi < monitors.size(); ++mi) {
        auto& mo = monitors[mi];
        const auto& T = *mo.tables;
        for (std::size_t c = 0; c < H.size(); ++c) {
          const Channel ch = H.pairs[c];
          const auto& ct = T.channels[c];
          if (!ct.monitored() || n <= ct.rho) continue;
          const auto& d = bank.designs[ch.receiver];
          int slot = static_cast<int>(std::find(H.senders_of[ch.receiver].begin(), H.senders_of[ch.receiver].end(),
                                                ch.sender) -
                                      H.senders_of[ch.receiver].begin());
          const auto& maps = d.channels[slot];
          VectorXd r = detector::residual(maps.U, maps.W, x_hat[ch.receiver], dev[ch.receiver][slot]);
          VectorXd zeta(r.size() + 1);
          zeta << e_hist[ch.receiver][(n - ct.rho - 1) % hist], r;
          const long k = h[ch.receiver];
          if (cfg.hook) cfg.hook->on_zeta(static_cast<int>(mi), static_cast<int>(c), n, k, zeta);
          if (!ct.has_V()) continue;
          VectorXd rbar = T.V_at(static_cast<int>(c), k) * zeta;
          MatrixXd& P = mo.P[c];
          for (int col = 0; col + 1 < P.cols(); ++col) P.col(col) = P.col(col + 1);
          P.col(P.cols() - 1) = rbar;
          ++mo.filled[c];
          if (mo.filled[c] <= T.ell) continue;
          if (cfg.hook) cfg.hook->on_window(static_cast<int>(mi), static_cast<int>(c), n, k, P);
          if (!ct.has_G()) continue;
          double L = detector::window_nll(T, static_cast<int>(c), k, P);
          if (cfg.hook) cfg.hook->on_nll(static_cast<int>(mi), static_cast<int>(c), n, k, L);
          ++mo.summary.nll_count[c];
          if (!std::isfinite(ct.threshold)) {
            if (mi == 0 && cfg.record_series) row.nll[c] = L;
            continue;
          }
          auto ds = detector::detect_step(mo.det, static_cast<int>(c), L, ct.threshold, cfg.policy, n);
          if (ds.exceeded) ++mo.summary.exceed_count[c];
          if (mi == 0 && cfg.record_series) {
            row.nll[c] = L;
            row.exceed[c] = ds.exceeded;
          }
        }
        if (mo.det.fired && mo.summary.fired_step < 0) {
          mo.summary.fired_step = mo.det.fired_step;
          mo.summary.fired_channel = mo.det.fired_channel;
        }
      }
    }

    // Degrade: every vehicle switches within this step.
    if (!degraded && cfg.mitigate && cfg.tables && !monitors.empty() && monitors[0].det.fired) {
      degraded = true;
      rec.degrade_step = n;
      rec.degrade_channel = monitors[0].det.fired_channel;
      const trajgen::PlatoonTrajectory* old = traj;
      const Level from = level;
      traj = cfg.headway.get();
      for (int i = 0; i < K; ++i) {
        trajgen::TrajectoryCursor wide{h[i] + 2000, 2300};
        long h_new = trajgen::closest_index(*traj, i, st[i].x, st[i].y, wide);
        control::Rebase rb;
        rb.v_own_old = old->v(h[i], i);
        rb.v_own_new = traj->v(h_new, i);
        if (i > 0) {
          rb.gap_old = old->gap(h[i], i - 1);
          rb.gap_new = traj->gap(h_new, i - 1);
          rb.v_prev_old = old->v(h[i], i - 1);
          rb.v_prev_new = traj->v(h_new, i - 1);
        }
        x_hat[i] = control::reformat_estimate(from, x_hat[i], i, K, rb).x_hat;
        h[i] = h_new;
        tcur[i] = {h_new, 200};
      }
      level = Level::Acc;
      H = channels::active_set(level, K);
      bank = control::ControllerBank::make(level, K);
      build_meas_samplers();
      for (int j = 0; j < K; ++j) y[j] = own_states(from, j, y[j]);
      for (int i = 0; i < K; ++i) {
        dev[i].clear();
        dev[i].push_back(y[i] - reference_message(level, i, *traj, h[i]));
      }
    }

    if (cfg.record_series) {
      row.n = n;
      row.level = to_int(level);
      row.h = h;
      row.gap = gaps;
      for (int i = 0; i < K; ++i) {
        row.x.push_back(st[i].x);
        row.y.push_back(st[i].y);
        row.psi.push_back(st[i].psi);
        row.v.push_back(st[i].v);
      }
      for (int j = 0; j < K; ++j)
        for (int q = 0; q < y[j].size(); ++q) row.meas.push_back(y[j](q));
      for (int i = 0; i < K; ++i)
        for (int q = 0; q < x_hat[i].size(); ++q) row.x_hat.push_back(x_hat[i](q));
    }
    // Control
    std::vector<dynamics::VehicleInput> u(K);
    for (int i = 0; i < K; ++i) {
      const auto ref = traj->point(h[i], i);
      const auto lref = interpolated(*traj, h[i], i, st[i].x, st[i].y);
      for (int j = 0; j < K; ++j) refs[j] = {traj->v(h[i], j), traj->v_d(h[i], j)};
      auto sys = ltv::build_AB(refs, dc);
      const auto& design = bank.designs[i];
      auto mats = control::step_matrices(design, sys);
      double z = rng_e[i].normal();
      if (cfg.noise.mirror_watermark) z = -z;
      double e = level == Level::Acc ? 0.0 : e_std * z;
      u[i].v_d = control::control_input(mats.K, x_hat[i], e, ref.v_d);

      double ce = std::cos(lref.psi), se = std::sin(lref.psi);
      Eigen::Vector2d y_lat((st[i].y - lref.y) * ce - (st[i].x - lref.x) * se,
                            dynamics::wrap_angle(st[i].psi - lref.psi));
      double d_delta = control::lateral_control(lat[i]);
      const double delta_ff = held_steering(*traj, h[i], i);
      u[i].delta = delta_ff + d_delta;
      lat[i] = control::lateral_observer_step(lat[i], ref.v, delta_ff, d_delta, y_lat, dc);

      control::ObserverState os{x_hat[i], level};
      x_hat[i] = control::observer_step(design, os, mats, e, dev[i]).x_hat;
      e_hist[i][n % hist] = e;
      if (cfg.record_series) {
        row.v_d.push_back(u[i].v_d);
        row.delta.push_back(u[i].delta);
        row.e.push_back(e);
      }
    }
    if (cfg.record_series) rec.rows.push_back(std::move(row));
    if (crashed_now && cfg.stop_on_crash) {
      ++n;
      break;
    }

    // Plant
    for (int i = 0; i < K; ++i) st[i] = dynamics::step_nonlinear(st[i], u[i], dc, kControlDt, i, n);
    VectorXd w = sampler_w.sample(rng_w);
    double cum = 0.0;
    for (int i = 0; i < K; ++i) {
      if (i > 0) cum += w(i - 1);
      st[i].x -= cum * std::cos(st[i].psi);
      st[i].y -= cum * std::sin(st[i].psi);
      st[i].v += w(K - 1 + i);
    }
  }
  rec.steps = n;
  for (auto& m : monitors) rec.monitors.push_back(m.summary);
  if (cfg.hook) cfg.hook->on_end(n);
  return rec;
}

channels::Recording to_recording(const RunRecord& record, double dt) {
  if (record.rows.empty()) throw ConfigError("recording needs a run with its series recorded");
  channels::Recording out;
  out.kappa = record.kappa;
  out.level = record.level;
  out.dt = dt;
  out.seed = record.seed;
  std::vector<int> offset(record.kappa + 1, 0);
  for (int j = 0; j < record.kappa; ++j)
    offset[j + 1] = offset[j] + static_cast<int>(ltv::measurement_matrix(record.level, record.kappa, j).rows());
  for (const auto& ch : record.channels) {
    if (ch.self()) continue;
    auto& s = out.series[ch];
    s.reserve(record.rows.size());
    for (const auto& row : record.rows) {
      if (row.level != to_int(record.level)) break;
      int a = offset[ch.sender], b = offset[ch.sender + 1];
      VectorXd v(b - a);
      for (int q = a; q < b; ++q) v(q - a) = row.meas[q];
      s.push_back(v);
    }
  }
  return out;
}

}  // namespace platoon::harness
