#include "platoon/control.hpp"
#include "platoon/harness.hpp"

#include <cmath>

namespace platoon::harness {

namespace {

long wrap_k(long k, long n) {
  long w = k % n;
  return w < 0 ? w + n : w;
}

struct CovHook : MonitorHook {
  std::vector<detector::CovarianceAccumulator> acc;
  long size = 1;
  int v_bin = 10;
  void on_zeta(int, int c, long, long k, const VectorXd& zeta) override {
    acc[c].add(wrap_k(k, size) / v_bin, zeta);
  }
};

struct GramHook : MonitorHook {
  std::vector<detector::AutocorrAccumulator> acc;
  void on_window(int, int c, long, long k, const MatrixXd& P) override { acc[c].add_window(P, k); }
  void on_end(long) override {
    for (auto& a : acc) a.end_realization();
  }
};

struct NllHook : MonitorHook {
  std::vector<std::vector<std::vector<double>>> values;  // [monitor][channel]
  void on_nll(int m, int c, long, long, double nll) override { values[m][c].push_back(nll); }
};

RunConfig quiet(const RunConfig& base) {
  RunConfig c = base;
  c.attack = {};
  c.mitigate = false;
  c.tables.reset();
  c.shadow.clear();
  c.record_series = false;
  c.stop_on_crash = false;
  c.hook = nullptr;
  return c;
}

}  // namespace

detector::NormalizationTables calibrate_tables(const RunConfig& base, const CalibrationSettings& s,
                                               const Progress& progress) {
  if (!base.trajectory) throw ConfigError("calibration needs a reference trajectory");
  if (base.level == Level::Acc) throw ConfigError("level 1 carries no watermark to calibrate");
  if (s.runs < 1) throw ConfigError("calibration needs at least one realization");
  const auto& traj = *base.trajectory;
  auto delays = select_delays(base.level, base.kappa, traj, base.rho_max, base.constants);
  auto H = channels::active_set(base.level, base.kappa);
  auto bank = control::ControllerBank::make(base.level, base.kappa);
  std::vector<int> r_dims;
  for (const auto& ch : H.pairs) r_dims.push_back(static_cast<int>(bank.designs[ch.receiver].find(ch.sender)->U.rows()));
  auto tables = detector::skeleton(base.level, base.kappa, delays, r_dims, traj.hash(), traj.size(), s.ell, s.v_bin,
                                   s.g_bin);
  tables.decay = s.decay;
  tables.half_width = s.half_width;

  // Pass one: binned covariance of [e; r].
  CovHook cov;
  cov.size = traj.size();
  cov.v_bin = s.v_bin;
  for (const auto& ct : tables.channels) cov.acc.emplace_back(ct.dim(), tables.v_bins());
  {
    auto skel = std::make_shared<detector::NormalizationTables>(tables);
    for (int r = 0; r < s.runs; ++r) {
      RunConfig c = quiet(base);
      c.seed = s.seed_base + static_cast<std::uint64_t>(r);
      c.shadow = {skel};
      c.hook = &cov;
      run_realization(c);
      if (progress) progress("covariance pass: run " + std::to_string(r + 1) + "/" + std::to_string(s.runs));
    }
  }
  for (std::size_t c = 0; c < tables.channels.size(); ++c)
    if (tables.channels[c].monitored()) detector::finalize_V(tables.channels[c], cov.acc[c], s.decay, s.half_width);
  cov.acc.clear();

  // Pass two: same seeds, normalized windows.
  GramHook gram;
  for (const auto& ct : tables.channels) gram.acc.emplace_back(s.ell, ct.dim(), traj.size(), s.g_bin);
  {
    auto with_v = std::make_shared<detector::NormalizationTables>(tables);
    for (int r = 0; r < s.runs; ++r) {
      RunConfig c = quiet(base);
      c.seed = s.seed_base + static_cast<std::uint64_t>(r);
      c.shadow = {with_v};
      c.hook = &gram;
      run_realization(c);
      if (progress) progress("autocorrelation pass: run " + std::to_string(r + 1) + "/" + std::to_string(s.runs));
    }
  }
  for (std::size_t c = 0; c < tables.channels.size(); ++c)
    if (tables.channels[c].monitored()) detector::finalize_G(tables.channels[c], gram.acc[c]);
  return tables;
}

void calibrate_thresholds(const RunConfig& base, std::vector<detector::NormalizationTables*> tables,
                          const std::vector<std::uint64_t>& seeds, double fa_rate, const Progress& progress) {
  if (tables.empty()) return;
  NllHook hook;
  std::vector<std::shared_ptr<const detector::NormalizationTables>> watch;
  for (auto* t : tables) {
    if (!t) throw ArgumentError("calibrate_thresholds: null tables");
    auto copy = std::make_shared<detector::NormalizationTables>(*t);
    for (auto& ct : copy->channels) ct.threshold = std::numeric_limits<double>::quiet_NaN();
    watch.push_back(copy);
    hook.values.emplace_back(t->channels.size());
  }
  std::size_t done = 0;
  for (auto seed : seeds) {
    RunConfig c = quiet(base);
    c.seed = seed;
    c.shadow = watch;
    c.hook = &hook;
    run_realization(c);
    ++done;
    if (progress) progress("threshold pass: run " + std::to_string(done) + "/" + std::to_string(seeds.size()));
  }
  for (std::size_t m = 0; m < tables.size(); ++m) {
    for (std::size_t c = 0; c < tables[m]->channels.size(); ++c) {
      if (!tables[m]->channels[c].monitored()) continue;
      auto res = detector::calibrate_threshold(std::move(hook.values[m][c]), fa_rate);
      tables[m]->channels[c].threshold = res.threshold;
    }
    tables[m]->fa_rate = fa_rate;
  }
}

std::vector<FalseAlarmStats> false_alarm_rate(const RunConfig& base,
                                              std::vector<std::shared_ptr<const detector::NormalizationTables>> tables,
                                              const std::vector<std::uint64_t>& seeds) {
  std::vector<FalseAlarmStats> out(tables.size());
  for (auto seed : seeds) {
    RunConfig c = quiet(base);
    c.seed = seed;
    c.shadow = tables;
    auto rec = run_realization(c);
    for (std::size_t m = 0; m < rec.monitors.size(); ++m)
      for (std::size_t ch = 0; ch < rec.monitors[m].nll_count.size(); ++ch) {
        out[m].exceed += rec.monitors[m].exceed_count[ch];
        out[m].total += rec.monitors[m].nll_count[ch];
      }
  }
  return out;
}

}  // namespace platoon::harness
