#pragma once

#include "platoon/channels.hpp"
#include "platoon/common.hpp"
#include "platoon/detector.hpp"
#include "platoon/dynamics.hpp"
#include "platoon/trajgen.hpp"

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace platoon::harness {

struct NoiseConfig {
  double process = 1e-6;         // every LTV state
  double leader_speed = 1e-3;
  double follower_gap = 1e-4;
  double follower_speed = 1e-3;
  double watermark = 0.25;       // 0 disables the watermark
  bool mirror_watermark = false;  // negate every watermark draw, for antithetic pairs
};

// Measurement noise covariance of vehicle i at a level.
MatrixXd measurement_cov(const NoiseConfig& noise, Level level, int kappa, int i);

enum class DetectorKind { None, Ltv, Lti };
std::string to_string(DetectorKind k);
DetectorKind detector_kind_from_string(const std::string& s);

// Taps into the detector pipeline; monitor 0 is the one that drives the switch.
struct MonitorHook {
  virtual ~MonitorHook() = default;
  virtual void on_zeta(int /*monitor*/, int /*channel*/, long /*n*/, long /*k*/, const VectorXd& /*zeta*/) {}
  virtual void on_window(int /*monitor*/, int /*channel*/, long /*n*/, long /*k*/, const MatrixXd& /*P*/) {}
  virtual void on_nll(int /*monitor*/, int /*channel*/, long /*n*/, long /*k*/, double /*nll*/) {}
  virtual void on_end(long /*steps*/) {}
};

struct RunConfig {
  int kappa = 4;
  Level level = Level::Full;
  std::shared_ptr<const trajgen::PlatoonTrajectory> trajectory;  // constant-distance reference
  std::shared_ptr<const trajgen::PlatoonTrajectory> headway;     // level-1 reference
  NoiseConfig noise;
  channels::AttackSpec attack;
  bool mitigate = true;
  DetectorKind detector = DetectorKind::Ltv;
  std::shared_ptr<const detector::NormalizationTables> tables;
  // Extra detectors that watch the same residuals without affecting the run.
  std::vector<std::shared_ptr<const detector::NormalizationTables>> shadow;
  detector::DetectionPolicy policy;
  std::uint64_t seed = 1;
  long duration = 6001;
  bool stop_on_crash = false;
  bool record_series = true;
  int rho_max = 5;
  dynamics::DynamicsConstants constants;
  MonitorHook* hook = nullptr;
};

struct StepRow {
  long n = 0;
  int level = 3;
  std::vector<double> x, y, psi, v, v_d, delta, e;
  std::vector<double> gap;   // centre-to-centre along the path
  std::vector<long> h;
  std::vector<double> meas;  // concatenated absolute measurements
  std::vector<double> x_hat; // concatenated observer estimates before the update
  std::vector<double> nll;   // one per initial channel; NaN when not computed
  std::vector<std::uint8_t> exceed;
};

struct MonitorSummary {
  DetectorKind kind = DetectorKind::None;
  long fired_step = -1;
  int fired_channel = -1;
  std::vector<long> nll_count;
  std::vector<long> exceed_count;
};

struct RunRecord {
  int kappa = 0;
  Level level = Level::Full;
  std::uint64_t seed = 0;
  long duration = 0;
  channels::AttackKind attack = channels::AttackKind::None;
  long onset_step = -1;
  std::vector<Channel> attacked;
  bool mitigate = false;
  DetectorKind detector = DetectorKind::None;
  std::vector<Channel> channels;  // channel set at start; NLL columns

  long steps = 0;
  long degrade_step = -1;
  int degrade_channel = -1;
  long crash_step = -1;
  int crash_gap = -1;
  bool crash_after_degrade = false;
  double spacing_sum = 0.0, spacing_sumsq = 0.0;
  long spacing_count = 0;
  double min_bumper = 0.0;
  std::vector<MonitorSummary> monitors;  // primary first, then shadows
  std::vector<StepRow> rows;

  double spacing_mean() const;
  double spacing_std() const;
};

RunRecord run_realization(const RunConfig& config);

// Every channel's absolute message over a run, for replay.
channels::Recording to_recording(const RunRecord& record, double dt = kControlDt);

// Un-attacked run on a seed derived from seed, recorded for playback.
std::shared_ptr<const channels::Recording> replay_source(const RunConfig& base, std::uint64_t seed);

// Per-channel delays from the frozen closed loop at the trajectory's mean speed; -1 where the
// receiver's watermark cannot reach the sender.
std::vector<int> select_delays(Level level, int kappa, const trajgen::PlatoonTrajectory& traj, int rho_max = 5,
                               const dynamics::DynamicsConstants& c = {});

struct CalibrationSettings {
  int runs = 20;
  std::uint64_t seed_base = 1000;
  int ell = 25;
  int v_bin = 10;
  int g_bin = 200;
  double decay = 0.8;
  int half_width = 10;
};

using Progress = std::function<void(const std::string&)>;

// V from pass one, G from pass two on the same seeds. base supplies level, kappa, trajectory and noise.
detector::NormalizationTables calibrate_tables(const RunConfig& base, const CalibrationSettings& settings,
                                               const Progress& progress = {});

// Per-channel (1 - fa) quantile over un-attacked runs, for several table sets at once.
void calibrate_thresholds(const RunConfig& base, std::vector<detector::NormalizationTables*> tables,
                          const std::vector<std::uint64_t>& seeds, double fa_rate, const Progress& progress = {});

// Per-step exceedance rate of calibrated tables on un-attacked runs (pooled over channels).
struct FalseAlarmStats {
  long exceed = 0;
  long total = 0;
  double rate() const { return total ? static_cast<double>(exceed) / static_cast<double>(total) : 0.0; }
};
std::vector<FalseAlarmStats> false_alarm_rate(const RunConfig& base,
                                              std::vector<std::shared_ptr<const detector::NormalizationTables>> tables,
                                              const std::vector<std::uint64_t>& seeds);

enum class Outcome { Success, FalseAlarm, CrashedBeforeDetect, NoDetectNoCrash };
std::string to_string(Outcome o);

struct SeedOutcome {
  std::uint64_t seed = 0;
  long onset_step = -1;
  long degrade_step = -1;
  long crash_step = -1;        // mitigated run
  bool potential_crash = false;  // paired unmitigated run
  long potential_crash_step = -1;
  Outcome outcome = Outcome::NoDetectNoCrash;
};

Outcome classify(long degrade_step, long crash_step, long onset_step);

struct BatchSummary {
  std::string label;
  long runs = 0;
  long successes = 0;
  long false_alarms = 0;
  long potential_crashes = 0;
  long actual_crashes = 0;
  long crashed_before_detect = 0;
  long no_detect_no_crash = 0;
  double detection_mean = 0.0;  // s
  double detection_std = 0.0;   // s
  double spacing_mean = 0.0;    // m
  double spacing_std = 0.0;     // m
  std::vector<std::uint64_t> seeds;
  std::vector<SeedOutcome> outcomes;

  bool operator==(const BatchSummary& o) const;
};

BatchSummary summarize(const std::string& label, const std::vector<SeedOutcome>& outcomes, double dt = kControlDt);

struct Scenario {
  channels::AttackKind attack = channels::AttackKind::Replay;
  double fraction = 1.0;       // share of attackable channels
  double onset_min = 100.0;    // s
  double onset_max = 100.0;    // s; onset drawn uniformly per seed
  std::vector<DetectorKind> detectors{DetectorKind::Ltv};
  bool mitigated_runs = true;  // also run each detector with the switch live
};

struct BatchTables {
  std::shared_ptr<const detector::NormalizationTables> ltv;
  std::shared_ptr<const detector::NormalizationTables> lti;
};

// One summary per detector. Every seed runs once unmitigated with all detectors watching
// (potential crash and detection times), then once mitigated per detector.
std::vector<BatchSummary> run_batch(const RunConfig& base, const BatchTables& tables,
                                    const std::vector<std::uint64_t>& seeds, const Scenario& scenario,
                                    const Progress& progress = {});

void export_csv(const RunRecord& record, std::ostream& os);
void export_csv(const RunRecord& record, const std::string& path);
std::string summary_json(const BatchSummary& s);
BatchSummary summary_from_json(const std::string& text);
std::string record_json(const RunRecord& r);

}  // namespace platoon::harness
