#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "platoon/harness.hpp"
#include "platoon/dynamics.hpp"
#include "platoon/trajgen.hpp"

#include <cmath>
#include <map>
#include <sstream>

using namespace platoon;
using namespace platoon::harness;

namespace {

// Small uniform-speed loop so calibration stays cheap.
struct Fixture {
  int kappa;
  std::shared_ptr<trajgen::Path> path;
  std::shared_ptr<trajgen::PlatoonTrajectory> traj, headway;
  long steps;

  explicit Fixture(int k) : kappa(k) {
    auto spec = trajgen::TrackSpec::rounded_rectangle(80.0, 40.0, 12.0, 5.0, 3.0);
    path = std::make_shared<trajgen::Path>(spec);
    traj = std::make_shared<trajgen::PlatoonTrajectory>(
        trajgen::generate_high_res(*path, kappa, {trajgen::SpacingMode::ConstantDistance, 1.0, 0.5}, kHighResDt, 2));
    headway = std::make_shared<trajgen::PlatoonTrajectory>(trajgen::build_headway_reference(*traj));
    steps = traj->size() / kHighResPerStep;
  }

  RunConfig base(Level level) const {
    RunConfig c;
    c.kappa = kappa;
    c.level = level;
    c.trajectory = traj;
    c.headway = headway;
    c.duration = steps;
    c.mitigate = false;
    c.detector = DetectorKind::Ltv;
    c.seed = 42;
    return c;
  }
};

struct Calibrated {
  std::shared_ptr<detector::NormalizationTables> ltv, lti;
};

Calibrated calibrate(const Fixture& f, Level level) {
  auto c = f.base(level);
  CalibrationSettings s;
  s.runs = 4;
  auto tab = calibrate_tables(c, s);
  auto lti = detector::lti_baseline(tab, f.steps);
  std::vector<std::uint64_t> seeds{7001, 7002, 7003, 7004};
  calibrate_thresholds(c, {&tab, &lti}, seeds, 0.005);
  return {std::make_shared<detector::NormalizationTables>(tab), std::make_shared<detector::NormalizationTables>(lti)};
}

const Fixture& fix3() {
  static Fixture f(3);
  return f;
}

const Calibrated& tables3() {
  static Calibrated c = calibrate(fix3(), Level::Full);
  return c;
}

std::string csv(const RunRecord& r) {
  std::ostringstream os;
  export_csv(r, os);
  return os.str();
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  return out;
}

}  // namespace

TEST_CASE("identical configs give identical records") {
  auto c = fix3().base(Level::Full);
  c.shadow = {tables3().ltv, tables3().lti};
  auto a = run_realization(c), b = run_realization(c);
  CHECK(csv(a) == csv(b));
  CHECK(record_json(a) == record_json(b));
  c.seed = 43;
  CHECK(csv(run_realization(c)) != csv(a));
}

TEST_CASE("mirrored watermark negates every draw and nothing else") {
  auto c = fix3().base(Level::Full);
  c.duration = 400;
  auto a = run_realization(c);
  c.noise.mirror_watermark = true;
  auto b = run_realization(c);
  double worst_gap = 0.0;
  for (long n = 0; n < c.duration; ++n) {
    for (int i = 0; i < fix3().kappa; ++i) CHECK(b.rows[n].e[i] == -a.rows[n].e[i]);
    for (int m = 0; m + 1 < fix3().kappa; ++m) worst_gap = std::max(worst_gap, std::abs(b.rows[n].gap[m] - a.rows[n].gap[m]));
  }
  // the first step only sees the shared measurement noise
  CHECK(b.rows[0].meas == a.rows[0].meas);
  CHECK(worst_gap > 1e-3);
}

TEST_CASE("record schema") {
  auto c = fix3().base(Level::Full);
  c.duration = 300;
  c.shadow = {tables3().ltv};
  auto r = run_realization(c);
  CHECK(r.steps == 300);
  CHECK(r.rows.size() == 300);
  std::string text = csv(r);
  std::istringstream is(text);
  std::string header, line;
  std::getline(is, header);
  long rows = 0;
  std::size_t width = split(header).size();
  while (std::getline(is, line)) {
    ++rows;
    auto cells = line;
    CHECK(std::count(cells.begin(), cells.end(), ',') + 1 == static_cast<long>(width));
  }
  CHECK(rows == 300);
  long nll_cols = 0;
  for (const auto& h : split(header)) nll_cols += h.rfind("nll_", 0) == 0;
  CHECK(nll_cols == static_cast<long>(channels::active_set(Level::Full, 3).size()));
  CHECK(r.seed == 42);
  CHECK(record_json(r).find("\"seed\": 42") != std::string::npos);
}

TEST_CASE("trajectory cursors move forward") {
  auto c = fix3().base(Level::Full);
  auto r = run_realization(c);
  const long size = fix3().traj->size();
  for (int i = 0; i < 3; ++i) {
    long forward = 0;
    for (std::size_t n = 1; n < r.rows.size(); ++n) {
      long d = ((r.rows[n].h[i] - r.rows[n - 1].h[i]) % size + size) % size;
      forward += d < size / 2;
    }
    CHECK(forward >= 0.99 * static_cast<double>(r.rows.size() - 1));
  }
}

TEST_CASE("noise-free runs hold the reference gap") {
  // In a turn the slip velocity makes a car cover arclength at v / cos(slip), while the
  // reference advances at v. The leading car enters each corner one gap earlier, so the
  // gap can open by about gap * (sec(slip) - 1) before the controllers take it back.
  const dynamics::DynamicsConstants dc;
  const double slip = std::abs(trajgen::sideslip(5.0, 1.0 / 12.0, dc));
  for (Level lv : {Level::Full, Level::LeaderFollow, Level::Acc}) {
    CAPTURE(to_int(lv));
    auto c = fix3().base(lv);
    c.noise = {0.0, 0.0, 0.0, 0.0, 0.0};
    c.duration = 500;
    auto r = run_realization(c);
    const auto& ref = lv == Level::Acc ? *fix3().headway : *fix3().traj;
    double worst = 0.0, widest = 0.0;
    for (const auto& row : r.rows)
      for (int m = 0; m < 2; ++m) {
        worst = std::max(worst, std::abs(row.gap[m] - ref.gap(row.h[m + 1], m)));
        widest = std::max(widest, ref.gap(row.h[m + 1], m));
      }
    CHECK(worst < 1e-4 + widest * (1.0 / std::cos(slip) - 1.0));
    CHECK(r.crash_step == -1);
  }
}

TEST_CASE("noise-free runs on a straight stay on the reference") {
  for (Level lv : {Level::Full, Level::LeaderFollow, Level::Acc}) {
    CAPTURE(to_int(lv));
    auto c = fix3().base(lv);
    c.noise = {0.0, 0.0, 0.0, 0.0, 0.0};
    c.duration = 100;  // first corner starts after step 105
    auto r = run_realization(c);
    const auto& ref = lv == Level::Acc ? *fix3().headway : *fix3().traj;
    double worst = 0.0;
    for (const auto& row : r.rows)
      for (int i = 0; i < 3; ++i) {
        if (i > 0) worst = std::max(worst, std::abs(row.gap[i - 1] - ref.gap(row.h[i], i - 1)));
        worst = std::max(worst, std::abs(row.v[i] - ref.v(row.h[i], i)));
      }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("detector choice does not touch an unmitigated run") {
  auto c = fix3().base(Level::Full);
  c.duration = 800;
  c.tables = tables3().ltv;
  auto a = run_realization(c);
  c.tables = tables3().lti;
  c.detector = DetectorKind::Lti;
  auto b = run_realization(c);
  for (std::size_t n = 0; n < a.rows.size(); ++n) {
    CHECK(a.rows[n].x == b.rows[n].x);
    CHECK(a.rows[n].v == b.rows[n].v);
  }
}

TEST_CASE("self replay is invisible") {
  auto c = fix3().base(Level::Full);
  c.duration = 1000;
  auto clean = run_realization(c);
  auto rec = std::make_shared<channels::Recording>(to_recording(clean));
  auto attacked = c;
  attacked.attack = channels::make_replay(rec, channels::attackable(channels::active_set(Level::Full, 3)), 20.0, 400);
  auto r = run_realization(attacked);
  CHECK(r.onset_step == 400);
  for (std::size_t n = 0; n < r.rows.size(); ++n) CHECK(r.rows[n].x == clean.rows[n].x);
}

TEST_CASE("configuration errors") {
  auto c = fix3().base(Level::Full);
  c.mitigate = true;
  CHECK_THROWS_AS(run_realization(c), ConfigError);
  c = fix3().base(Level::Full);
  c.duration = 0;
  CHECK_THROWS_AS(run_realization(c), ConfigError);
  Fixture two(2);
  auto d = two.base(Level::LeaderFollow);
  CHECK_THROWS_AS(run_realization(d), ConfigError);
  // tables for another trajectory are refused
  auto e = two.base(Level::Full);
  e.shadow = {tables3().ltv};
  CHECK_THROWS(run_realization(e));
}

TEST_CASE("outcome taxonomy") {
  CHECK(classify(-1, -1, 100) == Outcome::NoDetectNoCrash);
  CHECK(classify(120, -1, 100) == Outcome::Success);
  CHECK(classify(100, -1, 100) == Outcome::Success);
  CHECK(classify(99, -1, 100) == Outcome::FalseAlarm);
  CHECK(classify(50, -1, -1) == Outcome::FalseAlarm);
  CHECK(classify(-1, 130, 100) == Outcome::CrashedBeforeDetect);
  CHECK(classify(140, 130, 100) == Outcome::CrashedBeforeDetect);
  CHECK(classify(130, 130, 100) == Outcome::CrashedBeforeDetect);
  CHECK(classify(120, 130, 100) == Outcome::Success);
  CHECK(classify(-1, -1, -1) == Outcome::NoDetectNoCrash);

  std::vector<SeedOutcome> outs;
  for (int k = 0; k < 4; ++k) {
    SeedOutcome o;
    o.seed = 10 + k;
    o.onset_step = 100;
    o.degrade_step = k < 2 ? 120 + 20 * k : -1;
    o.outcome = classify(o.degrade_step, o.crash_step, o.onset_step);
    outs.push_back(o);
  }
  auto s = summarize("cell", outs);
  CHECK(s.runs == 4);
  CHECK(s.successes == 2);
  CHECK(s.no_detect_no_crash == 2);
  CHECK(s.detection_mean == doctest::Approx(1.5));
  CHECK(s.detection_std == doctest::Approx(std::sqrt(0.5)));
  CHECK(s.seeds == std::vector<std::uint64_t>{10, 11, 12, 13});
  auto single = summarize("one", {SeedOutcome{}});
  CHECK(single.runs == 1);
  CHECK(single.successes + single.false_alarms + single.actual_crashes + single.potential_crashes == 0);
}

TEST_CASE("summary JSON round trip") {
  BatchSummary s;
  s.label = "replay/ltv";
  s.runs = 2;
  s.successes = 1;
  s.false_alarms = 1;
  s.detection_mean = 0.85;
  s.detection_std = std::nan("");
  s.spacing_mean = 0.5123456789012345;
  s.spacing_std = 0.1;
  s.seeds = {1, 18446744073709551615ull};
  s.outcomes = {{1, 2000, 2020, -1, true, 2100, Outcome::Success},
                {18446744073709551615ull, 2000, 15, -1, false, -1, Outcome::FalseAlarm}};
  CHECK(summary_from_json(summary_json(s)) == s);
  CHECK_THROWS_AS(summary_from_json("{"), IoError);
}

TEST_CASE("batch partitions and mitigation safety") {
  SUBCASE("replay on level 3") {
    auto c = fix3().base(Level::Full);
    Scenario sc;
    sc.attack = channels::AttackKind::Replay;
    sc.onset_min = 20.0;
    sc.onset_max = 30.0;
    sc.detectors = {DetectorKind::Ltv, DetectorKind::Lti};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    auto res = run_batch(c, {tables3().ltv, tables3().lti}, seeds, sc);
    REQUIRE(res.size() == 2);
    for (const auto& s : res) {
      CHECK(s.runs == 3);
      CHECK(s.successes + s.false_alarms + s.crashed_before_detect + s.no_detect_no_crash == s.runs);
      for (const auto& o : s.outcomes) {
        CHECK(o.onset_step >= 400);
        CHECK(o.onset_step <= 600);
        if (o.crash_step >= 0) CHECK(o.potential_crash);
      }
    }
    // both detectors see the same attack onsets and the same unmitigated runs
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(res[0].outcomes[k].onset_step == res[1].outcomes[k].onset_step);
      CHECK(res[0].outcomes[k].potential_crash_step == res[1].outcomes[k].potential_crash_step);
    }
    CHECK_THROWS_AS(run_batch(c, {tables3().ltv, tables3().lti}, {1, 1}, sc), ConfigError);
  }
  SUBCASE("no attack means no potential crashes from the attack") {
    auto c = fix3().base(Level::Full);
    Scenario sc;
    sc.attack = channels::AttackKind::None;
    auto res = run_batch(c, {tables3().ltv, nullptr}, {5, 6}, sc);
    REQUIRE(res.size() == 1);
    for (const auto& o : res[0].outcomes) {
      CHECK(o.onset_step == -1);
      CHECK(o.outcome != Outcome::Success);
    }
  }
}
