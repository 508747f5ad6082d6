#include "platoon/harness.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <ostream>

namespace platoon::harness {

using nlohmann::json;

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::Success: return "success";
    case Outcome::FalseAlarm: return "false_alarm";
    case Outcome::CrashedBeforeDetect: return "crashed_before_detect";
    case Outcome::NoDetectNoCrash: return "no_detect_no_crash";
  }
  return "no_detect_no_crash";
}

namespace {

Outcome outcome_from_string(const std::string& s) {
  for (auto o : {Outcome::Success, Outcome::FalseAlarm, Outcome::CrashedBeforeDetect, Outcome::NoDetectNoCrash})
    if (to_string(o) == s) return o;
  throw IoError("unknown outcome '" + s + "'");
}

}  // namespace

Outcome classify(long degrade_step, long crash_step, long onset_step) {
  if (crash_step >= 0 && (degrade_step < 0 || crash_step <= degrade_step)) return Outcome::CrashedBeforeDetect;
  if (degrade_step >= 0 && (onset_step < 0 || degrade_step < onset_step)) return Outcome::FalseAlarm;
  if (degrade_step >= 0) return Outcome::Success;
  return Outcome::NoDetectNoCrash;
}

BatchSummary summarize(const std::string& label, const std::vector<SeedOutcome>& outcomes, double dt) {
  BatchSummary s;
  s.label = label;
  s.outcomes = outcomes;
  s.runs = static_cast<long>(outcomes.size());
  double sum = 0.0, sumsq = 0.0;
  for (const auto& o : outcomes) {
    s.seeds.push_back(o.seed);
    if (o.potential_crash) ++s.potential_crashes;
    if (o.crash_step >= 0) ++s.actual_crashes;
    switch (o.outcome) {
      case Outcome::Success: {
        ++s.successes;
        double t = static_cast<double>(o.degrade_step - o.onset_step) * dt;
        sum += t;
        sumsq += t * t;
        break;
      }
      case Outcome::FalseAlarm: ++s.false_alarms; break;
      case Outcome::CrashedBeforeDetect: ++s.crashed_before_detect; break;
      case Outcome::NoDetectNoCrash: ++s.no_detect_no_crash; break;
    }
  }
  if (s.successes > 0) {
    s.detection_mean = sum / static_cast<double>(s.successes);
    if (s.successes > 1)
      s.detection_std = std::sqrt(std::max(0.0, (sumsq - s.successes * s.detection_mean * s.detection_mean) /
                                                    static_cast<double>(s.successes - 1)));
  }
  return s;
}

bool BatchSummary::operator==(const BatchSummary& o) const {
  if (label != o.label || runs != o.runs || successes != o.successes || false_alarms != o.false_alarms ||
      potential_crashes != o.potential_crashes || actual_crashes != o.actual_crashes ||
      crashed_before_detect != o.crashed_before_detect || no_detect_no_crash != o.no_detect_no_crash ||
      seeds != o.seeds || outcomes.size() != o.outcomes.size())
    return false;
  auto same = [](double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; };
  if (!same(detection_mean, o.detection_mean) || !same(detection_std, o.detection_std) ||
      !same(spacing_mean, o.spacing_mean) || !same(spacing_std, o.spacing_std))
    return false;
  for (std::size_t k = 0; k < outcomes.size(); ++k) {
    const auto &a = outcomes[k], &b = o.outcomes[k];
    if (a.seed != b.seed || a.onset_step != b.onset_step || a.degrade_step != b.degrade_step ||
        a.crash_step != b.crash_step || a.potential_crash != b.potential_crash ||
        a.potential_crash_step != b.potential_crash_step || a.outcome != b.outcome)
      return false;
  }
  return true;
}

std::shared_ptr<const channels::Recording> replay_source(const RunConfig& base, std::uint64_t seed) {
  RunConfig rc = base;
  rc.seed = derive_seed(seed, stream::kAttack, 2);
  rc.attack = {};
  rc.mitigate = false;
  rc.tables.reset();
  rc.shadow.clear();
  rc.record_series = true;
  rc.stop_on_crash = false;
  rc.hook = nullptr;
  return std::make_shared<channels::Recording>(to_recording(run_realization(rc)));
}

std::vector<BatchSummary> run_batch(const RunConfig& base, const BatchTables& tables,
                                    const std::vector<std::uint64_t>& seeds, const Scenario& sc,
                                    const Progress& progress) {
  for (std::size_t a = 0; a < seeds.size(); ++a)
    for (std::size_t b = a + 1; b < seeds.size(); ++b)
      if (seeds[a] == seeds[b]) throw ConfigError("batch seeds must be distinct");
  std::vector<std::shared_ptr<const detector::NormalizationTables>> det_tables;
  for (auto d : sc.detectors) {
    auto t = d == DetectorKind::Lti ? tables.lti : tables.ltv;
    if (!t) throw ConfigError("batch needs " + to_string(d) + " tables");
    det_tables.push_back(t);
  }
  auto H = channels::active_set(base.level, base.kappa);
  std::vector<std::vector<SeedOutcome>> outcomes(sc.detectors.size());
  std::vector<double> sp_sum(sc.detectors.size(), 0.0), sp_sq(sc.detectors.size(), 0.0);
  std::vector<long> sp_n(sc.detectors.size(), 0);

  for (std::size_t si = 0; si < seeds.size(); ++si) {
    const std::uint64_t seed = seeds[si];
    RunConfig c = base;
    c.seed = seed;
    c.record_series = false;
    c.stop_on_crash = true;
    c.hook = nullptr;
    double onset = sc.onset_min;
    if (sc.onset_max > sc.onset_min) {
      RngStream arng(derive_seed(seed, stream::kAttack, 1));
      onset = sc.onset_min + arng.uniform() * (sc.onset_max - sc.onset_min);
    }
    switch (sc.attack) {
      case channels::AttackKind::None: c.attack = {}; break;
      case channels::AttackKind::Replay:
        c.attack = channels::make_replay(replay_source(base, seed), channels::select_channel_subset(H, sc.fraction, seed),
                                         onset);
        break;
      case channels::AttackKind::Aggressive: c.attack = channels::make_aggressive(H, onset); break;
      case channels::AttackKind::CustomAdditive: throw ConfigError("custom attacks are not batchable");
    }
    const long onset_step = c.attack.kind == channels::AttackKind::None ? -1 : c.attack.onset_step();

    // Paired unmitigated run, every detector watching.
    RunConfig u = c;
    u.mitigate = false;
    u.tables.reset();
    u.shadow = det_tables;
    auto open = run_realization(u);

    for (std::size_t d = 0; d < sc.detectors.size(); ++d) {
      SeedOutcome o;
      o.seed = seed;
      o.onset_step = onset_step;
      o.potential_crash = open.crash_step >= 0;
      o.potential_crash_step = open.crash_step;
      if (sc.mitigated_runs) {
        RunConfig m = c;
        m.mitigate = true;
        m.detector = sc.detectors[d];
        m.tables = det_tables[d];
        m.shadow.clear();
        auto rec = run_realization(m);
        o.degrade_step = rec.degrade_step;
        o.crash_step = rec.crash_step;
        sp_sum[d] += rec.spacing_sum;
        sp_sq[d] += rec.spacing_sumsq;
        sp_n[d] += rec.spacing_count;
      } else {
        o.degrade_step = open.monitors[d].fired_step;
        o.crash_step = (open.crash_step >= 0 && (o.degrade_step < 0 || open.crash_step <= o.degrade_step))
                           ? open.crash_step
                           : -1;
        sp_sum[d] += open.spacing_sum;
        sp_sq[d] += open.spacing_sumsq;
        sp_n[d] += open.spacing_count;
      }
      o.outcome = classify(o.degrade_step, o.crash_step, onset_step);
      outcomes[d].push_back(o);
    }
    if (progress) progress("batch: seed " + std::to_string(si + 1) + "/" + std::to_string(seeds.size()));
  }
  std::vector<BatchSummary> out;
  for (std::size_t d = 0; d < sc.detectors.size(); ++d) {
    auto s = summarize(channels::to_string(sc.attack) + "/" + to_string(sc.detectors[d]), outcomes[d]);
    if (sp_n[d] > 0) {
      s.spacing_mean = sp_sum[d] / static_cast<double>(sp_n[d]);
      s.spacing_std = sp_n[d] > 1 ? std::sqrt(std::max(0.0, (sp_sq[d] - sp_n[d] * s.spacing_mean * s.spacing_mean) /
                                                                static_cast<double>(sp_n[d] - 1)))
                                  : 0.0;
    }
    out.push_back(std::move(s));
  }
  return out;
}

void export_csv(const RunRecord& r, std::ostream& os) {
  const int K = r.kappa;
  os << "n,t,level";
  for (int i = 1; i <= K; ++i)
    os << ",x_" << i << ",y_" << i << ",psi_" << i << ",v_" << i << ",vd_" << i << ",delta_" << i << ",e_" << i
       << ",h_" << i;
  for (int m = 1; m < K; ++m) os << ",gap_" << m << '_' << m + 1;
  std::size_t meas = r.rows.empty() ? 0 : r.rows.front().meas.size();
  for (std::size_t q = 0; q < meas; ++q) os << ",y" << q;
  const bool has_nll = !r.rows.empty() && !r.rows.front().nll.empty();
  if (has_nll) {
    for (const auto& c : r.channels) os << ",nll_" << c.label();
    for (const auto& c : r.channels) os << ",exceed_" << c.label();
  }
  os << '\n';
  for (const auto& row : r.rows) {
    os << row.n << ',' << format_double(row.n * kControlDt) << ',' << row.level;
    for (int i = 0; i < K; ++i)
      os << ',' << format_double(row.x[i]) << ',' << format_double(row.y[i]) << ',' << format_double(row.psi[i])
         << ',' << format_double(row.v[i]) << ',' << format_double(row.v_d[i]) << ','
         << format_double(row.delta[i]) << ',' << format_double(row.e[i]) << ',' << row.h[i];
    for (double g : row.gap) os << ',' << format_double(g);
    for (std::size_t q = 0; q < meas; ++q) os << ',' << (q < row.meas.size() ? format_double(row.meas[q]) : "");
    if (has_nll) {
      for (double v : row.nll) os << ',' << (std::isnan(v) ? std::string() : format_double(v));
      for (auto e : row.exceed) os << ',' << static_cast<int>(e);
    }
    os << '\n';
  }
}

void export_csv(const RunRecord& record, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  export_csv(record, os);
  if (!os) throw IoError("failed writing " + path);
}

namespace {

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double from_num(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

}  // namespace

std::string summary_json(const BatchSummary& s) {
  json j;
  j["label"] = s.label;
  j["runs"] = s.runs;
  j["successes"] = s.successes;
  j["false_alarms"] = s.false_alarms;
  j["potential_crashes"] = s.potential_crashes;
  j["actual_crashes"] = s.actual_crashes;
  j["crashed_before_detect"] = s.crashed_before_detect;
  j["no_detect_no_crash"] = s.no_detect_no_crash;
  j["detection_mean_s"] = num(s.detection_mean);
  j["detection_std_s"] = num(s.detection_std);
  j["spacing_mean_m"] = num(s.spacing_mean);
  j["spacing_std_m"] = num(s.spacing_std);
  j["seeds"] = s.seeds;
  json outs = json::array();
  for (const auto& o : s.outcomes)
    outs.push_back({{"seed", o.seed},
                    {"onset_step", o.onset_step},
                    {"degrade_step", o.degrade_step},
                    {"crash_step", o.crash_step},
                    {"potential_crash", o.potential_crash},
                    {"potential_crash_step", o.potential_crash_step},
                    {"outcome", to_string(o.outcome)}});
  j["outcomes"] = outs;
  return j.dump(2);
}

BatchSummary summary_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("summary JSON: ") + e.what());
  }
  BatchSummary s;
  s.label = j.at("label").get<std::string>();
  s.runs = j.at("runs").get<long>();
  s.successes = j.at("successes").get<long>();
  s.false_alarms = j.at("false_alarms").get<long>();
  s.potential_crashes = j.at("potential_crashes").get<long>();
  s.actual_crashes = j.at("actual_crashes").get<long>();
  s.crashed_before_detect = j.at("crashed_before_detect").get<long>();
  s.no_detect_no_crash = j.at("no_detect_no_crash").get<long>();
  s.detection_mean = from_num(j.at("detection_mean_s"));
  s.detection_std = from_num(j.at("detection_std_s"));
  s.spacing_mean = from_num(j.at("spacing_mean_m"));
  s.spacing_std = from_num(j.at("spacing_std_m"));
  s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  for (const auto& o : j.at("outcomes")) {
    SeedOutcome so;
    so.seed = o.at("seed").get<std::uint64_t>();
    so.onset_step = o.at("onset_step").get<long>();
    so.degrade_step = o.at("degrade_step").get<long>();
    so.crash_step = o.at("crash_step").get<long>();
    so.potential_crash = o.at("potential_crash").get<bool>();
    so.potential_crash_step = o.at("potential_crash_step").get<long>();
    so.outcome = outcome_from_string(o.at("outcome").get<std::string>());
    s.outcomes.push_back(so);
  }
  return s;
}

std::string record_json(const RunRecord& r) {
  json j;
  j["kappa"] = r.kappa;
  j["level"] = to_int(r.level);
  j["seed"] = r.seed;
  j["duration"] = r.duration;
  j["steps"] = r.steps;
  j["attack"] = channels::to_string(r.attack);
  j["onset_step"] = r.onset_step;
  json att = json::array();
  for (const auto& c : r.attacked) att.push_back(c.label());
  j["attacked_channels"] = att;
  j["mitigate"] = r.mitigate;
  j["detector"] = to_string(r.detector);
  json chs = json::array();
  for (const auto& c : r.channels) chs.push_back(c.label());
  j["channels"] = chs;
  j["degrade_step"] = r.degrade_step;
  j["degrade_channel"] = r.degrade_channel >= 0 ? json(r.channels[r.degrade_channel].label()) : json(nullptr);
  j["crash_step"] = r.crash_step;
  j["crash_gap"] = r.crash_gap >= 0 ? json(std::to_string(r.crash_gap + 1) + "_" + std::to_string(r.crash_gap + 2))
                                    : json(nullptr);
  j["crash_after_degrade"] = r.crash_after_degrade;
  j["spacing_mean_m"] = num(r.spacing_mean());
  j["spacing_std_m"] = num(r.spacing_std());
  j["min_bumper_m"] = num(r.min_bumper);
  json mons = json::array();
  for (const auto& m : r.monitors) {
    long e = 0, t = 0;
    for (std::size_t c = 0; c < m.nll_count.size(); ++c) {
      e += m.exceed_count[c];
      t += m.nll_count[c];
    }
    mons.push_back({{"detector", to_string(m.kind)},
                    {"fired_step", m.fired_step},
                    {"fired_channel", m.fired_channel >= 0 ? json(r.channels[m.fired_channel].label()) : json(nullptr)},
                    {"exceedances", e},
                    {"tests", t}});
  }
  j["monitors"] = mons;
  return j.dump(2);
}

}  // namespace platoon::harness
