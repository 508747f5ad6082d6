#include "platoon/config.hpp"
#include "platoon/harness.hpp"
#include "platoon/trajgen.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace platoon;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::string trajectory;
  int kappa = 0;
  int level = 0;
  bool verbose = false;
};

void add_common(CLI::App* app, Common& c, bool with_level = true) {
  app->add_option("--config", c.config, "JSON settings file");
  app->add_option("--trajectory", c.trajectory, "trajectory file from gen-track (generated when absent)");
  app->add_option("--kappa", c.kappa, "number of vehicles");
  if (with_level) app->add_option("--level", c.level, "communication level (3, 2 or 1)")->check(CLI::Range(1, 3));
  app->add_flag("-v,--verbose", c.verbose, "progress on stderr");
}

config::FileConfig settings(const Common& c) {
  config::FileConfig f = c.config.empty() ? config::FileConfig{} : config::load(c.config);
  if (c.kappa) f.kappa = c.kappa;
  if (c.level) f.level = level_from_int(c.level);
  return f;
}

struct Trajectories {
  std::shared_ptr<const trajgen::PlatoonTrajectory> spacing, headway;
};

Trajectories trajectories(const config::FileConfig& f, const std::string& file) {
  std::shared_ptr<trajgen::PlatoonTrajectory> t;
  if (!file.empty()) {
    t = std::make_shared<trajgen::PlatoonTrajectory>(trajgen::PlatoonTrajectory::load(file));
    if (t->kappa() != f.kappa) throw ConfigError("trajectory file holds " + std::to_string(t->kappa()) + " vehicles");
  } else {
    trajgen::Path path(f.track);
    t = std::make_shared<trajgen::PlatoonTrajectory>(trajgen::generate_high_res(
        path, f.kappa, {trajgen::SpacingMode::ConstantDistance, f.gap, f.length}, kHighResDt, f.track.laps));
  }
  auto hw = std::make_shared<trajgen::PlatoonTrajectory>(trajgen::build_headway_reference(*t, f.headway, f.length));
  return {t, hw};
}

harness::RunConfig base_config(const config::FileConfig& f, const Trajectories& t) {
  auto r = config::run_config(f);
  r.trajectory = t.spacing;
  r.headway = t.headway;
  return r;
}

harness::Progress progress(bool verbose) {
  if (!verbose) return {};
  return [](const std::string& s) { std::cerr << s << '\n'; };
}

std::shared_ptr<const detector::NormalizationTables> load_tables(const std::string& path,
                                                                 const trajgen::PlatoonTrajectory& traj) {
  return std::make_shared<detector::NormalizationTables>(detector::NormalizationTables::load(path, traj.hash()));
}

bool on_off(const std::string& s) {
  if (s == "on" || s == "true" || s == "1") return true;
  if (s == "off" || s == "false" || s == "0") return false;
  throw ConfigError("expected on or off, got '" + s + "'");
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << text << '\n';
}

std::string read_text(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void print_summary(const harness::BatchSummary& s, std::ostream& os) {
  os << std::left << std::setw(22) << s.label << " runs " << s.runs << "  success " << s.successes << "  false_alarm "
     << s.false_alarms << "  potential_crash " << s.potential_crashes << "  actual_crash " << s.actual_crashes
     << "  crashed_before_detect " << s.crashed_before_detect << "  no_detect " << s.no_detect_no_crash
     << std::fixed << std::setprecision(3) << "  detect " << s.detection_mean << " +- " << s.detection_std << " s"
     << "  spacing " << s.spacing_mean << " +- " << s.spacing_std << " m\n"
     << std::defaultfloat;
}

// ---- subcommands ----

int cmd_gen_track(const Common& c, const std::string& out) {
  auto f = settings(c);
  trajgen::Path path(f.track);
  auto t = trajgen::generate_high_res(path, f.kappa, {trajgen::SpacingMode::ConstantDistance, f.gap, f.length},
                                      kHighResDt, f.track.laps);
  t.save(out);
  std::cout << "wrote " << out << ": " << t.kappa() << " vehicles, " << t.size() << " indices, lap "
            << path.length() << " m, mean speed " << path.mean_speed() << " m/s, hash " << std::hex << t.hash()
            << std::dec << '\n';
  return 0;
}

int cmd_calibrate(const Common& c, int runs, long seed_base, const std::string& out, const std::string& lti_out) {
  auto f = settings(c);
  if (runs > 0) f.calibration.runs = runs;
  if (seed_base >= 0) f.calibration.seed_base = static_cast<std::uint64_t>(seed_base);
  auto t = trajectories(f, c.trajectory);
  auto base = base_config(f, t);
  auto tables = harness::calibrate_tables(base, f.calibration, progress(c.verbose));
  tables.save(out);
  std::cout << "wrote " << out << " (" << tables.channels.size() << " channels, " << f.calibration.runs
            << " runs)\n";
  if (!lti_out.empty()) {
    detector::lti_baseline(tables, f.duration).save(lti_out);
    std::cout << "wrote " << lti_out << '\n';
  }
  return 0;
}

int cmd_thresholds(const Common& c, const std::vector<std::string>& paths, double fa, int runs, long seed_base) {
  auto f = settings(c);
  if (fa > 0) f.fa_rate = fa;
  if (runs > 0) f.threshold_runs = runs;
  if (seed_base >= 0) f.threshold_seed_base = static_cast<std::uint64_t>(seed_base);
  auto t = trajectories(f, c.trajectory);
  std::vector<detector::NormalizationTables> sets;
  for (const auto& p : paths) sets.push_back(detector::NormalizationTables::load(p, t.spacing->hash()));
  for (const auto& s : sets)
    if (s.kappa != f.kappa || s.level != f.level)
      throw ConfigError("tables were calibrated for kappa " + std::to_string(s.kappa) + ", level " +
                        std::to_string(to_int(s.level)) + "; pass matching --kappa and --level");
  std::vector<detector::NormalizationTables*> ptrs;
  for (auto& s : sets) ptrs.push_back(&s);
  std::vector<std::uint64_t> seeds;
  for (int r = 0; r < f.threshold_runs; ++r) seeds.push_back(f.threshold_seed_base + static_cast<std::uint64_t>(r));
  harness::calibrate_thresholds(base_config(f, t), ptrs, seeds, f.fa_rate, progress(c.verbose));
  for (std::size_t k = 0; k < sets.size(); ++k) {
    sets[k].save(paths[k]);
    std::cout << "thresholds at " << f.fa_rate << " written to " << paths[k] << '\n';
  }
  return 0;
}

struct RunFlags {
  std::string attack, channels, mitigate, detector, tables, out;
  double start = -1.0;
  long seed = -1;
  long duration = -1;
  long replay_offset = -1;
};

int cmd_run(const Common& c, const RunFlags& r) {
  auto f = settings(c);
  if (!r.attack.empty()) f.attack = r.attack;
  if (r.start >= 0) f.attack_start = r.start;
  if (!r.channels.empty()) f.attack_channels = r.channels;
  if (!r.mitigate.empty()) f.mitigate = on_off(r.mitigate);
  if (!r.detector.empty()) f.detector = r.detector;
  if (r.seed >= 0) f.seed = static_cast<std::uint64_t>(r.seed);
  if (r.duration > 0) f.duration = r.duration;
  if (r.replay_offset >= 0) f.replay_offset = r.replay_offset;
  auto t = trajectories(f, c.trajectory);
  auto cfg = base_config(f, t);
  if (!r.tables.empty()) cfg.tables = load_tables(r.tables, *t.spacing);
  if (!cfg.tables && r.mitigate.empty() && cfg.mitigate) {
    std::cerr << "no --tables given: running without detection\n";
    cfg.mitigate = false;
  }
  if (cfg.tables && cfg.tables->lti != (cfg.detector == harness::DetectorKind::Lti))
    throw ConfigError("--tables holds " + std::string(cfg.tables->lti ? "LTI" : "LTV") + " tables but --detector is " +
                      f.detector);

  auto H = channels::active_set(cfg.level, cfg.kappa);
  auto kind = channels::attack_kind_from_string(f.attack);
  std::vector<Channel> targets =
      f.attack_channels.empty() ? channels::attackable(H) : config::parse_channels(f.attack_channels);
  switch (kind) {
    case channels::AttackKind::None: break;
    case channels::AttackKind::Replay:
      if (f.attack_channels.empty() && f.attack_fraction < 1.0)
        targets = channels::select_channel_subset(H, f.attack_fraction, cfg.seed);
      cfg.attack = channels::make_replay(harness::replay_source(cfg, cfg.seed), targets, f.attack_start,
                                         f.replay_offset);
      break;
    case channels::AttackKind::Aggressive:
      cfg.attack = channels::make_aggressive(H, f.attack_start);
      if (!f.attack_channels.empty()) cfg.attack.targets = targets;
      break;
    case channels::AttackKind::CustomAdditive:
      throw ConfigError("custom additive attacks are only available through the library");
  }
  for (const auto& ch : cfg.attack.targets)
    if (!H.contains(ch)) throw ConfigError("channel " + ch.label() + " is not active at this level");

  auto rec = harness::run_realization(cfg);
  if (!r.out.empty()) {
    harness::export_csv(rec, r.out);
    write_text(r.out + ".json", harness::record_json(rec));
  }
  std::cout << harness::record_json(rec) << '\n';
  return 0;
}

struct BatchFlags {
  int seeds = 20;
  long seed_base = 100;
  std::string attack = "replay";
  std::string detector = "ltv,lti";
  std::string mitigate = "on";
  double fraction = -1.0;
  double onset_min = -1.0, onset_max = -1.0;
  std::string tables, lti_tables, out;
};

int cmd_batch(const Common& c, const BatchFlags& b) {
  auto f = settings(c);
  auto t = trajectories(f, c.trajectory);
  auto base = base_config(f, t);
  harness::BatchTables bt;
  if (!b.tables.empty()) bt.ltv = load_tables(b.tables, *t.spacing);
  if (!b.lti_tables.empty()) bt.lti = load_tables(b.lti_tables, *t.spacing);
  std::vector<std::uint64_t> seeds;
  for (int s = 0; s < b.seeds; ++s) seeds.push_back(static_cast<std::uint64_t>(b.seed_base + s));

  json doc;
  doc["config"] = json::parse(config::to_json(f));
  doc["seed_base"] = b.seed_base;
  doc["summaries"] = json::array();
  for (const auto& a : split(b.attack)) {
    harness::Scenario sc;
    sc.attack = channels::attack_kind_from_string(a);
    sc.fraction = b.fraction > 0 ? b.fraction : f.attack_fraction;
    sc.onset_min = b.onset_min >= 0 ? b.onset_min : f.attack_start;
    sc.onset_max = b.onset_max >= 0 ? b.onset_max : sc.onset_min;
    sc.detectors.clear();
    for (const auto& d : split(b.detector)) sc.detectors.push_back(harness::detector_kind_from_string(d));
    for (const auto& m : split(b.mitigate)) {
      sc.mitigated_runs = on_off(m);
      auto res = harness::run_batch(base, bt, seeds, sc, progress(c.verbose));
      for (auto& s : res) {
        if (!sc.mitigated_runs) s.label += "/unmitigated";
        print_summary(s, std::cout);
        doc["summaries"].push_back(json::parse(harness::summary_json(s)));
      }
    }
  }
  if (!b.out.empty()) write_text(b.out, doc.dump(2));
  return 0;
}

int cmd_report(const std::vector<std::string>& files) {
  for (const auto& path : files) {
    json j;
    try {
      j = json::parse(read_text(path));
    } catch (const json::exception& e) {
      throw IoError(path + ": " + e.what());
    }
    std::cout << path << '\n';
    if (j.contains("summaries")) {
      for (const auto& s : j.at("summaries")) print_summary(harness::summary_from_json(s.dump()), std::cout);
    } else if (j.contains("outcomes")) {
      print_summary(harness::summary_from_json(j.dump()), std::cout);
    } else if (j.contains("steps")) {
      std::cout << "  kappa " << j["kappa"] << " level " << j["level"] << " seed " << j["seed"] << " attack "
                << j["attack"] << " onset " << j["onset_step"] << " degrade " << j["degrade_step"] << " crash "
                << j["crash_step"] << " spacing " << j["spacing_mean_m"] << " +- " << j["spacing_std_m"] << '\n';
    } else {
      throw IoError(path + ": not a batch summary or run record");
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Platoon simulator with LTV dynamic watermarking"};
  app.require_subcommand(1);

  Common gc, cc, tc, rc, bc;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-track", "write the constant-distance reference trajectory");
  add_common(gen, gc, false);
  gen->add_option("--out", gen_out, "output file")->required();

  int cal_runs = 0;
  long cal_seed = -1;
  std::string cal_out, cal_lti;
  auto* cal = app.add_subcommand("calibrate", "estimate normalization tables from un-attacked runs");
  add_common(cal, cc);
  cal->add_option("--runs", cal_runs, "realizations (default from config)");
  cal->add_option("--seed-base", cal_seed, "first calibration seed");
  cal->add_option("--out", cal_out, "LTV tables file")->required();
  cal->add_option("--lti-out", cal_lti, "also write the LTI baseline");

  std::vector<std::string> thr_tables;
  double thr_fa = -1.0;
  int thr_runs = 0;
  long thr_seed = -1;
  auto* thr = app.add_subcommand("thresholds", "per-channel thresholds at a false-alarm rate (rewrites the tables)");
  add_common(thr, tc);
  thr->add_option("--tables", thr_tables, "tables files, calibrated together")->required();
  thr->add_option("--fa-rate", thr_fa, "per-step false-alarm rate");
  thr->add_option("--seeds", thr_runs, "number of un-attacked runs");
  thr->add_option("--seed-base", thr_seed, "first threshold seed");

  RunFlags rf;
  auto* run = app.add_subcommand("run", "one realization; CSV to --out and the record to <out>.json");
  add_common(run, rc);
  run->add_option("--attack", rf.attack, "none, replay or aggressive");
  run->add_option("--attack-start", rf.start, "attack onset (s)");
  run->add_option("--attack-channels", rf.channels, "comma-separated receiver_sender labels, e.g. 2_1,3_2");
  run->add_option("--mitigate", rf.mitigate, "on or off");
  run->add_option("--detector", rf.detector, "ltv or lti");
  run->add_option("--tables", rf.tables, "calibrated tables with thresholds");
  run->add_option("--seed", rf.seed, "run seed");
  run->add_option("--duration", rf.duration, "control steps");
  run->add_option("--replay-offset", rf.replay_offset, "recording step played at onset");
  run->add_option("--out", rf.out, "CSV time series");

  BatchFlags bf;
  auto* bat = app.add_subcommand("batch", "paired-seed scenario matrix");
  add_common(bat, bc);
  bat->add_option("--seeds", bf.seeds, "number of seeds");
  bat->add_option("--seed-base", bf.seed_base, "first seed");
  bat->add_option("--attack", bf.attack, "comma-separated attack kinds");
  bat->add_option("--detector", bf.detector, "comma-separated detectors");
  bat->add_option("--mitigate", bf.mitigate, "on, off or on,off");
  bat->add_option("--fraction", bf.fraction, "share of channels replayed");
  bat->add_option("--onset-min", bf.onset_min, "earliest onset (s)");
  bat->add_option("--onset-max", bf.onset_max, "latest onset (s)");
  bat->add_option("--tables", bf.tables, "LTV tables");
  bat->add_option("--lti-tables", bf.lti_tables, "LTI tables");
  bat->add_option("--out", bf.out, "summary JSON");

  std::vector<std::string> rep_files;
  auto* rep = app.add_subcommand("report", "print summaries from stored batch or run JSON");
  rep->add_option("files", rep_files, "JSON files")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen_track(gc, gen_out);
    if (*cal) return cmd_calibrate(cc, cal_runs, cal_seed, cal_out, cal_lti);
    if (*thr) return cmd_thresholds(tc, thr_tables, thr_fa, thr_runs, thr_seed);
    if (*run) return cmd_run(rc, rf);
    if (*bat) return cmd_batch(bc, bf);
    if (*rep) return cmd_report(rep_files);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
