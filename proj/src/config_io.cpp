#include "platoon/config.hpp"

#include "json.hpp"

#include <fstream>
#include <sstream>

namespace platoon::config {

using nlohmann::json;

detector::DetectionPolicy default_policy(int kappa) {
  detector::DetectionPolicy p;
  p.window = 40;
  p.count = kappa >= 10 ? 18 : 24;
  return p;
}

detector::DetectionPolicy FileConfig::policy() const {
  auto p = default_policy(kappa);
  p.window = detect_window;
  if (detect_count >= 0) p.count = detect_count;
  return p;
}

namespace {

template <class T>
void opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json track_json(const trajgen::TrackSpec& t) {
  json wp = json::array();
  for (const auto& p : t.waypoints) wp.push_back({p.x(), p.y()});
  return {{"waypoints", wp},
          {"fillet_radius", t.fillet_radius},
          {"curvature_ramp", t.curvature_ramp},
          {"straight_speeds", t.straight_speeds},
          {"corner_speeds", t.corner_speeds},
          {"speed_transition", t.speed_transition},
          {"laps", t.laps}};
}

trajgen::TrackSpec track_from(const json& j, trajgen::TrackSpec t) {
  if (j.contains("waypoints")) {
    t.waypoints.clear();
    for (const auto& p : j.at("waypoints")) {
      if (!p.is_array() || p.size() != 2) throw ConfigError("track waypoints must be [x, y] pairs");
      t.waypoints.emplace_back(p[0].get<double>(), p[1].get<double>());
    }
  }
  opt(j, "fillet_radius", t.fillet_radius);
  opt(j, "curvature_ramp", t.curvature_ramp);
  opt(j, "straight_speeds", t.straight_speeds);
  opt(j, "corner_speeds", t.corner_speeds);
  opt(j, "speed_transition", t.speed_transition);
  opt(j, "laps", t.laps);
  return t;
}

}  // namespace

FileConfig from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  FileConfig c;
  try {
    opt(j, "kappa", c.kappa);
    if (j.contains("level")) c.level = level_from_int(j.at("level").get<int>());
    if (j.contains("track")) c.track = track_from(j.at("track"), c.track);
    opt(j, "gap", c.gap);
    opt(j, "headway", c.headway);
    opt(j, "length", c.length);
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      opt(n, "process", c.noise.process);
      opt(n, "leader_speed", c.noise.leader_speed);
      opt(n, "follower_gap", c.noise.follower_gap);
      opt(n, "follower_speed", c.noise.follower_speed);
      opt(n, "watermark", c.noise.watermark);
    }
    if (j.contains("detection")) {
      const auto& d = j.at("detection");
      opt(d, "window", c.detect_window);
      opt(d, "count", c.detect_count);
      opt(d, "fa_rate", c.fa_rate);
      opt(d, "threshold_runs", c.threshold_runs);
      opt(d, "threshold_seed_base", c.threshold_seed_base);
      opt(d, "rho_max", c.rho_max);
    }
    if (j.contains("calibration")) {
      const auto& k = j.at("calibration");
      opt(k, "runs", c.calibration.runs);
      opt(k, "seed_base", c.calibration.seed_base);
      opt(k, "ell", c.calibration.ell);
      opt(k, "v_bin", c.calibration.v_bin);
      opt(k, "g_bin", c.calibration.g_bin);
      opt(k, "decay", c.calibration.decay);
      opt(k, "half_width", c.calibration.half_width);
    }
    opt(j, "duration", c.duration);
    opt(j, "seed", c.seed);
    if (j.contains("attack")) {
      const auto& a = j.at("attack");
      opt(a, "kind", c.attack);
      opt(a, "start", c.attack_start);
      opt(a, "fraction", c.attack_fraction);
      opt(a, "channels", c.attack_channels);
      opt(a, "replay_offset", c.replay_offset);
    }
    opt(j, "mitigate", c.mitigate);
    opt(j, "detector", c.detector);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  channels::attack_kind_from_string(c.attack);
  harness::detector_kind_from_string(c.detector);
  if (c.kappa < 2) throw ConfigError("config: kappa must be at least 2");
  return c;
}

std::string to_json(const FileConfig& c) {
  json j;
  j["kappa"] = c.kappa;
  j["level"] = to_int(c.level);
  j["track"] = track_json(c.track);
  j["gap"] = c.gap;
  j["headway"] = c.headway;
  j["length"] = c.length;
  j["noise"] = {{"process", c.noise.process},
                {"leader_speed", c.noise.leader_speed},
                {"follower_gap", c.noise.follower_gap},
                {"follower_speed", c.noise.follower_speed},
                {"watermark", c.noise.watermark}};
  j["detection"] = {{"window", c.detect_window},
                    {"count", c.detect_count},
                    {"fa_rate", c.fa_rate},
                    {"threshold_runs", c.threshold_runs},
                    {"threshold_seed_base", c.threshold_seed_base},
                    {"rho_max", c.rho_max}};
  j["calibration"] = {{"runs", c.calibration.runs},
                      {"seed_base", c.calibration.seed_base},
                      {"ell", c.calibration.ell},
                      {"v_bin", c.calibration.v_bin},
                      {"g_bin", c.calibration.g_bin},
                      {"decay", c.calibration.decay},
                      {"half_width", c.calibration.half_width}};
  j["duration"] = c.duration;
  j["seed"] = c.seed;
  j["attack"] = {{"kind", c.attack},
                 {"start", c.attack_start},
                 {"fraction", c.attack_fraction},
                 {"channels", c.attack_channels},
                 {"replay_offset", c.replay_offset}};
  j["mitigate"] = c.mitigate;
  j["detector"] = c.detector;
  return j.dump(2);
}

FileConfig load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json(ss.str());
}

std::vector<Channel> parse_channels(const std::string& text) {
  std::vector<Channel> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    auto us = tok.find('_');
    if (us == std::string::npos) throw ConfigError("channel '" + tok + "' must look like i_j");
    int i = 0, j = 0;
    try {
      i = std::stoi(tok.substr(0, us));
      j = std::stoi(tok.substr(us + 1));
    } catch (const std::exception&) {
      throw ConfigError("channel '" + tok + "' must look like i_j");
    }
    if (i < 1 || j < 1) throw ConfigError("channel labels are 1-based");
    out.push_back({i - 1, j - 1});
  }
  return out;
}

harness::RunConfig run_config(const FileConfig& c) {
  harness::RunConfig r;
  r.kappa = c.kappa;
  r.level = c.level;
  r.noise = c.noise;
  r.mitigate = c.mitigate;
  r.detector = harness::detector_kind_from_string(c.detector);
  r.policy = c.policy();
  r.seed = c.seed;
  r.duration = c.duration;
  r.rho_max = c.rho_max;
  return r;
}

}  // namespace platoon::config
