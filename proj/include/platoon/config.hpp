#pragma once

#include "platoon/harness.hpp"

#include <string>

namespace platoon::config {

// Settings file contents; defaults are the published experiment values.
struct FileConfig {
  int kappa = 4;
  Level level = Level::Full;
  trajgen::TrackSpec track = trajgen::TrackSpec::default_track();
  double gap = 1.0;      // constant-distance centre gap (m)
  double headway = 1.0;  // level-1 headway (s)
  double length = 0.5;   // vehicle length (m)
  harness::NoiseConfig noise;
  int detect_window = 40;
  int detect_count = -1;  // -1: 24 below ten vehicles, 18 from ten up
  long duration = 6001;
  std::uint64_t seed = 1;
  int rho_max = 5;
  harness::CalibrationSettings calibration;
  double fa_rate = 0.005;
  int threshold_runs = 20;
  std::uint64_t threshold_seed_base = 5000;
  std::string attack = "none";
  double attack_start = 100.0;
  double attack_fraction = 1.0;
  std::string attack_channels;  // comma-separated "i_j" labels; empty means all
  long replay_offset = 0;
  bool mitigate = true;
  std::string detector = "ltv";

  detector::DetectionPolicy policy() const;
};

detector::DetectionPolicy default_policy(int kappa);

FileConfig from_json(const std::string& text);
std::string to_json(const FileConfig& c);
FileConfig load(const std::string& path);

// "2_1,3_2" -> channels (1-based labels).
std::vector<Channel> parse_channels(const std::string& text);

// Pieces of a RunConfig that the file determines (trajectories are attached by the caller).
harness::RunConfig run_config(const FileConfig& c);

}  // namespace platoon::config
