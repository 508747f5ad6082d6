#pragma once

#include "platoon/common.hpp"
#include "platoon/dynamics.hpp"

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace platoon::trajgen {

// Smooth step on [0,1] with every derivative vanishing at both ends.
double smooth_step(double u);
double smooth_step_slope(double u);

struct TrackSpec {
  std::vector<Eigen::Vector2d> waypoints;  // polygon corners, in driving order
  double fillet_radius = 5.0;
  double curvature_ramp = 3.0;        // arclength over which curvature ramps in/out (m)
  std::vector<double> straight_speeds;  // one per edge, or a single broadcast value
  std::vector<double> corner_speeds;    // one per waypoint, or a single broadcast value
  double speed_transition = 6.0;        // arclength of each speed change (m)
  bool closed = true;
  int laps = 3;

  static TrackSpec default_track();
  static TrackSpec rounded_rectangle(double width, double height, double radius, double speed,
                                     double ramp = 0.0);
};

struct Piece {
  enum Kind { Straight, Corner } kind = Straight;
  double s0 = 0.0;
  double length = 0.0;
  double speed = 0.0;
  double turn = 0.0;    // signed turning angle of a corner
  double radius = 0.0;
  double ramp = 0.0;
};

struct PathCursor {
  double s = 0.0;          // unwrapped arclength of the previous projection
  int half_window = 300;   // grid points searched on either side
};

// Closed, arclength-parameterized path with a speed target per arclength.
class Path {
 public:
  Path() = default;
  explicit Path(const TrackSpec& spec);

  double length() const { return length_; }
  const TrackSpec& spec() const { return spec_; }
  const std::vector<Piece>& pieces() const { return pieces_; }

  Eigen::Vector2d position(double s) const;
  double heading(double s) const;   // wrapped
  double curvature(double s) const;
  double speed(double s) const;
  double speed_slope(double s) const;  // dv/ds
  double mean_speed() const;           // arclength over lap time
  double lap_time() const { return lap_time_; }

  // Nearest arclength to p, searched around the cursor; returns unwrapped s.
  double project(const Eigen::Vector2d& p, PathCursor& cursor) const;
  // Global search; used to seed cursors.
  double project_global(const Eigen::Vector2d& p) const;

 private:
  double wrap(double s) const;
  int piece_at(double s_wrapped) const;
  double heading_unwrapped(double s_wrapped) const;
  double segment_projection(const Eigen::Vector2d& p, int j, double& dist2) const;

  TrackSpec spec_;
  std::vector<Piece> pieces_;
  double length_ = 0.0;
  double ds_ = 0.0;
  std::vector<double> gx_, gy_, gphi_;  // grid samples, gphi unwrapped
  double lap_time_ = 0.0;
};

Path build_track(const TrackSpec& spec);

enum class SpacingMode { ConstantDistance, ConstantHeadway };

struct SpacingPolicy {
  SpacingMode mode = SpacingMode::ConstantDistance;
  double value = 1.0;   // gap (m) or headway (s)
  double length = 0.5;  // vehicle length (m)
};

struct ReferencePoint {
  double x, y, psi, v, v_d, delta;
};

class PlatoonTrajectory {
 public:
  double dt_hi() const { return dt_hi_; }
  int kappa() const { return kappa_; }
  long size() const { return n_; }
  const SpacingPolicy& spacing() const { return spacing_; }
  const Path& path() const { return *path_; }
  std::shared_ptr<const Path> path_ptr() const { return path_; }
  int laps() const { return laps_; }

  long wrap(long k) const;
  ReferencePoint point(long k, int vehicle) const;
  double v(long k, int vehicle) const { return v_[vehicle][wrap(k)]; }
  double v_d(long k, int vehicle) const { return vd_[vehicle][wrap(k)]; }
  // Gap between vehicle m and m+1 (0-based m).
  double gap(long k, int m) const { return gap_[m][wrap(k)]; }
  double lead_distance(long k, int vehicle) const;
  double x(long k, int vehicle) const { return x_[vehicle][wrap(k)]; }
  double y(long k, int vehicle) const { return y_[vehicle][wrap(k)]; }

  std::uint64_t hash() const;

  void save(std::ostream& os) const;
  static PlatoonTrajectory load(std::istream& is);
  void save(const std::string& path) const;
  static PlatoonTrajectory load(const std::string& path);

  bool same_values(const PlatoonTrajectory& o) const;

 private:
  friend PlatoonTrajectory generate_high_res(const Path&, int, const SpacingPolicy&, double, int,
                                             const dynamics::DynamicsConstants&);
  friend PlatoonTrajectory build_headway_reference(const PlatoonTrajectory&, double, double,
                                                   const dynamics::DynamicsConstants&);
  void allocate(int kappa, long n);
  static void solve_yaw(PlatoonTrajectory& t, const Path& path, const std::vector<double>& arc, int i,
                        const dynamics::DynamicsConstants& c);

  double dt_hi_ = kHighResDt;
  int kappa_ = 0;
  long n_ = 0;
  int laps_ = 3;
  SpacingPolicy spacing_;
  std::shared_ptr<const Path> path_;
  std::vector<std::vector<double>> x_, y_, psi_, v_, vd_, delta_;
  std::vector<std::vector<double>> gap_;
};

// Desired speed that produces acceleration a at speed v (root nearest v).
double invert_speed_input(double v, double a, const dynamics::DynamicsConstants& c);
// Steering that produces yaw rate k*v at speed v.
double invert_steering(double v, double k, const dynamics::DynamicsConstants& c);
// Steady-state angle between course and yaw on a path of curvature k.
double sideslip(double v, double k, const dynamics::DynamicsConstants& c);

PlatoonTrajectory generate_high_res(const Path& path, int kappa, const SpacingPolicy& spacing,
                                    double dt_hi = kHighResDt, int laps = 3,
                                    const dynamics::DynamicsConstants& c = {});

PlatoonTrajectory build_headway_reference(const PlatoonTrajectory& traj, double headway = 1.0,
                                          double length = 0.5,
                                          const dynamics::DynamicsConstants& c = {});

struct TrajectoryCursor {
  long h = 0;            // unwrapped index
  long half_width = 200;
};

long closest_index(const PlatoonTrajectory& traj, int vehicle, double x, double y, TrajectoryCursor& cursor);
long closest_index_global(const PlatoonTrajectory& traj, int vehicle, double x, double y);

// Steering input above this magnitude is treated as infeasible.
inline constexpr double kSteeringLimit = 1.0;

}  // namespace platoon::trajgen
