#include "platoon/trajgen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace platoon::trajgen {

namespace {

double bump(double t) { return t > 0.0 ? std::exp(-1.0 / t) : 0.0; }
double bump_slope(double t) { return t > 0.0 ? std::exp(-1.0 / t) / (t * t) : 0.0; }

std::vector<double> broadcast(const std::vector<double>& v, std::size_t n, const char* what) {
  if (v.size() == 1) return std::vector<double>(n, v[0]);
  if (v.size() != n) throw ConfigError(std::string("track spec: ") + what + " count must be 1 or one per edge");
  return v;
}

// Curvature along a corner piece at local arclength u.
double corner_curvature(const Piece& p, double u) {
  double k = (p.turn > 0 ? 1.0 : -1.0) / p.radius;
  if (p.ramp > 0.0) {
    if (u < p.ramp) return k * smooth_step(u / p.ramp);
    if (u > p.length - p.ramp) return k * smooth_step((p.length - u) / p.ramp);
  }
  return k;
}

struct Planar {
  double phi, x, y;
};

// Integrate heading/position along a corner from the local origin.
Planar integrate_corner(const Piece& p, int steps) {
  Planar s{0.0, 0.0, 0.0};
  double h = p.length / steps;
  auto f = [&](double u, const Planar& q) { return Planar{corner_curvature(p, u), std::cos(q.phi), std::sin(q.phi)}; };
  for (int i = 0; i < steps; ++i) {
    double u = i * h;
    Planar k1 = f(u, s);
    Planar k2 = f(u + h / 2, {s.phi + h / 2 * k1.phi, s.x + h / 2 * k1.x, s.y + h / 2 * k1.y});
    Planar k3 = f(u + h / 2, {s.phi + h / 2 * k2.phi, s.x + h / 2 * k2.x, s.y + h / 2 * k2.y});
    Planar k4 = f(u + h, {s.phi + h * k3.phi, s.x + h * k3.x, s.y + h * k3.y});
    s.phi += h / 6 * (k1.phi + 2 * k2.phi + 2 * k3.phi + k4.phi);
    s.x += h / 6 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x);
    s.y += h / 6 * (k1.y + 2 * k2.y + 2 * k3.y + k4.y);
  }
  return s;
}

double parse_double(const std::string& tok) {
  double v = 0.0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw IoError("trajectory file: bad number '" + tok + "'");
  return v;
}

}  // namespace

double smooth_step(double u) {
  if (u <= 0.0) return 0.0;
  if (u >= 1.0) return 1.0;
  double a = bump(u), b = bump(1.0 - u);
  return a / (a + b);
}

double smooth_step_slope(double u) {
  if (u <= 0.0 || u >= 1.0) return 0.0;
  double a = bump(u), b = bump(1.0 - u);
  double da = bump_slope(u), db = -bump_slope(1.0 - u);
  return (da * b - a * db) / ((a + b) * (a + b));
}

TrackSpec TrackSpec::rounded_rectangle(double width, double height, double radius, double speed, double ramp) {
  TrackSpec t;
  t.waypoints = {{0.0, 0.0}, {width, 0.0}, {width, height}, {0.0, height}};
  t.fillet_radius = radius;
  t.curvature_ramp = ramp;
  t.straight_speeds = {speed};
  t.corner_speeds = {speed};
  return t;
}

TrackSpec TrackSpec::default_track() {
  TrackSpec t = rounded_rectangle(50.0, 20.0, 5.0, 1.3, 3.0);
  t.straight_speeds = {1.6, 1.3, 1.6, 1.3};
  t.corner_speeds = {1.05};
  t.speed_transition = 6.0;
  return t;
}

Path build_track(const TrackSpec& spec) { return Path(spec); }

Path::Path(const TrackSpec& spec_in) : spec_(spec_in) {
  std::vector<Eigen::Vector2d> wp = spec_.waypoints;
  if (wp.size() >= 2 && (wp.front() - wp.back()).norm() < 1e-12) wp.pop_back();
  if (!spec_.closed) throw GeometryError("track must be closed");
  if (wp.size() < 4) throw GeometryError("track needs at least 4 distinct waypoints");
  if (!(spec_.fillet_radius > 0.0)) throw GeometryError("fillet radius must be positive");
  if (spec_.curvature_ramp < 0.0 || spec_.speed_transition < 0.0) throw GeometryError("negative transition length");
  if (spec_.laps < 1) throw GeometryError("laps must be at least 1");
  const std::size_t m = wp.size();
  auto straight_v = broadcast(spec_.straight_speeds, m, "straight speed");
  auto corner_v = broadcast(spec_.corner_speeds, m, "corner speed");
  for (double v : straight_v)
    if (v < 1.0 || v > 20.0) throw GeometryError("speed targets must lie in [1, 20] m/s");
  for (double v : corner_v)
    if (v < 1.0 || v > 20.0) throw GeometryError("speed targets must lie in [1, 20] m/s");

  // Corner geometry at every vertex.
  std::vector<Piece> corners(m);
  std::vector<double> tangent(m);
  std::vector<double> edge_len(m), edge_dir(m);
  for (std::size_t b = 0; b < m; ++b) {
    Eigen::Vector2d e = wp[(b + 1) % m] - wp[b];
    edge_len[b] = e.norm();
    if (edge_len[b] < 1e-9) throw GeometryError("repeated waypoint");
    edge_dir[b] = std::atan2(e.y(), e.x());
  }
  for (std::size_t b = 0; b < m; ++b) {
    double in = edge_dir[(b + m - 1) % m], out = edge_dir[b];
    double turn = dynamics::wrap_angle(out - in);
    if (std::abs(turn) < 1e-9 || std::abs(turn) > kPi - 1e-6)
      throw GeometryError("degenerate corner at waypoint " + std::to_string(b + 1));
    Piece c;
    c.kind = Piece::Corner;
    c.turn = turn;
    c.radius = spec_.fillet_radius;
    c.ramp = spec_.curvature_ramp;
    c.length = c.radius * std::abs(turn) + c.ramp;
    if (c.length < 2.0 * c.ramp) throw GeometryError("curvature ramp too long for corner " + std::to_string(b + 1));
    c.speed = corner_v[b];
    Planar end = integrate_corner(c, 20000);
    double sn = std::sin(std::abs(turn));
    double yy = std::abs(end.y);
    double t_out = yy / sn;
    double t_in = end.x - t_out * std::cos(std::abs(turn));
    tangent[b] = 0.5 * (t_in + t_out);
    corners[b] = c;
  }
  std::vector<double> straight_len(m);
  for (std::size_t b = 0; b < m; ++b) {
    straight_len[b] = edge_len[b] - tangent[b] - tangent[(b + 1) % m];
    if (straight_len[b] < 0.0) throw GeometryError("fillets overlap on edge " + std::to_string(b + 1));
  }

  // Pieces start at the midpoint of edge 0.
  double s = 0.0;
  auto push_straight = [&](double len, double v) {
    Piece p;
    p.kind = Piece::Straight;
    p.s0 = s;
    p.length = len;
    p.speed = v;
    pieces_.push_back(p);
    s += len;
  };
  push_straight(straight_len[0] / 2, straight_v[0]);
  for (std::size_t q = 1; q <= m; ++q) {
    std::size_t b = q % m;
    Piece c = corners[b];
    c.s0 = s;
    pieces_.push_back(c);
    s += c.length;
    if (b != 0) push_straight(straight_len[b], straight_v[b]);
  }
  push_straight(straight_len[0] / 2, straight_v[0]);
  length_ = s;

  for (std::size_t p = 0; p < pieces_.size(); ++p) {
    double prev = pieces_[(p + pieces_.size() - 1) % pieces_.size()].speed;
    double next = pieces_[(p + 1) % pieces_.size()].speed;
    int needs = (prev != pieces_[p].speed) + (next != pieces_[p].speed);
    if (pieces_[p].length + 1e-12 < 0.5 * needs * spec_.speed_transition)
      throw GeometryError("speed transition longer than a track piece");
  }

  // Dense grid by RK4 along the whole loop.
  int n = static_cast<int>(std::ceil(length_ / 0.01));
  ds_ = length_ / n;
  gx_.resize(n + 1);
  gy_.resize(n + 1);
  gphi_.resize(n + 1);
  Eigen::Vector2d start = 0.5 * (wp[0] + wp[1]);
  Planar st{edge_dir[0], start.x(), start.y()};
  gx_[0] = st.x;
  gy_[0] = st.y;
  gphi_[0] = st.phi;
  const int sub = 4;
  // Curvature evaluated on the piece that owns [a, b], so jumps at piece ends never fall inside a step.
  auto rk4 = [&](double a, double b, const Piece& pc) {
    double h = (b - a) / sub;
    auto k_at = [&](double u) {
      return pc.kind == Piece::Straight ? 0.0 : corner_curvature(pc, std::clamp(u - pc.s0, 0.0, pc.length));
    };
    for (int k = 0; k < sub; ++k) {
      double u = a + k * h;
      auto f = [&](double uu, const Planar& q) { return Planar{k_at(uu), std::cos(q.phi), std::sin(q.phi)}; };
      Planar k1 = f(u, st);
      Planar k2 = f(u + h / 2, {st.phi + h / 2 * k1.phi, st.x + h / 2 * k1.x, st.y + h / 2 * k1.y});
      Planar k3 = f(u + h / 2, {st.phi + h / 2 * k2.phi, st.x + h / 2 * k2.x, st.y + h / 2 * k2.y});
      Planar k4 = f(u + h, {st.phi + h * k3.phi, st.x + h * k3.x, st.y + h * k3.y});
      st.phi += h / 6 * (k1.phi + 2 * k2.phi + 2 * k3.phi + k4.phi);
      st.x += h / 6 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x);
      st.y += h / 6 * (k1.y + 2 * k2.y + 2 * k3.y + k4.y);
    }
  };
  std::size_t piece = 0;
  for (int i = 0; i < n; ++i) {
    double a = i * ds_, b = (i + 1) * ds_;
    while (piece + 1 < pieces_.size() && pieces_[piece + 1].s0 <= a) ++piece;
    while (piece + 1 < pieces_.size() && pieces_[piece + 1].s0 < b) {
      rk4(a, pieces_[piece + 1].s0, pieces_[piece]);
      a = pieces_[++piece].s0;
    }
    rk4(a, b, pieces_[piece]);
    gx_[i + 1] = st.x;
    gy_[i + 1] = st.y;
    gphi_[i + 1] = st.phi;
  }
  double gap = std::hypot(gx_[n] - gx_[0], gy_[n] - gy_[0]);
  if (gap > 1e-6) throw GeometryError("track does not close (gap " + std::to_string(gap) + " m)");
  gx_[n] = gx_[0];
  gy_[n] = gy_[0];

  // Lap time by integrating dt = ds / v with Simpson's rule.
  const int ns = 200000;
  double hs = length_ / ns, acc = 0.0;
  for (int i = 0; i <= ns; ++i) {
    double w = (i == 0 || i == ns) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w / speed(i * hs);
  }
  lap_time_ = acc * hs / 3.0;
}

double Path::wrap(double s) const {
  double w = std::fmod(s, length_);
  if (w < 0.0) w += length_;
  if (w >= length_) w -= length_;
  return w;
}

int Path::piece_at(double sw) const {
  auto it = std::upper_bound(pieces_.begin(), pieces_.end(), sw,
                             [](double v, const Piece& p) { return v < p.s0; });
  int idx = static_cast<int>(it - pieces_.begin()) - 1;
  return std::clamp(idx, 0, static_cast<int>(pieces_.size()) - 1);
}

double Path::curvature(double s) const {
  double sw = wrap(s);
  const Piece& p = pieces_[piece_at(sw)];
  if (p.kind == Piece::Straight) return 0.0;
  return corner_curvature(p, std::clamp(sw - p.s0, 0.0, p.length));
}

double Path::speed(double s) const {
  double sw = wrap(s);
  int idx = piece_at(sw);
  const Piece& p = pieces_[idx];
  const int np = static_cast<int>(pieces_.size());
  const double half = spec_.speed_transition / 2;
  double v = p.speed;
  if (half <= 0.0) return v;
  double from_start = sw - p.s0, to_end = p.s0 + p.length - sw;
  if (from_start < half) {
    double prev = pieces_[(idx + np - 1) % np].speed;
    v = prev + (p.speed - prev) * smooth_step((from_start + half) / spec_.speed_transition);
  } else if (to_end < half) {
    double next = pieces_[(idx + 1) % np].speed;
    v = p.speed + (next - p.speed) * smooth_step((half - to_end) / spec_.speed_transition);
  }
  return v;
}

double Path::speed_slope(double s) const {
  double sw = wrap(s);
  int idx = piece_at(sw);
  const Piece& p = pieces_[idx];
  const int np = static_cast<int>(pieces_.size());
  const double half = spec_.speed_transition / 2;
  if (half <= 0.0) return 0.0;
  double from_start = sw - p.s0, to_end = p.s0 + p.length - sw;
  if (from_start < half) {
    double prev = pieces_[(idx + np - 1) % np].speed;
    return (p.speed - prev) * smooth_step_slope((from_start + half) / spec_.speed_transition) /
           spec_.speed_transition;
  }
  if (to_end < half) {
    double next = pieces_[(idx + 1) % np].speed;
    return (next - p.speed) * smooth_step_slope((half - to_end) / spec_.speed_transition) / spec_.speed_transition;
  }
  return 0.0;
}

double Path::mean_speed() const { return length_ / lap_time_; }

double Path::heading_unwrapped(double sw) const {
  int n = static_cast<int>(gx_.size()) - 1;
  int j = std::min(static_cast<int>(sw / ds_), n - 1);
  double t = (sw - j * ds_) / ds_;
  double p0 = gphi_[j], p1 = gphi_[j + 1];
  double m0 = curvature(j * ds_) * ds_, m1 = curvature((j + 1) * ds_) * ds_;
  double t2 = t * t, t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * p0 + (t3 - 2 * t2 + t) * m0 + (-2 * t3 + 3 * t2) * p1 + (t3 - t2) * m1;
}

double Path::heading(double s) const { return dynamics::wrap_angle(heading_unwrapped(wrap(s))); }

Eigen::Vector2d Path::position(double s) const {
  double sw = wrap(s);
  int n = static_cast<int>(gx_.size()) - 1;
  int j = std::min(static_cast<int>(sw / ds_), n - 1);
  double t = (sw - j * ds_) / ds_;
  double t2 = t * t, t3 = t2 * t;
  double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t, h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
  double c0 = std::cos(gphi_[j]) * ds_, s0 = std::sin(gphi_[j]) * ds_;
  double c1 = std::cos(gphi_[j + 1]) * ds_, s1 = std::sin(gphi_[j + 1]) * ds_;
  return {h00 * gx_[j] + h10 * c0 + h01 * gx_[j + 1] + h11 * c1,
          h00 * gy_[j] + h10 * s0 + h01 * gy_[j + 1] + h11 * s1};
}

double Path::segment_projection(const Eigen::Vector2d& p, int j, double& dist2) const {
  double ax = gx_[j], ay = gy_[j];
  double bx = gx_[j + 1] - ax, by = gy_[j + 1] - ay;
  double len2 = bx * bx + by * by;
  double t = len2 > 0 ? ((p.x() - ax) * bx + (p.y() - ay) * by) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double dx = ax + t * bx - p.x(), dy = ay + t * by - p.y();
  dist2 = dx * dx + dy * dy;
  return (j + t) * ds_;
}

double Path::project(const Eigen::Vector2d& p, PathCursor& cursor) const {
  int n = static_cast<int>(gx_.size()) - 1;
  int centre = static_cast<int>(wrap(cursor.s) / ds_);
  double best = std::numeric_limits<double>::infinity(), best_s = 0.0;
  for (int off = -cursor.half_window; off <= cursor.half_window; ++off) {
    int j = ((centre + off) % n + n) % n;
    double d2;
    double sl = segment_projection(p, j, d2);
    if (d2 < best) {
      best = d2;
      best_s = sl;
    }
  }
  double base = cursor.s - wrap(cursor.s);
  double s = base + best_s;
  if (s - cursor.s > length_ / 2) s -= length_;
  if (cursor.s - s > length_ / 2) s += length_;
  cursor.s = s;
  return s;
}

double Path::project_global(const Eigen::Vector2d& p) const {
  int n = static_cast<int>(gx_.size()) - 1;
  double best = std::numeric_limits<double>::infinity(), best_s = 0.0;
  for (int j = 0; j < n; ++j) {
    double d2;
    double sl = segment_projection(p, j, d2);
    if (d2 < best) {
      best = d2;
      best_s = sl;
    }
  }
  return best_s;
}

double invert_speed_input(double v, double a, const dynamics::DynamicsConstants& c) {
  // c7 x^2 + c6 x + (c5 - a) = 0 with x = v - v_d; stable root nearest zero.
  double A = c.c7, B = c.c6, C = c.c5 - a;
  double disc = B * B - 4 * A * C;
  if (disc < 0.0) throw GeometryError("requested acceleration beyond the model's authority");
  double q = -0.5 * (B + (B >= 0 ? 1.0 : -1.0) * std::sqrt(disc));
  double x = C / q;
  return v - x;
}

double invert_steering(double v, double k, const dynamics::DynamicsConstants& c) {
  return (std::atan(k * (c.c3 + c.c4 * v * v)) - c.c2) / c.c1;
}

double sideslip(double v, double k, const dynamics::DynamicsConstants& c) {
  return std::atan(k * (c.c8 + c.c9 * v * v));
}

void PlatoonTrajectory::allocate(int kappa, long n) {
  kappa_ = kappa;
  n_ = n;
  for (auto* a : {&x_, &y_, &psi_, &v_, &vd_, &delta_}) a->assign(kappa, std::vector<double>(n));
  gap_.assign(std::max(0, kappa - 1), std::vector<double>(n));
}

long PlatoonTrajectory::wrap(long k) const {
  long w = k % n_;
  return w < 0 ? w + n_ : w;
}

ReferencePoint PlatoonTrajectory::point(long k, int i) const {
  long w = wrap(k);
  return {x_[i][w], y_[i][w], psi_[i][w], v_[i][w], vd_[i][w], delta_[i][w]};
}

double PlatoonTrajectory::lead_distance(long k, int vehicle) const {
  double acc = 0.0;
  long w = wrap(k);
  for (int m = 0; m < vehicle; ++m) acc += gap_[m][w];
  return acc;
}

namespace {

struct FillContext {
  const Path& path;
  const dynamics::DynamicsConstants& c;
};

void check_steer(double delta, long k, int i) {
  if (!std::isfinite(delta) || std::abs(delta) > kSteeringLimit)
    throw GeometryError("infeasible track: steering " + std::to_string(delta) + " for vehicle " +
                        std::to_string(i + 1) + " at index " + std::to_string(k));
}

}  // namespace

// Yaw and steering that keep the velocity (including the slip term) along the path.
// Yaw must satisfy psi = theta - atan(g psi_dot / v), g = c8 + c9 v^2, theta the path heading.
// That relation relaxes with time constant |g|/v, backward in time for g < 0 and forward for
// g > 0. Stretches where the constant is too short to integrate use the steady-turn angle.
void PlatoonTrajectory::solve_yaw(PlatoonTrajectory& t, const Path& path, const std::vector<double>& arc, int i,
                                  const dynamics::DynamicsConstants& c) {
  const long n = t.n_;
  const double h = t.dt_hi_;
  const auto& v = t.v_[i];
  auto g = [&](double vel) { return c.c8 + c.c9 * vel * vel; };
  std::vector<double> theta(n);
  theta[0] = path.heading(arc[0]);
  for (long k = 1; k < n; ++k)
    theta[k] = theta[k - 1] + dynamics::wrap_angle(path.heading(arc[k]) - path.heading(arc[k - 1]));
  auto theta_mid = [&](long k) {
    return theta[k] + dynamics::wrap_angle(path.heading(0.5 * (arc[k] + arc[k + 1])) - path.heading(arc[k]));
  };
  auto f = [&](double th, double p, double vel) { return std::tan(th - p) * vel / g(vel); };
  std::vector<int> cls(n);
  for (long k = 0; k < n; ++k) {
    double tau = v[k] > 0.0 ? g(v[k]) / v[k] : 0.0;
    cls[k] = tau < -2 * h ? -1 : (tau > 2 * h ? 1 : 0);
  }
  std::vector<double> psi(n);
  for (long k = 0; k < n; ++k) psi[k] = theta[k] - sideslip(v[k], path.curvature(arc[k]), c);
  for (long a = 0; a < n;) {
    long b = a;
    while (b + 1 < n && cls[b + 1] == cls[a]) ++b;
    if (cls[a] < 0) {
      for (long k = b; k > a; --k) {
        double tm = theta_mid(k - 1), vm = 0.5 * (v[k] + v[k - 1]);
        double a1 = f(theta[k], psi[k], v[k]);
        double a2 = f(tm, psi[k] - 0.5 * h * a1, vm);
        double a3 = f(tm, psi[k] - 0.5 * h * a2, vm);
        double a4 = f(theta[k - 1], psi[k] - h * a3, v[k - 1]);
        psi[k - 1] = psi[k] - h / 6 * (a1 + 2 * a2 + 2 * a3 + a4);
      }
    } else if (cls[a] > 0) {
      for (long k = a; k < b; ++k) {
        double tm = theta_mid(k), vm = 0.5 * (v[k] + v[k + 1]);
        double a1 = f(theta[k], psi[k], v[k]);
        double a2 = f(tm, psi[k] + 0.5 * h * a1, vm);
        double a3 = f(tm, psi[k] + 0.5 * h * a2, vm);
        double a4 = f(theta[k + 1], psi[k] + h * a3, v[k + 1]);
        psi[k + 1] = psi[k] + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4);
      }
    }
    a = b + 1;
  }
  for (long k = 0; k < n; ++k) {
    double rate;
    if (k >= 2 && k + 2 < n)
      rate = (-psi[k + 2] + 8 * psi[k + 1] - 8 * psi[k - 1] + psi[k - 2]) / (12 * h);
    else if (k + 1 < n && k >= 1)
      rate = (psi[k + 1] - psi[k - 1]) / (2 * h);
    else
      rate = k == 0 ? (psi[1] - psi[0]) / h : (psi[k] - psi[k - 1]) / h;
    t.psi_[i][k] = dynamics::wrap_angle(psi[k]);
    double delta = v[k] > 0.0 ? invert_steering(v[k], rate / v[k], c) : invert_steering(v[k], 0.0, c);
    check_steer(delta, k, i);
    t.delta_[i][k] = delta;
  }
}

PlatoonTrajectory generate_high_res(const Path& path, int kappa, const SpacingPolicy& spacing, double dt_hi,
                                    int laps, const dynamics::DynamicsConstants& c) {
  if (kappa < 1) throw ConfigError("kappa must be positive");
  if (!(dt_hi > 0.0)) throw ConfigError("dt_hi must be positive");
  if (spacing.mode == SpacingMode::ConstantDistance && !(spacing.value > spacing.length))
    throw ConfigError("constant spacing gap must exceed the vehicle length");
  if (spacing.mode == SpacingMode::ConstantHeadway && !(spacing.value > 0.0))
    throw ConfigError("headway must be positive");
  PlatoonTrajectory t;
  t.dt_hi_ = dt_hi;
  t.laps_ = laps;
  t.spacing_ = spacing;
  t.path_ = std::make_shared<const Path>(path);
  long n = std::lround(laps * path.lap_time() / dt_hi);
  t.allocate(kappa, n);

  // Joint state: leader arclength then follower speeds (headway mode).
  const bool headway = spacing.mode == SpacingMode::ConstantHeadway;
  const double th = spacing.value;
  const int dim = headway ? kappa : 1;
  std::vector<double> z(dim), k1(dim), k2(dim), k3(dim), k4(dim), tmp(dim);
  z[0] = 0.0;
  for (int i = 1; i < dim; ++i) z[i] = path.speed(0.0);
  auto rhs = [&](const std::vector<double>& q, std::vector<double>& out) {
    out[0] = path.speed(q[0]);
    for (int i = 1; i < dim; ++i) out[i] = ((i == 1 ? out[0] : q[i - 1]) - q[i]) / th;
  };
  std::vector<double> speeds(kappa), accel(kappa), s_pos(kappa);
  std::vector<std::vector<double>> arc(kappa, std::vector<double>(n));
  for (long k = 0; k < n; ++k) {
    // Evaluate the reference at z.
    speeds[0] = path.speed(z[0]);
    accel[0] = path.speed_slope(z[0]) * speeds[0];
    s_pos[0] = z[0];
    for (int i = 1; i < kappa; ++i) {
      if (headway) {
        speeds[i] = z[i];
        accel[i] = (speeds[i - 1] - speeds[i]) / th;
        double g = th * speeds[i] + spacing.length;
        t.gap_[i - 1][k] = g;
        s_pos[i] = s_pos[i - 1] - g;
      } else {
        speeds[i] = speeds[0];
        accel[i] = accel[0];
        t.gap_[i - 1][k] = spacing.value;
        s_pos[i] = s_pos[i - 1] - spacing.value;
      }
    }
    for (int i = 0; i < kappa; ++i) {
      Eigen::Vector2d pos = path.position(s_pos[i]);
      t.x_[i][k] = pos.x();
      t.y_[i][k] = pos.y();
      t.v_[i][k] = speeds[i];
      t.vd_[i][k] = invert_speed_input(speeds[i], accel[i], c);
      arc[i][k] = s_pos[i];
    }
    // RK4 advance.
    rhs(z, k1);
    for (int i = 0; i < dim; ++i) tmp[i] = z[i] + dt_hi / 2 * k1[i];
    rhs(tmp, k2);
    for (int i = 0; i < dim; ++i) tmp[i] = z[i] + dt_hi / 2 * k2[i];
    rhs(tmp, k3);
    for (int i = 0; i < dim; ++i) tmp[i] = z[i] + dt_hi * k3[i];
    rhs(tmp, k4);
    for (int i = 0; i < dim; ++i) z[i] += dt_hi / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
  }
  for (int i = 0; i < kappa; ++i) PlatoonTrajectory::solve_yaw(t, path, arc[i], i, c);
  return t;
}

PlatoonTrajectory build_headway_reference(const PlatoonTrajectory& traj, double headway, double length,
                                          const dynamics::DynamicsConstants& c) {
  if (traj.spacing().mode != SpacingMode::ConstantDistance)
    throw ConfigError("headway reference must be built from a constant-distance trajectory");
  SpacingPolicy sp{SpacingMode::ConstantHeadway, headway, length};
  return generate_high_res(traj.path(), traj.kappa(), sp, traj.dt_hi(), traj.laps(), c);
}

std::uint64_t PlatoonTrajectory::hash() const {
  std::uint64_t h = fnv1a(&kappa_, sizeof kappa_);
  h = fnv1a(&n_, sizeof n_, h);
  h = fnv1a(&dt_hi_, sizeof dt_hi_, h);
  int mode = static_cast<int>(spacing_.mode);
  h = fnv1a(&mode, sizeof mode, h);
  h = fnv1a(&spacing_.value, sizeof spacing_.value, h);
  for (const auto* arr : {&x_, &y_, &psi_, &v_, &vd_, &delta_, &gap_})
    for (const auto& col : *arr) h = fnv1a(col.data(), col.size() * sizeof(double), h);
  return h;
}

bool PlatoonTrajectory::same_values(const PlatoonTrajectory& o) const {
  return kappa_ == o.kappa_ && n_ == o.n_ && dt_hi_ == o.dt_hi_ && spacing_.mode == o.spacing_.mode &&
         spacing_.value == o.spacing_.value && spacing_.length == o.spacing_.length && x_ == o.x_ &&
         y_ == o.y_ && psi_ == o.psi_ && v_ == o.v_ && vd_ == o.vd_ && delta_ == o.delta_ && gap_ == o.gap_;
}

void PlatoonTrajectory::save(std::ostream& os) const {
  const TrackSpec& ts = path_->spec();
  os << "# platoon-trajectory 1\n";
  os << "dt_hi " << format_double(dt_hi_) << "\n";
  os << "kappa " << kappa_ << "\n";
  os << "indices " << n_ << "\n";
  os << "laps " << laps_ << "\n";
  os << "mode " << (spacing_.mode == SpacingMode::ConstantDistance ? "constant-distance" : "constant-headway")
     << " " << format_double(spacing_.value) << " " << format_double(spacing_.length) << "\n";
  os << "track " << format_double(ts.fillet_radius) << " " << format_double(ts.curvature_ramp) << " "
     << format_double(ts.speed_transition) << " " << ts.laps << " " << ts.waypoints.size();
  for (const auto& w : ts.waypoints) os << " " << format_double(w.x()) << " " << format_double(w.y());
  os << " " << ts.straight_speeds.size();
  for (double v : ts.straight_speeds) os << " " << format_double(v);
  os << " " << ts.corner_speeds.size();
  for (double v : ts.corner_speeds) os << " " << format_double(v);
  os << "\n";
  os << "# index vehicle x y psi v v_d delta d\n";
  for (long k = 0; k < n_; ++k)
    for (int i = 0; i < kappa_; ++i) {
      os << k << ' ' << i + 1 << ' ' << format_double(x_[i][k]) << ' ' << format_double(y_[i][k]) << ' '
         << format_double(psi_[i][k]) << ' ' << format_double(v_[i][k]) << ' ' << format_double(vd_[i][k]) << ' '
         << format_double(delta_[i][k]) << ' ' << format_double(i == 0 ? 0.0 : gap_[i - 1][k]) << '\n';
    }
}

PlatoonTrajectory PlatoonTrajectory::load(std::istream& is) {
  std::string line, key;
  auto next = [&](const char* expect) {
    if (!std::getline(is, line)) throw IoError(std::string("trajectory file truncated before ") + expect);
    std::istringstream ls(line);
    ls >> key;
    if (key != expect) throw IoError(std::string("trajectory file: expected ") + expect + ", got " + key);
    std::string rest;
    std::getline(ls, rest);
    return std::istringstream(rest);
  };
  if (!std::getline(is, line) || line.rfind("# platoon-trajectory", 0) != 0) throw IoError("not a trajectory file");
  PlatoonTrajectory t;
  std::string tok;
  { auto ls = next("dt_hi"); ls >> tok; t.dt_hi_ = parse_double(tok); }
  int kappa; long n;
  { auto ls = next("kappa"); ls >> kappa; }
  { auto ls = next("indices"); ls >> n; }
  { auto ls = next("laps"); ls >> t.laps_; }
  {
    auto ls = next("mode");
    std::string mode, a, b;
    ls >> mode >> a >> b;
    t.spacing_.mode = mode == "constant-distance" ? SpacingMode::ConstantDistance : SpacingMode::ConstantHeadway;
    t.spacing_.value = parse_double(a);
    t.spacing_.length = parse_double(b);
  }
  TrackSpec ts;
  {
    auto ls = next("track");
    std::size_t count;
    ls >> tok; ts.fillet_radius = parse_double(tok);
    ls >> tok; ts.curvature_ramp = parse_double(tok);
    ls >> tok; ts.speed_transition = parse_double(tok);
    ls >> ts.laps >> count;
    for (std::size_t w = 0; w < count; ++w) {
      std::string a, b;
      ls >> a >> b;
      ts.waypoints.emplace_back(parse_double(a), parse_double(b));
    }
    ls >> count;
    for (std::size_t w = 0; w < count; ++w) { ls >> tok; ts.straight_speeds.push_back(parse_double(tok)); }
    ls >> count;
    for (std::size_t w = 0; w < count; ++w) { ls >> tok; ts.corner_speeds.push_back(parse_double(tok)); }
    if (!ls) throw IoError("trajectory file: malformed track line");
  }
  t.path_ = std::make_shared<const Path>(ts);
  t.allocate(kappa, n);
  std::getline(is, line);
  for (long k = 0; k < n; ++k)
    for (int i = 0; i < kappa; ++i) {
      if (!std::getline(is, line)) throw IoError("trajectory file truncated at index " + std::to_string(k));
      std::istringstream ls(line);
      long kk;
      int ii;
      std::string f[7];
      ls >> kk >> ii;
      for (auto& s : f) ls >> s;
      if (!ls || kk != k || ii != i + 1) throw IoError("trajectory file: row out of order at index " + std::to_string(k));
      t.x_[i][k] = parse_double(f[0]);
      t.y_[i][k] = parse_double(f[1]);
      t.psi_[i][k] = parse_double(f[2]);
      t.v_[i][k] = parse_double(f[3]);
      t.vd_[i][k] = parse_double(f[4]);
      t.delta_[i][k] = parse_double(f[5]);
      if (i > 0) t.gap_[i - 1][k] = parse_double(f[6]);
    }
  return t;
}

void PlatoonTrajectory::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write trajectory file " + path);
  save(os);
  if (!os) throw IoError("failed writing trajectory file " + path);
}

PlatoonTrajectory PlatoonTrajectory::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open trajectory file " + path);
  return load(is);
}

long closest_index(const PlatoonTrajectory& traj, int vehicle, double x, double y, TrajectoryCursor& cursor) {
  if (cursor.half_width < 0) throw std::logic_error("closest_index: empty search window");
  double best = std::numeric_limits<double>::infinity();
  long best_k = cursor.h;
  for (long k = cursor.h - cursor.half_width; k <= cursor.h + cursor.half_width; ++k) {
    double dx = traj.x(k, vehicle) - x, dy = traj.y(k, vehicle) - y;
    double d2 = dx * dx + dy * dy;
    if (d2 <= best) {
      best = d2;
      best_k = k;
    }
  }
  cursor.h = best_k;
  return best_k;
}

long closest_index_global(const PlatoonTrajectory& traj, int vehicle, double x, double y) {
  double best = std::numeric_limits<double>::infinity();
  long best_k = 0;
  for (long k = 0; k < traj.size(); ++k) {
    double dx = traj.x(k, vehicle) - x, dy = traj.y(k, vehicle) - y;
    double d2 = dx * dx + dy * dy;
    if (d2 <= best) {
      best = d2;
      best_k = k;
    }
  }
  return best_k;
}

}  // namespace platoon::trajgen
