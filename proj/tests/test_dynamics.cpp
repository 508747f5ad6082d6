#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "platoon/dynamics.hpp"

#include <cmath>

using namespace platoon;
using namespace platoon::dynamics;

namespace {

VehicleState integrate(VehicleState s, const VehicleInput& u, double dt, double horizon) {
  DynamicsConstants c;
  long n = std::lround(horizon / dt);
  for (long k = 0; k < n; ++k) s = step_nonlinear(s, u, c, dt);
  return s;
}

double dist(const VehicleState& a, const VehicleState& b) {
  return std::sqrt(std::pow(a.x - b.x, 2) + std::pow(a.y - b.y, 2) + std::pow(a.psi - b.psi, 2) +
                   std::pow(a.v - b.v, 2));
}

}  // namespace

TEST_CASE("published constants") {
  DynamicsConstants c;
  CHECK(c.c1 == 1.6615e-5);
  CHECK(c.c2 == -1.9555e-7);
  CHECK(c.c3 == 3.619e-6);
  CHECK(c.c4 == 4.382e-7);
  CHECK(c.c5 == -8.1112e-2);
  CHECK(c.c6 == -1.4736);
  CHECK(c.c7 == 1.2569e-1);
  CHECK(c.c8 == 7.6459e-2);
  CHECK(c.c9 == -1.3991e-2);
  for (double v = 0.0; v <= 20.0; v += 0.5) CHECK(c.c3 + c.c4 * v * v > 0.0);
}

TEST_CASE("speed row with unit speed error") {
  DynamicsConstants c;
  CHECK(longitudinal_accel(2.0, 1.0, c) == doctest::Approx(-1.429022).epsilon(1e-9));
}

TEST_CASE("straight line at v = v_d drifts by c5") {
  DynamicsConstants c;
  VehicleState s{0.0, 0.0, 0.3, 1.5};
  VehicleInput u{-c.c2 / c.c1, 1.5};
  auto d = state_derivative(s, u, c);
  CHECK(d.psi == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(d.v == doctest::Approx(c.c5));
  auto n = step_nonlinear(s, u, c, 1e-4);
  CHECK(n.v - s.v == doctest::Approx(c.c5 * 1e-4).epsilon(1e-6));
  CHECK(n.psi == doctest::Approx(0.3));
}

TEST_CASE("vanishing step returns the input state") {
  DynamicsConstants c;
  VehicleState s{1.0, 2.0, 0.5, 1.4};
  VehicleInput u{0.02, 1.6};
  double e1 = dist(step_nonlinear(s, u, c, 1e-3), s);
  double e2 = dist(step_nonlinear(s, u, c, 1e-6), s);
  CHECK(e2 < 1e-5);
  CHECK(e1 / e2 == doctest::Approx(1000.0).epsilon(0.05));  // first order in dt
}

TEST_CASE("RK4 convergence order under step halving") {
  VehicleState s{0.0, 0.0, 0.1, 1.2};
  VehicleInput u{0.03, 1.8};
  auto a = integrate(s, u, 0.2, 4.0);
  auto b = integrate(s, u, 0.1, 4.0);
  auto d = integrate(s, u, 0.05, 4.0);
  double ratio = dist(a, b) / dist(b, d);
  CHECK(ratio > 8.0);   // fourth order: ~16
  CHECK(ratio < 32.0);
}

TEST_CASE("invalid integration input") {
  DynamicsConstants c;
  CHECK_THROWS_AS(step_nonlinear({}, {0.0, 1.0}, c, 0.0), ArgumentError);
  CHECK_THROWS_AS(step_nonlinear({0, 0, 0, 1}, {NAN, 1.0}, c, 0.05, 2, 7), IntegrationError);
  try {
    step_nonlinear({0, 0, 0, 1}, {NAN, 1.0}, c, 0.05, 2, 7);
  } catch (const IntegrationError& e) {
    CHECK(std::string(e.what()).find("vehicle 3") != std::string::npos);
    CHECK(std::string(e.what()).find("step 7") != std::string::npos);
  }
}

TEST_CASE("heading stays wrapped") {
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(3 * kPi / 2) == doctest::Approx(-kPi / 2));
  DynamicsConstants c;
  VehicleState s{0, 0, 3.1, 1.5};
  VehicleInput u{0.2, 1.5};
  for (int k = 0; k < 200; ++k) {
    s = step_nonlinear(s, u, c, 0.05);
    CHECK(s.psi > -kPi);
    CHECK(s.psi <= kPi);
  }
}

TEST_CASE("bumper distance and crash flag") {
  CHECK(bumper_to_bumper(1.0, 0.5) == doctest::Approx(0.5));
  CHECK_FALSE(is_crash(bumper_to_bumper(1.0, 0.5)));
  CHECK(bumper_to_bumper(0.5, 0.5) == 0.0);
  CHECK(is_crash(bumper_to_bumper(0.5, 0.5)));
  CHECK(bumper_to_bumper(0.3, 0.5) == doctest::Approx(-0.2));
  CHECK(is_crash(bumper_to_bumper(0.3, 0.5)));
  CHECK_THROWS_AS(bumper_to_bumper(1.0, -0.1), ArgumentError);
}

TEST_CASE("lead distances are cumulative gaps") {
  auto g = PlatoonGeometry::from({1.1, 0.9, 1.3}, {1, 2, 3, 4});
  CHECK(g.d_lead[0] == 0.0);
  CHECK(g.d_lead[1] == 1.1);
  CHECK(g.d_lead[2] == 1.1 + 0.9);
  CHECK(g.d_lead[3] == (1.1 + 0.9) + 1.3);
  VectorXd x = g.stacked();
  REQUIRE(x.size() == 7);
  CHECK(x(2) == 1.3);
  CHECK(x(3) == 1.0);
  CHECK_THROWS_AS(PlatoonGeometry::from({1.0}, {1, 2, 3}), ConfigError);
}

TEST_CASE("process noise") {
  auto g = PlatoonGeometry::from({1.0, 1.0, 1.0}, {1.5, 1.5, 1.5, 1.5});
  RngStream rng(7);
  SUBCASE("zero covariance leaves geometry unchanged") {
    auto h = inject_process_noise(g, MatrixXd::Zero(7, 7), rng);
    CHECK(h.d == g.d);
    CHECK(h.v == g.v);
  }
  SUBCASE("non-PSD covariance is rejected") {
    MatrixXd bad = MatrixXd::Identity(7, 7);
    bad(0, 0) = -1.0;
    CHECK_THROWS_AS(inject_process_noise(g, bad, rng), ConfigError);
    CHECK_THROWS_AS(inject_process_noise(g, MatrixXd::Identity(5, 5), rng), ConfigError);
  }
  SUBCASE("sample mean and spread") {
    const int N = 100000;
    MatrixXd cov = 1e-6 * MatrixXd::Identity(7, 7);
    VectorXd sum = VectorXd::Zero(7), sq = VectorXd::Zero(7);
    for (int k = 0; k < N; ++k) {
      auto h = inject_process_noise(g, cov, rng);
      VectorXd w = h.stacked() - g.stacked();
      sum += w;
      sq += w.cwiseProduct(w);
    }
    for (int q = 0; q < 7; ++q) {
      CHECK(std::abs(sum(q) / N) < 4.0 * 1e-3 / std::sqrt(N));
      CHECK(std::sqrt(sq(q) / N) == doctest::Approx(1e-3).epsilon(0.02));
    }
  }
  SUBCASE("leader lead distance is recomputed") {
    VectorXd w = VectorXd::Zero(7);
    w(0) = 0.1;
    auto h = apply_process_noise(g, w);
    CHECK(h.d_lead[3] == doctest::Approx(3.1));
  }
}

TEST_CASE("measurements") {
  auto g = PlatoonGeometry::from({1.2, 0.8}, {1.5, 1.4, 1.3});
  SUBCASE("level 3 leader reports its speed") {
    VectorXd y = measure_exact(g, Level::Full, 0);
    REQUIRE(y.size() == 1);
    CHECK(y(0) == 1.5);
  }
  SUBCASE("follower reports gap ahead then own speed") {
    VectorXd y = measure_exact(g, Level::Full, 2);
    REQUIRE(y.size() == 2);
    CHECK(y(0) == 0.8);
    CHECK(y(1) == 1.3);
  }
  SUBCASE("level 2 leader broadcasts lead distances and speed") {
    VectorXd y = measure_exact(g, Level::LeaderFollow, 0);
    REQUIRE(y.size() == 3);
    CHECK(y(0) == 1.2);
    CHECK(y(1) == doctest::Approx(2.0));
    CHECK(y(2) == 1.5);
  }
  SUBCASE("noise is added with the given covariance") {
    RngStream rng(3);
    MatrixXd cov(2, 2);
    cov << 1e-4, 0, 0, 1e-3;
    double s0 = 0, s1 = 0;
    const int N = 20000;
    for (int k = 0; k < N; ++k) {
      VectorXd y = measure(g, Level::Full, 1, cov, rng) - measure_exact(g, Level::Full, 1);
      s0 += y(0) * y(0);
      s1 += y(1) * y(1);
    }
    CHECK(s0 / N == doctest::Approx(1e-4).epsilon(0.05));
    CHECK(s1 / N == doctest::Approx(1e-3).epsilon(0.05));
    CHECK_THROWS_AS(measure(g, Level::Full, 1, MatrixXd::Identity(1, 1), rng), ConfigError);
  }
}

TEST_CASE("seeded streams are reproducible") {
  RngStream a(derive_seed(42, stream::kProcess, 3)), b(derive_seed(42, stream::kProcess, 3));
  RngStream c(derive_seed(42, stream::kProcess, 4));
  bool differs = false;
  for (int k = 0; k < 100; ++k) {
    double x = a.normal();
    CHECK(x == b.normal());
    if (x != c.normal()) differs = true;
  }
  CHECK(differs);
}
