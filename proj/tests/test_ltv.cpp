#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "platoon/closed_loop.hpp"
#include "platoon/control.hpp"
#include "platoon/dynamics.hpp"
#include "platoon/ltv.hpp"

#include <cmath>

using namespace platoon;
using namespace platoon::ltv;

namespace {

const dynamics::DynamicsConstants kC;

// Desired speed that holds v steady: root of c5 + c6 u + c7 u^2 nearer zero, u = v - v_d.
double equilibrium_vd(double v) {
  double disc = kC.c6 * kC.c6 - 4 * kC.c7 * kC.c5;
  double u = (-kC.c6 - std::sqrt(disc)) / (2 * kC.c7);
  if (std::abs((-kC.c6 + std::sqrt(disc)) / (2 * kC.c7)) < std::abs(u)) u = (-kC.c6 + std::sqrt(disc)) / (2 * kC.c7);
  return v - u;
}

}  // namespace

TEST_CASE("longitudinal coefficients at v = v_d") {
  auto k = longitudinal_coeffs(10.0, 10.0);
  CHECK(k.alpha == kC.c6);
  CHECK(k.beta == doctest::Approx(0.928970).epsilon(1e-6));
  CHECK(k.lag == doctest::Approx(0.0482034).epsilon(1e-6));
  CHECK(k.theta == doctest::Approx(0.828970).epsilon(1e-6));
  CHECK(k.sigma_obs == doctest::Approx(-0.0017966).epsilon(1e-4));
  // closed forms
  CHECK(k.beta == doctest::Approx(std::exp(0.05 * kC.c6)));
  CHECK(k.lag == doctest::Approx((k.beta - 1) / k.alpha));

  SUBCASE("alpha -> 0 limit") {
    dynamics::DynamicsConstants c;
    c.c6 = 0.0;
    auto z = longitudinal_coeffs(5.0, 5.0, c);
    CHECK(z.lag == 0.05);
    CHECK(z.sigma_obs == 0.0);
    c.c6 = 1e-9;
    CHECK(longitudinal_coeffs(5.0, 5.0, c).lag == doctest::Approx(0.05).epsilon(1e-9));
  }
  SUBCASE("beta in (0, 1) for negative alpha") {
    for (double dv = -2.0; dv <= 2.0; dv += 0.25) {
      auto q = longitudinal_coeffs(10.0 + dv, 10.0);
      if (q.alpha < 0) {
        CHECK(q.beta > 0.0);
        CHECK(q.beta < 1.0);
      }
    }
  }
}

TEST_CASE("A and B for two vehicles") {
  auto s = build_AB_uniform(2, 10.0, 10.0);
  MatrixXd A(3, 3);
  A << 1, 0.0482034, -0.0482034, 0, 0.928970, 0, 0, 0, 0.928970;
  // the published six-digit beta is rounded up from 0.9289689
  CHECK((s.A - A).cwiseAbs().maxCoeff() < 2e-6);
  CHECK(s.B(0, 0) == doctest::Approx(0.001797).epsilon(1e-3));
  CHECK(s.B(0, 1) == doctest::Approx(-0.001797).epsilon(1e-3));
  CHECK(s.B(1, 0) == doctest::Approx(1 - 0.928970).epsilon(1e-5));
  CHECK(s.B(2, 0) == 0.0);
  CHECK(s.B(1, 1) == 0.0);
  CHECK(s.B(2, 1) == doctest::Approx(1 - 0.928970).epsilon(1e-5));
  CHECK(s.A.allFinite());
  CHECK(s.B.allFinite());
}

TEST_CASE("A structural zeros for four vehicles") {
  std::vector<SpeedRef> refs{{10, 10}, {9.5, 9.7}, {10.2, 10.0}, {8.0, 8.1}};
  auto s = build_AB(refs);
  const int k = 4;
  for (int r = 0; r < s.p(); ++r)
    for (int c = 0; c < s.p(); ++c) {
      bool allowed;
      if (r < k - 1)
        allowed = c == r || c == speed_index(k, r) || c == speed_index(k, r + 1);
      else
        allowed = c == r;
      if (!allowed) CHECK(s.A(r, c) == 0.0);
    }
  for (int m = 0; m < k - 1; ++m) {
    CHECK(s.A(m, speed_index(k, m)) == s.coeffs[m].lag);
    CHECK(s.A(m, speed_index(k, m + 1)) == -s.coeffs[m + 1].lag);
  }
  CHECK_THROWS_AS(build_AB_uniform(1, 1, 1), ConfigError);
}

TEST_CASE("one-step prediction matches the nonlinear plant") {
  // straight line, vehicles in a row; perturbations up to 0.1 in every state and input
  const int k = 4;
  const double v0 = 10.0, vd0 = equilibrium_vd(v0);
  CHECK(std::abs(dynamics::longitudinal_accel(v0, vd0, kC)) < 1e-12);
  auto sys = build_AB_uniform(k, v0, vd0);
  RngStream rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    VectorXd dx(2 * k - 1), du(k);
    for (int q = 0; q < dx.size(); ++q) dx(q) = 0.2 * rng.uniform() - 0.1;
    for (int q = 0; q < k; ++q) du(q) = 0.2 * rng.uniform() - 0.1;
    std::vector<dynamics::VehicleState> veh(k);
    double pos = 0.0;
    for (int i = 0; i < k; ++i) {
      if (i > 0) pos -= 1.0 + dx(i - 1);
      veh[i] = {pos, 0.0, 0.0, v0 + dx(speed_index(k, i))};
    }
    for (int i = 0; i < k; ++i) {
      // straight driving needs the steering that zeroes the yaw rate
      dynamics::VehicleInput u{-kC.c2 / kC.c1, vd0 + du(i)};
      veh[i] = dynamics::step_nonlinear(veh[i], u, kC, kControlDt);
    }
    VectorXd actual(2 * k - 1);
    for (int m = 0; m < k - 1; ++m) actual(m) = veh[m].x - veh[m + 1].x - 1.0;
    for (int i = 0; i < k; ++i) actual(speed_index(k, i)) = veh[i].v - v0;
    VectorXd pred = sys.A * dx + sys.B * du;
    worst = std::max(worst, (pred - actual).cwiseAbs().maxCoeff());
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("measurement matrices") {
  auto C = measurement_matrix(Level::Full, 4, 2);
  REQUIRE(C.rows() == 2);
  CHECK(C(0, 1) == 1.0);
  CHECK(C(1, 5) == 1.0);
  CHECK(C.sum() == 2.0);
  auto L1 = measurement_matrix(Level::Acc, 4, 0);
  REQUIRE(L1.rows() == 1);
  CHECK(L1(0, 3) == 1.0);

  MatrixXd want(3, 5);
  want << 1, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 1, 0, 0;
  CHECK(measurement_matrix(Level::LeaderFollow, 3, 0) == want);
  // level-2 followers report like level 3
  CHECK(measurement_matrix(Level::LeaderFollow, 4, 2) == C);

  for (Level lv : {Level::Full, Level::LeaderFollow, Level::Acc})
    for (int kappa : {2, 4, 10}) {
      if (lv == Level::LeaderFollow && kappa < 3) continue;
      for (int i = 0; i < kappa; ++i) {
        auto M = measurement_matrix(lv, kappa, i);
        CHECK(M.cols() == 2 * kappa - 1);
        for (int r = 0; r < M.rows(); ++r) {
          double sum = M.row(r).sum();
          CHECK(sum >= 1.0);
          CHECK(sum <= kappa - 1);
          for (int c = 0; c < M.cols(); ++c) CHECK((M(r, c) == 0.0 || M(r, c) == 1.0));
        }
      }
    }
  CHECK_THROWS_AS(measurement_matrix(Level::Full, 4, 4), ConfigError);
}

TEST_CASE("lateral model") {
  auto l = build_lateral(10.0, -kC.c2 / kC.c1);
  CHECK(l.A(0, 0) == 1.0);
  CHECK(l.A(0, 1) == 0.5);
  CHECK(l.A(1, 0) == 0.0);
  CHECK(l.A(1, 1) == 1.0);
  // cos^2 term is one at the zero-curvature steering angle
  double factor = kC.c1 * 10.0 / (kC.c3 + kC.c4 * 100.0);
  CHECK(l.B(1) == doctest::Approx(factor / 20.0).epsilon(1e-12));
  CHECK(l.B(0) == doctest::Approx(factor * ((kC.c8 + kC.c9 * 100.0) / 20.0 + 10.0 / 800.0)).epsilon(1e-12));
  auto z = build_lateral(0.0, 0.01);
  CHECK(z.B.isZero(0.0));
  CHECK(z.A(0, 1) == 0.0);
}

TEST_CASE("closed loop layout") {
  SUBCASE("level 1, two vehicles") {
    auto cl = nominal_closed_loop(Level::Acc, 2, 10.0, 10.0);
    CHECK(cl.A_bar.rows() == 3 + 1 + 3);
    CHECK(cl.obs_dim == std::vector<int>{1, 3});
    auto sys = build_AB_uniform(2, 10.0, 10.0);
    auto bank = control::ControllerBank::make(Level::Acc, 2);
    auto mats = bank.snapshot(sys);
    CHECK(cl.B_bar.col(0).head(3) == sys.B.col(0));
    CHECK(cl.B_bar.col(0).segment(3, 1) == mats[0].NB);
    CHECK(cl.B_bar.col(0).tail(3).isZero(0.0));
    // observers talk to each other only through the plant
    CHECK(cl.A_bar.block(3, 4, 1, 3).isZero(0.0));
    CHECK(cl.A_bar.block(4, 3, 3, 1).isZero(0.0));
  }
  for (Level lv : {Level::Full, Level::LeaderFollow, Level::Acc})
    for (int kappa : {4, 10}) {
      CAPTURE(to_int(lv));
      CAPTURE(kappa);
      auto cl = nominal_closed_loop(lv, kappa, 10.0, 10.0);
      CHECK(cl.L_bar.topRows(cl.p).isZero(0.0));
      CHECK(spectral_radius(cl.A_bar) < 1.0);
    }
}

TEST_CASE("closed loop rejects mismatched parts") {
  auto sys = build_AB_uniform(4, 10.0, 10.0);
  auto bank = control::ControllerBank::make(Level::Full, 4);
  auto mats = bank.snapshot(sys);
  CHECK_THROWS_AS(build_closed_loop(sys, bank, mats, channels::active_set(Level::Full, 3)), AssemblyError);
  mats[2].M = MatrixXd::Zero(3, 3);
  CHECK_THROWS_WITH_AS(build_closed_loop(sys, bank, mats, channels::active_set(Level::Full, 4)),
                       doctest::Contains("M_(3,3)"), AssemblyError);
}

TEST_CASE("correlation condition and delay choice") {
  const int kappa = 4;
  auto H3 = channels::active_set(Level::Full, kappa);
  auto cl3 = nominal_closed_loop(Level::Full, kappa, 10.0, 10.0);
  auto bank3 = control::ControllerBank::make(Level::Full, kappa);

  SUBCASE("self channels at level 3 are strongest with no delay") {
    for (int i = 0; i < kappa; ++i) {
      const auto* ch = bank3.designs[i].find(i);
      auto choice = select_rho(H3, {i, i}, 5, cl3, ch->W, ch->C);
      CHECK(choice.rho == 0);
      std::vector<ClosedLoop> w{cl3};
      auto M = correlation_condition({i, i}, 0, w, ch->W, ch->C);
      CHECK(M.norm() == doctest::Approx(choice.norm));
      // only the receiver's own speed moves in one step
      CHECK(M.cwiseAbs().maxCoeff() == doctest::Approx(1 - longitudinal_coeffs(10, 10).beta));
    }
  }
  SUBCASE("windowed product equals repeated nominal product") {
    const auto* ch = bank3.designs[3].find(0);
    std::vector<ClosedLoop> w(4, cl3);
    auto M = correlation_condition({3, 0}, 3, w, ch->W, ch->C);
    VectorXd v = cl3.B_bar.col(3);
    for (int t = 0; t < 3; ++t) v = cl3.A_bar * v;
    CHECK((M - ch->W * ch->C * v.head(cl3.p)).norm() < 1e-15);
    CHECK_THROWS_AS(correlation_condition({3, 0}, -1, w, ch->W, ch->C), ArgumentError);
    CHECK_THROWS_AS(correlation_condition({3, 0}, 2, w, ch->W, ch->C), ArgumentError);
  }
  SUBCASE("level 2") {
    auto H2 = channels::active_set(Level::LeaderFollow, kappa);
    auto cl2 = nominal_closed_loop(Level::LeaderFollow, kappa, 10.0, 10.0);
    auto bank2 = control::ControllerBank::make(Level::LeaderFollow, kappa);
    // leader -> third vehicle needs the watermark to travel through two gaps
    const auto* lead = bank2.designs[2].find(0);
    CHECK(select_rho(H2, {2, 0}, 5, cl2, lead->W, lead->C).rho >= 1);
    // the predecessor's speed carries nothing from the follower's watermark
    const auto* pred = bank2.designs[2].find(1);
    for (int rho = 0; rho <= 5; ++rho) {
      std::vector<ClosedLoop> w(rho + 1, cl2);
      CHECK(correlation_condition({2, 1}, rho, w, pred->W, pred->C).isZero(0.0));
    }
    CHECK_THROWS_AS(select_rho(H2, {2, 1}, 5, cl2, pred->W, pred->C), ArgumentError);
    // not an active channel
    CHECK_THROWS_AS(select_rho(H2, {3, 1}, 5, cl2, pred->W, pred->C), ArgumentError);
  }
}
