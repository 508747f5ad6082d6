#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "platoon/detector.hpp"

#include <Eigen/QR>

#include <cmath>
#include <filesystem>

using namespace platoon;
using namespace platoon::detector;

namespace {

MatrixXd randn(RngStream& rng, int r, int c) {
  MatrixXd m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = rng.normal();
  return m;
}

double rel_frob(const MatrixXd& a, const MatrixXd& b) { return (a - b).norm() / b.norm(); }

// Sliding windows over a white stream, one step per 10 hi-res indices.
AutocorrAccumulator white_windows(int dim, int ell, int runs, long steps, long size, int width, RngStream& rng) {
  AutocorrAccumulator acc(ell, dim, size, width);
  for (int r = 0; r < runs; ++r) {
    MatrixXd stream = randn(rng, dim, static_cast<int>(steps) + ell);
    for (long n = 0; n < steps; ++n) acc.add_window(stream.middleCols(n, ell), n * kHighResPerStep);
    acc.end_realization();
  }
  return acc;
}

}  // namespace

TEST_CASE("residual and normalization") {
  MatrixXd U(1, 3), W(1, 2);
  U << 0, 1, 0;
  W << 0, 1;
  VectorXd x(3), s(2);
  x << 5, 2.5, 7;
  s << 9, 2.5;
  CHECK(residual(U, W, x, s)(0) == 0.0);
  VectorXd a(2);
  a << 0.3, -0.4;
  CHECK(residual(U, W, x, s + a)(0) == doctest::Approx(-(W * a)(0)));
  VectorXd e(1), r(1);
  e << 0.1;
  r << -2.0;
  CHECK(normalize(MatrixXd::Identity(2, 2), e, r) == (VectorXd(2) << 0.1, -2.0).finished());
  CHECK(normalize(MatrixXd::Identity(2, 2) * 3, VectorXd::Zero(1), VectorXd::Zero(1)).isZero(0.0));
}

TEST_CASE("inverse square root") {
  MatrixXd S(2, 2);
  S << 4, 1, 1, 3;
  MatrixXd R = inverse_sqrt(S);
  CHECK((R * S * R - MatrixXd::Identity(2, 2)).norm() < 1e-12);
  CHECK((R - R.transpose()).norm() < 1e-15);
  bool floored = false;
  MatrixXd Z = MatrixXd::Zero(2, 2);
  Z(0, 0) = 1.0;
  inverse_sqrt(Z, &floored);
  CHECK(floored);
  CHECK_THROWS_AS(inverse_sqrt(MatrixXd::Zero(2, 2)), CalibrationError);
}

TEST_CASE("nll") {
  const int m = 3, ell = 25;
  SUBCASE("identity S gives the dimension") {
    MatrixXd P = MatrixXd::Identity(ell, ell).topRows(m);
    CHECK(nll(P, MatrixXd::Identity(ell, ell)) == doctest::Approx(m).epsilon(1e-14));
    CHECK(nll_from_S(MatrixXd::Identity(m, m), ell) == m);
  }
  SUBCASE("singular S is infinite") {
    MatrixXd P = MatrixXd::Zero(m, ell);
    P(0, 0) = 1.0;
    CHECK(nll(P, MatrixXd::Identity(ell, ell)) == kInfiniteNll);
    CHECK_THROWS_AS(nll(P, MatrixXd::Identity(ell - 1, ell - 1)), ArgumentError);
    CHECK_THROWS_AS(nll(P, -MatrixXd::Identity(ell, ell)), ArgumentError);
  }
  SUBCASE("column rotation leaves it unchanged") {
    RngStream rng(11);
    for (int t = 0; t < 20; ++t) {
      MatrixXd P = randn(rng, m, ell);
      MatrixXd Q = Eigen::HouseholderQR<MatrixXd>(randn(rng, ell, ell)).householderQ();
      double a = nll(P, MatrixXd::Identity(ell, ell));
      double b = nll(P * Q, MatrixXd::Identity(ell, ell));
      CHECK(b == doctest::Approx(a).epsilon(1e-10));
    }
  }
  SUBCASE("G whitens correlated windows") {
    RngStream rng(12);
    MatrixXd A = randn(rng, ell, ell) + ell * MatrixXd::Identity(ell, ell);
    MatrixXd G = A * A.transpose() / ell;
    Eigen::LLT<MatrixXd> llt(G);
    MatrixXd P = randn(rng, m, ell);
    MatrixXd P_col = P * MatrixXd(llt.matrixL()).transpose();
    CHECK(nll(P_col, G) == doctest::Approx(nll(P, MatrixXd::Identity(ell, ell))).epsilon(1e-9));
  }
  SUBCASE("Wishart mean and scaling attack") {
    RngStream rng(13);
    const int n = 10000;
    MatrixXd mean = MatrixXd::Zero(m, m);
    double clean = 0.0, scaled = 0.0;
    MatrixXd I = MatrixXd::Identity(ell, ell);
    for (int k = 0; k < n; ++k) {
      MatrixXd P = randn(rng, m, ell);
      mean += P * P.transpose();
      clean += nll(P, I);
      scaled += nll(2.0 * P, I);
    }
    mean /= n;
    for (int i = 0; i < m; ++i) CHECK(mean(i, i) == doctest::Approx(ell).epsilon(0.05));
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        if (i != j) CHECK(std::abs(mean(i, j)) < 0.05 * ell);
    CHECK(scaled / n > clean / n);
  }
}

TEST_CASE("binned covariance") {
  CovarianceAccumulator acc(3, 4);
  VectorXd z(3);
  z << 1, 2, 3;
  acc.add(1, z);
  CHECK(acc.sigma(1) == z * z.transpose());
  CHECK(acc.sigma(0).isZero(0.0));
  CHECK_THROWS_AS(acc.add(4, z), ArgumentError);

  RngStream rng(21);
  CovarianceAccumulator big(3, 1), half(3, 1);
  for (int k = 0; k < 10000; ++k) {
    VectorXd s = randn(rng, 3, 1);
    big.add(0, s);
    if (k < 5000) half.add(0, s);
  }
  CHECK((big.sigma(0) - MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 0.05);
  CovarianceAccumulator rest(3, 1);
  RngStream again(21);
  for (int k = 0; k < 10000; ++k) {
    VectorXd s = randn(again, 3, 1);
    if (k >= 5000) rest.add(0, s);
  }
  half.merge(rest);
  CHECK((half.sigma(0) - big.sigma(0)).norm() < 1e-12);
  CHECK(half.count(0) == 10000);
}

TEST_CASE("smoothed inverse") {
  const Channel ch{2, 1};
  MatrixXd M(2, 2);
  M << 2.0, 0.3, 0.3, 1.0;
  Eigen::LLT<MatrixXd> llt(M);
  SUBCASE("constant window") {
    CovarianceAccumulator acc(2, 30);
    // two samples whose outer products average to M in every bin
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
    for (long b = 0; b < 30; ++b)
      for (int q = 0; q < 2; ++q) {
        VectorXd v = es.eigenvectors().col(q) * std::sqrt(2.0 * es.eigenvalues()(q));
        acc.add(b, v);
      }
    MatrixXd V = smooth_invert(acc, 15, 0.8, 10, ch);
    CHECK((V - inverse_sqrt(M)).norm() < 1e-12);
  }
  SUBCASE("single supported bin") {
    CovarianceAccumulator acc(2, 30);
    RngStream rng(5);
    for (int k = 0; k < 50; ++k) acc.add(7, randn(rng, 2, 1));
    double w = 0.0;
    MatrixXd V = smooth_invert(acc, 7, 0.8, 10, ch, &w);
    CHECK(w == 1.0);
    CHECK((V - inverse_sqrt(acc.sigma(7))).norm() < 1e-12);
    CHECK_THROWS_WITH_AS(smooth_invert(acc, 25, 0.8, 10, ch), doctest::Contains("channel (3,2) bin 25"),
                         CalibrationError);
  }
  SUBCASE("rank-deficient support") {
    CovarianceAccumulator acc(2, 5);
    acc.add(2, (VectorXd(2) << 1, 1).finished());
    CHECK_THROWS_AS(smooth_invert(acc, 2, 0.8, 10, ch), CalibrationError);
  }
  SUBCASE("normalizes fresh samples") {
    CovarianceAccumulator acc(2, 40);
    RngStream rng(6);
    MatrixXd Lm = llt.matrixL();
    for (long b = 0; b < 40; ++b)
      for (int k = 0; k < 200; ++k) acc.add(b, Lm * randn(rng, 2, 1));
    MatrixXd V = smooth_invert(acc, 20, 0.8, 10, ch);
    MatrixXd emp = MatrixXd::Zero(2, 2);
    for (int k = 0; k < 20000; ++k) {
      VectorXd r = V * Lm * randn(rng, 2, 1);
      emp += r * r.transpose();
    }
    emp /= 20000;
    CHECK(rel_frob(emp, MatrixXd::Identity(2, 2)) < 0.15);
  }
}

TEST_CASE("V table fill") {
  ChannelTable t;
  t.channel = {1, 0};
  CovarianceAccumulator acc(2, 60);
  RngStream rng(8);
  for (int k = 0; k < 100; ++k) acc.add(2, randn(rng, 2, 1));
  finalize_V(t, acc, 0.8, 10);
  REQUIRE(t.V.size() == 60);
  CHECK_FALSE(t.v_filled[12]);
  CHECK(t.v_filled[13]);
  CHECK(t.V[59] == t.V[12]);
  CHECK(t.f[2] == 100);
}

TEST_CASE("autocorrelation normalizer") {
  SUBCASE("interpolation endpoints") {
    AutocorrAccumulator acc(3, 2, 100, 1);
    RngStream rng(30);
    MatrixXd P0 = randn(rng, 2, 3), P1 = randn(rng, 2, 3);
    acc.add_window(P0, 40);
    acc.add_window(P1, 41);
    acc.end_realization();
    CHECK(acc.count(40) == 1.0);
    CHECK(acc.count(41) == 0.0);
    CHECK((acc.average(40) - P0.transpose() * P0 / 2.0).norm() < 1e-12);
  }
  SUBCASE("interpolation in the middle") {
    AutocorrAccumulator acc(3, 1, 100, 1);
    MatrixXd P0 = MatrixXd::Ones(1, 3), P1 = 2 * MatrixXd::Ones(1, 3);
    acc.add_window(P0, 10);
    acc.add_window(P1, 14);
    acc.end_realization();
    // index 12 sits halfway: equal weights on both Gram matrices
    MatrixXd want = 0.5 * (P0.transpose() * P0 + P1.transpose() * P1);
    CHECK((acc.average(12) - want).norm() < 1e-12);
    CHECK(acc.count(14) == 0.0);
  }
  SUBCASE("white stream gives the identity") {
    RngStream rng(31);
    const int ell = 25, dim = 3;
    auto acc = white_windows(dim, ell, 20, 2000, 20000, 2000, rng);
    for (long b = 0; b < acc.bins(); ++b) {
      MatrixXd G = acc.average(b);
      MatrixXd off = G - MatrixXd(G.diagonal().asDiagonal());
      CHECK(off.cwiseAbs().maxCoeff() < 0.1);
      CHECK((G - G.transpose()).norm() == 0.0);
      CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(G).eigenvalues().minCoeff() >= 0.0);
      for (int q = 0; q < ell; ++q) CHECK(G(q, q) == doctest::Approx(1.0).epsilon(0.1));
    }
  }
  SUBCASE("merge equals one pass") {
    RngStream a(40), b(40);
    auto one = white_windows(2, 10, 2, 300, 3000, 200, a);
    RngStream c(40);
    auto first = white_windows(2, 10, 1, 300, 3000, 200, c);
    auto second = white_windows(2, 10, 1, 300, 3000, 200, c);
    first.merge(second);
    for (long k = 0; k < one.bins(); ++k) {
      CHECK(first.count(k) == one.count(k));
      CHECK((first.average(k) - one.average(k)).norm() < 1e-12);
    }
  }
  SUBCASE("empty bins take the nearest calibrated neighbour") {
    AutocorrAccumulator acc(3, 1, 100, 10);
    RngStream rng(41);
    for (long h = 0; h < 30; h += 2) acc.add_window(randn(rng, 1, 3) + MatrixXd::Ones(1, 3), h);
    acc.end_realization();
    RngStream rng2(42);
    // a second realization adds full-rank support
    for (long h = 0; h < 30; h += 2) acc.add_window(randn(rng2, 1, 3), h);
    acc.end_realization();
    ChannelTable t;
    t.channel = {0, 0};
    finalize_G(t, acc);
    CHECK(t.G.size() == 10);
    CHECK(t.g_filled[9]);
    CHECK(t.G[9] == t.G[2]);
    CHECK(t.G_chol.size() == 10);
  }
}

TEST_CASE("threshold quantile") {
  std::vector<double> v;
  for (int k = 1; k <= 1000; ++k) v.push_back(k);
  CHECK(calibrate_threshold(v, 1.0).threshold == 1.0);
  CHECK(calibrate_threshold(v, 0.005).threshold == 995.0);
  CHECK(calibrate_threshold(v, 0.005).samples == 1000);
  CHECK(calibrate_threshold({3.0}, 1.0).threshold == 3.0);
  CHECK_THROWS_AS(calibrate_threshold({}, 0.1), CalibrationError);
  CHECK_THROWS_AS(calibrate_threshold(std::vector<double>(100, 1.0), 0.001), CalibrationError);
  CHECK_THROWS_AS(calibrate_threshold(v, 0.0), ArgumentError);
  CHECK_THROWS_AS(calibrate_threshold(v, 1.5), ArgumentError);
  // a threshold at the quantile is exceeded by close to fa of fresh draws
  RngStream rng(50);
  std::vector<double> cal, fresh;
  for (int k = 0; k < 200000; ++k) cal.push_back(rng.normal());
  double thr = calibrate_threshold(cal, 0.005).threshold;
  long over = 0;
  for (int k = 0; k < 200000; ++k) over += rng.normal() > thr;
  CHECK(over / 200000.0 >= 0.0025);
  CHECK(over / 200000.0 <= 0.01);
}

TEST_CASE("switch rule") {
  DetectionPolicy pol{40, 24};
  SUBCASE("fires on the 25th exceedance and latches") {
    DetectionState st(2);
    for (int n = 0; n < 24; ++n) CHECK_FALSE(detect_step(st, 1, 10.0, 1.0, pol, n).degrade);
    auto d = detect_step(st, 1, 10.0, 1.0, pol, 24);
    CHECK(d.exceeded);
    CHECK(d.degrade);
    CHECK(st.fired_step == 24);
    CHECK(st.fired_channel == 1);
    for (int n = 25; n < 200; ++n) CHECK(detect_step(st, 1, 0.0, 1.0, pol, n).degrade);
    CHECK(st.fired_step == 24);
    CHECK(st.channels[1].first_exceed == 0);
  }
  SUBCASE("never fires below threshold") {
    DetectionState st(1);
    for (int n = 0; n < 5000; ++n) CHECK_FALSE(detect_step(st, 0, 0.5, 1.0, pol, n).degrade);
    CHECK(st.channels[0].first_exceed == -1);
  }
  SUBCASE("old exceedances leave the window") {
    DetectionState st(1);
    for (int n = 0; n < 24; ++n) detect_step(st, 0, 2.0, 1.0, pol, n);
    for (int n = 24; n < 64; ++n) detect_step(st, 0, 0.0, 1.0, pol, n);
    CHECK(st.channels[0].sum == 0);
    for (int n = 64; n < 88; ++n) detect_step(st, 0, 2.0, 1.0, pol, n);
    CHECK_FALSE(st.fired);
  }
  SUBCASE("alternating stays at half") {
    DetectionState st(1);
    for (int n = 0; n < 400; ++n) detect_step(st, 0, n % 2 ? 2.0 : 0.0, 1.0, pol, n);
    CHECK(st.channels[0].sum == 20);
    CHECK_FALSE(st.fired);
  }
  SUBCASE("ten-vehicle count and non-finite values") {
    DetectionState st(1);
    DetectionPolicy p10{40, 18};
    for (int n = 0; n < 18; ++n) detect_step(st, 0, std::nan(""), 1.0, p10, n);
    CHECK_FALSE(st.fired);
    CHECK(detect_step(st, 0, kInfiniteNll, 1.0, p10, 18).degrade);
  }
  DetectionState st(1);
  CHECK_THROWS_AS(detect_step(st, 0, 0.0, 1.0, {40, 41}, 0), ArgumentError);
  CHECK_THROWS_AS(detect_step(st, 0, 0.0, 1.0, {41, 24}, 0), ArgumentError);
}

TEST_CASE("tables") {
  const std::uint64_t hash = 0xabcdef12345ull;
  std::vector<int> rho{0, 1, -1}, rdim{1, 2, 2};
  // three channels of a level-1 platoon of three, filled with synthetic statistics
  auto t = skeleton(Level::Acc, 3, rho, rdim, hash, 400, 6, 10, 200);
  CHECK_THROWS_AS(skeleton(Level::Acc, 3, rho, rdim, hash, 400, 3, 10, 200), ConfigError);
  CHECK_THROWS_AS(skeleton(Level::Acc, 3, {0}, rdim, hash, 400), ArgumentError);
  CHECK_FALSE(t.thresholds_ready());
  RngStream rng(60);
  for (auto& ct : t.channels) {
    if (!ct.monitored()) continue;
    CovarianceAccumulator cov(ct.dim(), t.v_bins());
    for (long b = 0; b < t.v_bins(); ++b)
      for (int k = 0; k < 8; ++k) cov.add(b, randn(rng, ct.dim(), 1) * (1.0 + 0.01 * b));
    finalize_V(ct, cov, 0.8, 10);
    AutocorrAccumulator ac(t.ell, ct.dim(), t.trajectory_size, t.g_bin);
    for (long h = 0; h < 400; h += 10) ac.add_window(randn(rng, ct.dim(), t.ell), h);
    ac.end_realization();
    finalize_G(ct, ac);
    ct.threshold = 12.5 + ct.rho;
  }
  CHECK(t.thresholds_ready());
  t.fa_rate = 0.005;

  SUBCASE("round trip") {
    auto path = (std::filesystem::temp_directory_path() / "platoon_tables_test.bin").string();
    t.save(path);
    auto back = NormalizationTables::load(path, hash);
    CHECK(back == t);
    CHECK(back.channels[2].rho == -1);
    CHECK_THROWS_WITH_AS(NormalizationTables::load(path, hash + 1), doctest::Contains("different trajectory"),
                         IoError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(NormalizationTables::load(path, hash), IoError);
  }
  SUBCASE("lookups wrap") {
    CHECK(t.V_at(0, 5) == t.channels[0].V[0]);
    CHECK(t.V_at(0, 405) == t.channels[0].V[0]);
    CHECK(t.V_at(0, -1) == t.channels[0].V[39]);
    CHECK(t.G_at(1, 250) == t.channels[1].G[1]);
  }
  SUBCASE("window nll uses the stored factor") {
    MatrixXd P = randn(rng, t.channels[1].dim(), t.ell);
    CHECK(window_nll(t, 1, 250, P) == doctest::Approx(nll(P, t.G_at(1, 250))).epsilon(1e-10));
  }
  SUBCASE("LTI baseline") {
    auto lti = lti_baseline(t, 40);
    CHECK(lti.lti);
    CHECK_FALSE(lti.thresholds_ready());
    for (int c = 0; c < 2; ++c) {
      REQUIRE(lti.channels[c].V.size() == 1);
      MatrixXd avg = MatrixXd::Zero(t.channels[c].dim(), t.channels[c].dim());
      for (long n = 0; n < 40; ++n) avg += t.V_at(c, n * kHighResPerStep);
      CHECK((lti.channels[c].V[0] - avg / 40.0).norm() < 1e-12);
      CHECK(lti.channels[c].G[0] == MatrixXd::Identity(t.ell, t.ell));
      CHECK(lti.V_at(c, 3999) == lti.channels[c].V[0]);
    }
    // constant V averages to itself
    auto flat = t;
    for (auto& v : flat.channels[0].V) v = flat.channels[0].V[0];
    CHECK((lti_baseline(flat, 6001).channels[0].V[0] - flat.channels[0].V[0]).norm() < 1e-12);
    CHECK_THROWS_AS(lti_baseline(t, 0), ArgumentError);
  }
}
