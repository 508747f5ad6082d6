#include "platoon/common.hpp"

#include <Eigen/Eigenvalues>

#include <charconv>
#include <cmath>

namespace platoon {

Level level_from_int(int level) {
  switch (level) {
    case 1: return Level::Acc;
    case 2: return Level::LeaderFollow;
    case 3: return Level::Full;
  }
  throw ConfigError("control level must be 1, 2 or 3, got " + std::to_string(level));
}

int to_int(Level level) { return static_cast<int>(level); }

MeasurementModel measurement_model(Level level, int vehicle) {
  return (level == Level::LeaderFollow && vehicle == 0) ? MeasurementModel::LeaderBroadcast
                                                        : MeasurementModel::OwnStates;
}

std::string Channel::label() const {
  return std::to_string(receiver + 1) + "_" + std::to_string(sender + 1);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index);
}

void require_psd(const MatrixXd& cov, const std::string& what) {
  if (cov.rows() != cov.cols()) throw ConfigError(what + ": covariance is not square");
  if (!cov.allFinite()) throw ConfigError(what + ": covariance has non-finite entries");
  double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw ConfigError(what + ": covariance is not symmetric");
  if (cov.rows() == 0) return;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
  if (es.eigenvalues().minCoeff() < -1e-12 * scale)
    throw ConfigError(what + ": covariance is not positive semidefinite");
}

GaussianSampler::GaussianSampler(const MatrixXd& cov) {
  require_psd(cov, "gaussian sampler");
  const int n = static_cast<int>(cov.rows());
  zero_ = cov.isZero(0.0);
  bool diagonal = cov.isDiagonal(0.0);
  if (diagonal) {
    factor_ = MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) factor_(i, i) = std::sqrt(std::max(0.0, cov(i, i)));
    return;
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
  VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  factor_ = es.eigenvectors() * root.asDiagonal();
}

VectorXd GaussianSampler::sample(RngStream& rng) const {
  const int n = dim();
  VectorXd z(n);
  for (int i = 0; i < n; ++i) z(i) = rng.normal();
  if (zero_) return VectorXd::Zero(n);
  return factor_ * z;
}

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace platoon
