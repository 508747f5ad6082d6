#pragma once

#include <Eigen/Dense>

#include <compare>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace platoon {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

inline constexpr double kControlDt = 0.05;
inline constexpr double kHighResDt = 0.005;
inline constexpr int kHighResPerStep = 10;
inline constexpr double kPi = 3.14159265358979323846;

// Communication level. Level 1 is the non-communicative fallback.
enum class Level : int { Acc = 1, LeaderFollow = 2, Full = 3 };

Level level_from_int(int level);
int to_int(Level level);

// Measurement layout. Level 2's leader also reports its distance to every follower.
enum class MeasurementModel { OwnStates, LeaderBroadcast };

MeasurementModel measurement_model(Level level, int vehicle);

// Ordered pair (receiver, sender), 0-based; vehicle 0 leads.
struct Channel {
  int receiver = 0;
  int sender = 0;
  auto operator<=>(const Channel&) const = default;
  bool self() const { return receiver == sender; }
  std::string label() const;  // 1-based, "i_j"
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IntegrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AssemblyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ArgumentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t splitmix64(std::uint64_t x);

// Seed for one named stream of a realization.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

namespace stream {
inline constexpr std::uint64_t kProcess = 1;
inline constexpr std::uint64_t kMeasurement = 2;
inline constexpr std::uint64_t kWatermark = 3;
inline constexpr std::uint64_t kAttack = 4;
inline constexpr std::uint64_t kLateral = 5;
}  // namespace stream

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : engine_(seed) {}
  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Zero-mean Gaussian with a PSD covariance; semidefinite is fine.
class GaussianSampler {
 public:
  GaussianSampler() = default;
  explicit GaussianSampler(const MatrixXd& cov);
  int dim() const { return static_cast<int>(factor_.rows()); }
  VectorXd sample(RngStream& rng) const;
  const MatrixXd& factor() const { return factor_; }

 private:
  MatrixXd factor_;
  bool zero_ = true;
};

void require_psd(const MatrixXd& cov, const std::string& what);

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 1469598103934665603ull);

std::string format_double(double v);  // shortest exact round-trip text

}  // namespace platoon
