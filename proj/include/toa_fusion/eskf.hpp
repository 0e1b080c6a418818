#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "toa_fusion/dataset.hpp"
#include "toa_fusion/toa_sim.hpp"

namespace toa_fusion {

using Mat15 = Eigen::Matrix<double, 15, 15>;
using Mat15x12 = Eigen::Matrix<double, 15, 12>;
using Mat12 = Eigen::Matrix<double, 12, 12>;
using Vec15 = Eigen::Matrix<double, 15, 1>;

inline const Vec3 kDefaultGravity(0.0, 0.0, -9.81);

/// Nominal navigation state. q maps body to world.
struct NavState {
  UnitQuaternion q;
  Vec3 b_g = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 b_a = Vec3::Zero();
  Vec3 p = Vec3::Zero();
};

/// Error-state block offsets: (dtheta, db_g, dv, db_a, dp).
namespace err {
inline constexpr int kTheta = 0;
inline constexpr int kBg = 3;
inline constexpr int kV = 6;
inline constexpr int kBa = 9;
inline constexpr int kP = 12;
}  // namespace err

/// Continuous-time noise densities. Noise vector order (eta_g, eta_wg, eta_a, eta_wa).
struct ImuNoiseParams {
  double sigma_g = 1.7e-4;   // rad/s/sqrt(Hz)
  double sigma_a = 2.0e-3;   // m/s^2/sqrt(Hz)
  double sigma_wg = 1.9e-5;  // rad/s^2/sqrt(Hz)
  double sigma_wa = 3.0e-3;  // m/s^3/sqrt(Hz)

  Mat12 q_imu() const;
};

/// Integrates the nominal kinematics over dt with RK4, holding the IMU reading constant.
NavState propagate_nominal(const NavState& state, const ImuSample& imu, double dt, const Vec3& gravity = kDefaultGravity);

/// Same, linearly interpolating the reading from `imu0` (start) to `imu1` (end) inside the step.
NavState propagate_nominal(const NavState& state, const ImuSample& imu0, const ImuSample& imu1, double dt,
                           const Vec3& gravity = kDefaultGravity);

struct ErrorJacobians {
  Mat15 F;
  Mat15x12 G;
};

/// Continuous error dynamics d(dx)/dt = F dx + G eta for the right-perturbation
/// error R = R_hat Exp(dtheta) and additive errors on the other blocks.
ErrorJacobians error_jacobians(const NavState& state, const ImuSample& imu);

/// RK4 integration of Pdot = F P + P F^T + G Q G^T with F, G constant over dt.
Mat15 propagate_covariance(const Mat15& P, const Mat15& F, const Mat15x12& G, const Mat12& q_imu, double dt);

/// Rows (0_{1x12}, (p - L_k)^T / d_k), one per station.
Eigen::MatrixXd measurement_jacobian(const NavState& state, const std::vector<BaseStation>& stations);

/// Predicted ranges h(x).
Eigen::VectorXd measurement_function(const NavState& state, const std::vector<BaseStation>& stations);

/// Applies an error estimate to the nominal state (rotation right-multiplied).
NavState inject_error(const NavState& state, const Vec15& dx);

/// Error of `truth` relative to `nominal`, inverse of inject_error for small errors.
Vec15 state_difference(const NavState& truth, const NavState& nominal);

struct UpdateResult {
  NavState state;
  Mat15 P;
};

/// Joint Kalman update with every measurement in `measurements`. R_cov is sized
/// to the measurement count; stations are looked up by bs_id.
UpdateResult update(const NavState& state, const Mat15& P, const std::vector<ToaMeasurement>& measurements,
                    const std::vector<BaseStation>& stations, const Eigen::MatrixXd& R_cov);

struct FilterConfig {
  NavState initial_state;
  Mat15 initial_P = default_initial_covariance();
  ImuNoiseParams imu_noise;
  std::vector<BaseStation> stations;
  /// Range std per station (same order as `stations`).
  std::vector<double> range_sigma;
  Vec3 gravity = kDefaultGravity;
  bool emit_at_imu_rate = false;

  static Mat15 default_initial_covariance();
};

struct FilterOutput {
  TimestampNs t_ns = 0;
  NavState state;
  Mat15 P;
};

struct FilterRun {
  std::vector<FilterOutput> outputs;
  /// Wall time of each predict+update cycle, ms.
  std::vector<double> cycle_ms;
};

/// Predict on every IMU sample; update with all ToA measurements whose
/// timestamp is <= the current IMU timestamp, one joint update per tick.
FilterRun run_filter(const std::vector<ImuSample>& imu, const std::vector<ToaMeasurement>& toa,
                     const FilterConfig& config);

/// Symmetrized copy.
Mat15 symmetrize(const Mat15& P);

}  // namespace toa_fusion
