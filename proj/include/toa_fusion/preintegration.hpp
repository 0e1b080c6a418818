#pragma once

#include <vector>

#include <Eigen/Core>

#include "toa_fusion/eskf.hpp"

namespace toa_fusion {

using Mat9 = Eigen::Matrix<double, 9, 9>;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec9 = Eigen::Matrix<double, 9, 1>;

/// Keyframe variables as used by the factor graph: body-to-world rotation,
/// world position and velocity, gyro and accel biases.
struct KeyframeState {
  Mat3 R = Mat3::Identity();
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 b_g = Vec3::Zero();
  Vec3 b_a = Vec3::Zero();
};

/// Relative-motion increments between two keyframes. Residual noise block
/// order in `cov` is (rotation, position, velocity).
struct PreintegratedImu {
  Mat3 dR = Mat3::Identity();
  Vec3 dv = Vec3::Zero();
  Vec3 dp = Vec3::Zero();
  double dt_total = 0.0;
  Mat9 cov = Mat9::Zero();
  Vec3 bias_g_lin = Vec3::Zero();
  Vec3 bias_a_lin = Vec3::Zero();
  int count = 0;
  ImuNoiseParams noise;

  static PreintegratedImu start(const Vec3& bias_g, const Vec3& bias_a, const ImuNoiseParams& noise = {});
};

/// Cov block offsets inside the 9-dim residual.
namespace pre_idx {
inline constexpr int kR = 0;
inline constexpr int kP = 3;
inline constexpr int kV = 6;
}  // namespace pre_idx

/// Absorbs one sample held constant over dt. The rotation update is
/// dR <- dR Exp(w dt); velocity and position use the closed-form integral of
/// the rotating specific force, which reduces to the Euler step as w -> 0.
PreintegratedImu integrate(const PreintegratedImu& pre, const ImuSample& imu, double dt);

/// Increments of `first` followed by `second` (second must start at first's bias point).
PreintegratedImu compose(const PreintegratedImu& first, const PreintegratedImu& second);

/// One held-constant IMU reading and its duration.
struct ImuInterval {
  Vec3 omega = Vec3::Zero();
  Vec3 accel = Vec3::Zero();
  double dt = 0.0;
};

PreintegratedImu preintegrate(const std::vector<ImuInterval>& intervals, const Vec3& bias_g, const Vec3& bias_a,
                              const ImuNoiseParams& noise);

/// Sensitivity of the increments to the bias linearization point, obtained by
/// central differences of exact re-integration.
struct BiasJacobians {
  Mat3 dR_dbg = Mat3::Zero();
  Mat3 dv_dbg = Mat3::Zero();
  Mat3 dv_dba = Mat3::Zero();
  Mat3 dp_dbg = Mat3::Zero();
  Mat3 dp_dba = Mat3::Zero();
};

BiasJacobians bias_jacobians(const std::vector<ImuInterval>& intervals, const Vec3& bias_g, const Vec3& bias_a,
                             const ImuNoiseParams& noise);

/// Increments moved to a new bias point with the first-order correction.
PreintegratedImu correct_bias(const PreintegratedImu& pre, const BiasJacobians& jac, const Vec3& bias_g,
                              const Vec3& bias_a);

Vec3 residual_rotation(const PreintegratedImu& pre, const Mat3& R_i, const Mat3& R_j);
Vec3 residual_position(const PreintegratedImu& pre, const KeyframeState& state_i, const KeyframeState& state_j,
                       const Vec3& gravity = kDefaultGravity);
Vec3 residual_velocity(const PreintegratedImu& pre, const KeyframeState& state_i, const KeyframeState& state_j,
                       const Vec3& gravity = kDefaultGravity);
/// Stacked (b_g,j - b_g,i; b_a,j - b_a,i).
Vec6 residual_bias(const KeyframeState& state_i, const KeyframeState& state_j);

/// Stacked (r_R, r_p, r_v).
Vec9 imu_residual(const PreintegratedImu& pre, const KeyframeState& state_i, const KeyframeState& state_j,
                  const Vec3& gravity = kDefaultGravity);

/// Keyframe tangent layout: (dtheta, dp, dv, db_g, db_a); rotation perturbed on the right.
namespace kf_idx {
inline constexpr int kTheta = 0;
inline constexpr int kP = 3;
inline constexpr int kV = 6;
inline constexpr int kBg = 9;
inline constexpr int kBa = 12;
inline constexpr int kDim = 15;
}  // namespace kf_idx

using Mat9x15 = Eigen::Matrix<double, 9, 15>;

struct ImuResidualJacobians {
  Mat9x15 wrt_i = Mat9x15::Zero();
  Mat9x15 wrt_j = Mat9x15::Zero();
};

/// Jacobians of imu_residual(correct_bias(pre, jac, b_i), state_i, state_j)
/// with respect to both keyframes' tangent perturbations.
ImuResidualJacobians imu_residual_jacobians(const PreintegratedImu& pre, const BiasJacobians& jac,
                                            const KeyframeState& state_i, const KeyframeState& state_j,
                                            const Vec3& gravity = kDefaultGravity);

/// Keyframe j predicted from keyframe i and the increments.
KeyframeState predict_keyframe(const KeyframeState& state_i, const PreintegratedImu& pre,
                               const Vec3& gravity = kDefaultGravity);

/// Retraction on the keyframe manifold and its local inverse.
KeyframeState retract(const KeyframeState& state, const Eigen::Matrix<double, 15, 1>& delta);
Eigen::Matrix<double, 15, 1> local_difference(const KeyframeState& state, const KeyframeState& reference);

}  // namespace toa_fusion
