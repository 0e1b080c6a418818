#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace toa_fusion {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Hamilton unit quaternion stored scalar-last (x, y, z, w).
///
/// quat_to_rot(q) is the body-to-world rotation R_wb. Composition follows
/// quat_to_rot(a * b) == quat_to_rot(a) * quat_to_rot(b).
class UnitQuaternion {
 public:
  UnitQuaternion() = default;
  /// Normalizes on construction. A zero vector yields identity.
  UnitQuaternion(double x, double y, double z, double w);

  static UnitQuaternion identity() { return {}; }

  double x() const { return xyzw_[0]; }
  double y() const { return xyzw_[1]; }
  double z() const { return xyzw_[2]; }
  double w() const { return xyzw_[3]; }

  Vec3 vec() const { return xyzw_.head<3>(); }
  const Eigen::Vector4d& coeffs() const { return xyzw_; }
  double norm() const { return xyzw_.norm(); }

  UnitQuaternion conjugate() const { return {-x(), -y(), -z(), w()}; }

  /// Representative with w >= 0.
  UnitQuaternion canonical() const;

 private:
  Eigen::Vector4d xyzw_{0.0, 0.0, 0.0, 1.0};
};

/// Cross-product matrix: skew(a) * b == a.cross(b).
Mat3 skew(const Vec3& omega);

/// Inverse of skew for antisymmetric input.
Vec3 vee(const Mat3& m);

/// Rodrigues exponential. Second-order Taylor below |theta| = 1e-8.
Mat3 exp_so3(const Vec3& theta);

/// Principal logarithm, |result| in [0, pi].
Vec3 log_so3(const Mat3& rotation);

/// Right Jacobian of SO(3) and its inverse.
Mat3 right_jacobian(const Vec3& theta);
Mat3 right_jacobian_inv(const Vec3& theta);

/// Left Jacobian; integral of exp_so3(s * theta) for s in [0, 1].
Mat3 left_jacobian(const Vec3& theta);

/// Double integral of exp_so3(u * theta): integral over [0,1] of (1-u) exp(u theta).
Mat3 double_integral_jacobian(const Vec3& theta);

UnitQuaternion quat_mul(const UnitQuaternion& a, const UnitQuaternion& b);
inline UnitQuaternion operator*(const UnitQuaternion& a, const UnitQuaternion& b) {
  return quat_mul(a, b);
}

/// (theta/2, 1) renormalized.
UnitQuaternion quat_from_small_angle(const Vec3& theta);

/// Exact exponential in quaternion form.
UnitQuaternion quat_exp(const Vec3& theta);

Mat3 quat_to_rot(const UnitQuaternion& q);
UnitQuaternion rot_to_quat(const Mat3& rotation);

/// Kinematic matrix Omega(omega) such that qdot = 0.5 * Omega(omega) * q
/// for body-frame angular rate, acting on scalar-last coefficients.
Eigen::Matrix4d omega_matrix(const Vec3& omega);

/// Max per-entry deviation of R R^T from identity, and |det(R) - 1|.
double orthonormality_error(const Mat3& rotation);

}  // namespace toa_fusion
