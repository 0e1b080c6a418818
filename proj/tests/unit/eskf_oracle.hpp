#pragma once

#include <Eigen/Core>

#include "toa_fusion/eskf.hpp"
#include "toa_fusion/geometry.hpp"

namespace toa_fusion::tu {

/// Exact nonlinear error-state derivative for nominal `x`, error `dx`, and
/// white noise `eta` = (eta_g, eta_wg, eta_a, eta_wa). Finite differences of
/// this at dx = 0, eta = 0 give the linearized F and G.
inline Vec15 error_derivative(const NavState& x, const ImuSample& imu, const Vec15& dx,
                              const Eigen::Matrix<double, 12, 1>& eta) {
  const Vec3 dtheta = dx.segment<3>(err::kTheta);
  const Mat3 R = quat_to_rot(x.q);
  const Mat3 E = exp_so3(dtheta);
  const Vec3 w_hat = imu.omega - x.b_g;
  const Vec3 a_hat = imu.accel - x.b_a;
  const Vec3 w_true = imu.omega - x.b_g - dx.segment<3>(err::kBg) - eta.segment<3>(0);
  const Vec3 a_true = imu.accel - x.b_a - dx.segment<3>(err::kBa) - eta.segment<3>(6);

  Vec15 d;
  // E = R^T R_true evolves as E' = -[w_hat]x E + E [w_true]x, and vee(E^T E') = Jr(dtheta) dtheta'.
  d.segment<3>(err::kTheta) = right_jacobian_inv(dtheta) * (w_true - E.transpose() * w_hat);
  d.segment<3>(err::kBg) = eta.segment<3>(3);
  d.segment<3>(err::kV) = R * E * a_true - R * a_hat;
  d.segment<3>(err::kBa) = eta.segment<3>(9);
  d.segment<3>(err::kP) = dx.segment<3>(err::kV);
  return d;
}

}  // namespace toa_fusion::tu
