#include "toa_fusion/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace toa_fusion {

namespace {
constexpr double kExpTaylorCutoff = 1e-8;
constexpr double kLogTraceCutoff = 1e-10;
constexpr double kJacobianTaylorCutoff = 1e-5;
}  // namespace

UnitQuaternion::UnitQuaternion(double x, double y, double z, double w) {
  Eigen::Vector4d c(x, y, z, w);
  const double n = c.norm();
  if (n > 0.0 && std::isfinite(n)) {
    xyzw_ = c / n;
  }
}

UnitQuaternion UnitQuaternion::canonical() const {
  if (w() < 0.0) {
    return {-x(), -y(), -z(), -w()};
  }
  return *this;
}

Mat3 skew(const Vec3& omega) {
  Mat3 m;
  m << 0.0, -omega.z(), omega.y(),
       omega.z(), 0.0, -omega.x(),
       -omega.y(), omega.x(), 0.0;
  return m;
}

Vec3 vee(const Mat3& m) { return {m(2, 1), m(0, 2), m(1, 0)}; }

Mat3 exp_so3(const Vec3& theta) {
  const double angle = theta.norm();
  const Mat3 k = skew(theta);
  if (angle < kExpTaylorCutoff) {
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const double a = std::sin(angle) / angle;
  const double b = (1.0 - std::cos(angle)) / (angle * angle);
  return Mat3::Identity() + a * k + b * k * k;
}

Vec3 log_so3(const Mat3& rotation) {
  const double trace = rotation.trace();
  const Vec3 asym = vee(rotation - rotation.transpose());  // 2 sin(angle) axis
  if (std::abs(trace - 3.0) < kLogTraceCutoff) {
    // angle / sin(angle) ~ 1 + angle^2 / 6, with angle^2 ~ (3 - trace)
    return 0.5 * (1.0 + (3.0 - trace) / 12.0) * asym;
  }
  const double cos_angle = std::clamp(0.5 * (trace - 1.0), -1.0, 1.0);
  const double sin_angle = 0.5 * asym.norm();
  const double angle = std::atan2(sin_angle, cos_angle);

  if (cos_angle > -0.9) {
    return (angle / (2.0 * sin_angle)) * asym;
  }

  // Near pi: axis from the symmetric part, (R + R^T)/2 = cos I + (1 - cos) a a^T.
  const Mat3 sym = 0.5 * (rotation + rotation.transpose()) - cos_angle * Mat3::Identity();
  Eigen::Index col = 0;
  sym.diagonal().maxCoeff(&col);
  Vec3 axis = sym.col(col);
  axis.normalize();
  if (axis.dot(asym) < 0.0) {
    axis = -axis;
  }
  return angle * axis;
}

Mat3 right_jacobian(const Vec3& theta) {
  const double angle = theta.norm();
  const Mat3 k = skew(theta);
  if (angle < kJacobianTaylorCutoff) {
    return Mat3::Identity() - 0.5 * k + k * k / 6.0;
  }
  const double a2 = angle * angle;
  return Mat3::Identity() - (1.0 - std::cos(angle)) / a2 * k +
         (angle - std::sin(angle)) / (a2 * angle) * k * k;
}

Mat3 right_jacobian_inv(const Vec3& theta) {
  const double angle = theta.norm();
  const Mat3 k = skew(theta);
  if (angle < kJacobianTaylorCutoff) {
    return Mat3::Identity() + 0.5 * k + k * k / 12.0;
  }
  const double a2 = angle * angle;
  const double c = 1.0 / a2 - (1.0 + std::cos(angle)) / (2.0 * angle * std::sin(angle));
  return Mat3::Identity() + 0.5 * k + c * k * k;
}

Mat3 left_jacobian(const Vec3& theta) { return right_jacobian(-theta); }

Mat3 double_integral_jacobian(const Vec3& theta) {
  const double angle = theta.norm();
  const Mat3 k = skew(theta);
  if (angle < kJacobianTaylorCutoff) {
    const double a2 = angle * angle;
    return 0.5 * Mat3::Identity() + (1.0 / 6.0 - a2 / 120.0) * k +
           (1.0 / 24.0 - a2 / 720.0) * k * k;
  }
  const double a2 = angle * angle;
  return 0.5 * Mat3::Identity() + (angle - std::sin(angle)) / (a2 * angle) * k +
         (0.5 * a2 + std::cos(angle) - 1.0) / (a2 * a2) * k * k;
}

UnitQuaternion quat_mul(const UnitQuaternion& a, const UnitQuaternion& b) {
  const Vec3 av = a.vec();
  const Vec3 bv = b.vec();
  const Vec3 v = a.w() * bv + b.w() * av + av.cross(bv);
  const double w = a.w() * b.w() - av.dot(bv);
  return {v.x(), v.y(), v.z(), w};
}

UnitQuaternion quat_from_small_angle(const Vec3& theta) {
  const Vec3 h = 0.5 * theta;
  return {h.x(), h.y(), h.z(), 1.0};
}

UnitQuaternion quat_exp(const Vec3& theta) {
  const double angle = theta.norm();
  const double half = 0.5 * angle;
  // sin(half)/angle, Taylor near zero
  const double s = angle < kExpTaylorCutoff ? 0.5 - angle * angle / 48.0 : std::sin(half) / angle;
  const Vec3 v = s * theta;
  return {v.x(), v.y(), v.z(), std::cos(half)};
}

Mat3 quat_to_rot(const UnitQuaternion& q) {
  const double x = q.x(), y = q.y(), z = q.z(), w = q.w();
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

UnitQuaternion rot_to_quat(const Mat3& r) {
  // Shepperd's method: pick the largest of (w, x, y, z) magnitudes as pivot.
  const double trace = r.trace();
  double x, y, z, w;
  if (trace > r(0, 0) && trace > r(1, 1) && trace > r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + trace);
    w = 0.25 * s;
    x = (r(2, 1) - r(1, 2)) / s;
    y = (r(0, 2) - r(2, 0)) / s;
    z = (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
    w = (r(2, 1) - r(1, 2)) / s;
    x = 0.25 * s;
    y = (r(0, 1) + r(1, 0)) / s;
    z = (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
    w = (r(0, 2) - r(2, 0)) / s;
    x = (r(0, 1) + r(1, 0)) / s;
    y = 0.25 * s;
    z = (r(1, 2) + r(2, 1)) / s;
  } else {
    const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
    w = (r(1, 0) - r(0, 1)) / s;
    x = (r(0, 2) + r(2, 0)) / s;
    y = (r(1, 2) + r(2, 1)) / s;
    z = 0.25 * s;
  }
  return UnitQuaternion(x, y, z, w).canonical();
}

Eigen::Matrix4d omega_matrix(const Vec3& omega) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m.topLeftCorner<3, 3>() = -skew(omega);
  m.topRightCorner<3, 1>() = omega;
  m.bottomLeftCorner<1, 3>() = -omega.transpose();
  return m;
}

double orthonormality_error(const Mat3& rotation) {
  const double ortho = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  return std::max(ortho, std::abs(rotation.determinant() - 1.0));
}

}  // namespace toa_fusion
