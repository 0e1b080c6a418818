#include "toa_fusion/preintegration.hpp"

#include <cmath>
#include <string>

#include "toa_fusion/errors.hpp"

namespace toa_fusion {

namespace {

void check_dt(double dt) {
  if (!(dt > 0.0) || dt > 0.1) {
    throw NumericalError(NumericalError::Kind::kInvalidDt,
                         "preintegration step " + std::to_string(dt) + " s outside (0, 0.1]");
  }
}

/// Increments only, no covariance.
void integrate_increments(Mat3& dR, Vec3& dv, Vec3& dp, const Vec3& w_hat, const Vec3& a_hat, double dt) {
  const Vec3 theta = w_hat * dt;
  dp += dv * dt + dR * double_integral_jacobian(theta) * a_hat * (dt * dt);
  dv += dR * left_jacobian(theta) * a_hat * dt;
  dR = dR * exp_so3(theta);
}

}  // namespace

PreintegratedImu PreintegratedImu::start(const Vec3& bias_g, const Vec3& bias_a, const ImuNoiseParams& noise) {
  PreintegratedImu pre;
  pre.bias_g_lin = bias_g;
  pre.bias_a_lin = bias_a;
  pre.noise = noise;
  return pre;
}

PreintegratedImu integrate(const PreintegratedImu& pre, const ImuSample& imu, double dt) {
  check_dt(dt);
  const Vec3 w_hat = imu.omega - pre.bias_g_lin;
  const Vec3 a_hat = imu.accel - pre.bias_a_lin;
  const Vec3 theta = w_hat * dt;
  const Mat3 step_R = exp_so3(theta);

  // First-order error propagation in (rotation, position, velocity) order.
  Mat9 A = Mat9::Identity();
  Eigen::Matrix<double, 9, 6> B = Eigen::Matrix<double, 9, 6>::Zero();
  const Mat3 dR_a = pre.dR * skew(a_hat);
  A.block<3, 3>(pre_idx::kR, pre_idx::kR) = step_R.transpose();
  A.block<3, 3>(pre_idx::kP, pre_idx::kR) = -0.5 * dR_a * dt * dt;
  A.block<3, 3>(pre_idx::kP, pre_idx::kV) = Mat3::Identity() * dt;
  A.block<3, 3>(pre_idx::kV, pre_idx::kR) = -dR_a * dt;
  B.block<3, 3>(pre_idx::kR, 0) = right_jacobian(theta) * dt;
  B.block<3, 3>(pre_idx::kP, 3) = 0.5 * pre.dR * dt * dt;
  B.block<3, 3>(pre_idx::kV, 3) = pre.dR * dt;
  Eigen::Matrix<double, 6, 6> q = Eigen::Matrix<double, 6, 6>::Zero();
  q.diagonal().head<3>().setConstant(pre.noise.sigma_g * pre.noise.sigma_g / dt);
  q.diagonal().tail<3>().setConstant(pre.noise.sigma_a * pre.noise.sigma_a / dt);

  PreintegratedImu out = pre;
  integrate_increments(out.dR, out.dv, out.dp, w_hat, a_hat, dt);
  out.cov = A * pre.cov * A.transpose() + B * q * B.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  out.dt_total += dt;
  out.count += 1;
  return out;
}

PreintegratedImu compose(const PreintegratedImu& first, const PreintegratedImu& second) {
  PreintegratedImu out = first;
  out.dR = first.dR * second.dR;
  out.dv = first.dv + first.dR * second.dv;
  out.dp = first.dp + first.dv * second.dt_total + first.dR * second.dp;
  out.dt_total = first.dt_total + second.dt_total;
  out.count = first.count + second.count;

  Mat9 A = Mat9::Zero();
  Mat9 B = Mat9::Zero();
  A.block<3, 3>(pre_idx::kR, pre_idx::kR) = second.dR.transpose();
  A.block<3, 3>(pre_idx::kP, pre_idx::kR) = -first.dR * skew(second.dp);
  A.block<3, 3>(pre_idx::kP, pre_idx::kP) = Mat3::Identity();
  A.block<3, 3>(pre_idx::kP, pre_idx::kV) = Mat3::Identity() * second.dt_total;
  A.block<3, 3>(pre_idx::kV, pre_idx::kR) = -first.dR * skew(second.dv);
  A.block<3, 3>(pre_idx::kV, pre_idx::kV) = Mat3::Identity();
  B.block<3, 3>(pre_idx::kR, pre_idx::kR) = Mat3::Identity();
  B.block<3, 3>(pre_idx::kP, pre_idx::kP) = first.dR;
  B.block<3, 3>(pre_idx::kV, pre_idx::kV) = first.dR;
  out.cov = A * first.cov * A.transpose() + B * second.cov * B.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

PreintegratedImu preintegrate(const std::vector<ImuInterval>& intervals, const Vec3& bias_g, const Vec3& bias_a,
                              const ImuNoiseParams& noise) {
  PreintegratedImu pre = PreintegratedImu::start(bias_g, bias_a, noise);
  for (const auto& iv : intervals) {
    ImuSample s;
    s.omega = iv.omega;
    s.accel = iv.accel;
    pre = integrate(pre, s, iv.dt);
  }
  return pre;
}

BiasJacobians bias_jacobians(const std::vector<ImuInterval>& intervals, const Vec3& bias_g, const Vec3& bias_a,
                             const ImuNoiseParams& /*noise*/) {
  constexpr double h = 1e-5;
  auto run = [&](const Vec3& bg, const Vec3& ba, Mat3& dR, Vec3& dv, Vec3& dp) {
    dR.setIdentity();
    dv.setZero();
    dp.setZero();
    for (const auto& iv : intervals) {
      integrate_increments(dR, dv, dp, iv.omega - bg, iv.accel - ba, iv.dt);
    }
  };
  Mat3 R0;
  Vec3 v0, p0;
  run(bias_g, bias_a, R0, v0, p0);

  BiasJacobians jac;
  for (int k = 0; k < 3; ++k) {
    const Vec3 e = Vec3::Unit(k) * h;
    Mat3 Rp, Rm;
    Vec3 vp, vm, pp, pm;
    run(bias_g + e, bias_a, Rp, vp, pp);
    run(bias_g - e, bias_a, Rm, vm, pm);
    jac.dR_dbg.col(k) = (log_so3(R0.transpose() * Rp) - log_so3(R0.transpose() * Rm)) / (2.0 * h);
    jac.dv_dbg.col(k) = (vp - vm) / (2.0 * h);
    jac.dp_dbg.col(k) = (pp - pm) / (2.0 * h);
    run(bias_g, bias_a + e, Rp, vp, pp);
    run(bias_g, bias_a - e, Rm, vm, pm);
    jac.dv_dba.col(k) = (vp - vm) / (2.0 * h);
    jac.dp_dba.col(k) = (pp - pm) / (2.0 * h);
  }
  return jac;
}

PreintegratedImu correct_bias(const PreintegratedImu& pre, const BiasJacobians& jac, const Vec3& bias_g,
                              const Vec3& bias_a) {
  const Vec3 dbg = bias_g - pre.bias_g_lin;
  const Vec3 dba = bias_a - pre.bias_a_lin;
  PreintegratedImu out = pre;
  out.dR = pre.dR * exp_so3(jac.dR_dbg * dbg);
  out.dv = pre.dv + jac.dv_dbg * dbg + jac.dv_dba * dba;
  out.dp = pre.dp + jac.dp_dbg * dbg + jac.dp_dba * dba;
  return out;
}

Vec3 residual_rotation(const PreintegratedImu& pre, const Mat3& R_i, const Mat3& R_j) {
  return log_so3(pre.dR.transpose() * R_i.transpose() * R_j);
}

Vec3 residual_position(const PreintegratedImu& pre, const KeyframeState& si, const KeyframeState& sj,
                       const Vec3& gravity) {
  const double dt = pre.dt_total;
  return si.R.transpose() * (sj.p - si.p - si.v * dt - 0.5 * gravity * dt * dt) - pre.dp;
}

Vec3 residual_velocity(const PreintegratedImu& pre, const KeyframeState& si, const KeyframeState& sj,
                       const Vec3& gravity) {
  return si.R.transpose() * (sj.v - si.v - gravity * pre.dt_total) - pre.dv;
}

Vec6 residual_bias(const KeyframeState& si, const KeyframeState& sj) {
  Vec6 r;
  r << sj.b_g - si.b_g, sj.b_a - si.b_a;
  return r;
}

Vec9 imu_residual(const PreintegratedImu& pre, const KeyframeState& si, const KeyframeState& sj,
                  const Vec3& gravity) {
  Vec9 r;
  r.segment<3>(pre_idx::kR) = residual_rotation(pre, si.R, sj.R);
  r.segment<3>(pre_idx::kP) = residual_position(pre, si, sj, gravity);
  r.segment<3>(pre_idx::kV) = residual_velocity(pre, si, sj, gravity);
  return r;
}

ImuResidualJacobians imu_residual_jacobians(const PreintegratedImu& pre, const BiasJacobians& jac,
                                            const KeyframeState& si, const KeyframeState& sj,
                                            const Vec3& gravity) {
  const PreintegratedImu c = correct_bias(pre, jac, si.b_g, si.b_a);
  const double dt = pre.dt_total;
  const Mat3 Rit = si.R.transpose();
  const Vec3 r_rot = residual_rotation(c, si.R, sj.R);
  const Mat3 jr_inv = right_jacobian_inv(r_rot);
  const Vec3 dbg = si.b_g - pre.bias_g_lin;

  ImuResidualJacobians out;
  auto& Ji = out.wrt_i;
  auto& Jj = out.wrt_j;
  using namespace kf_idx;

  Ji.block<3, 3>(pre_idx::kR, kTheta) = -jr_inv * sj.R.transpose() * si.R;
  Ji.block<3, 3>(pre_idx::kR, kBg) =
      -jr_inv * exp_so3(r_rot).transpose() * right_jacobian(jac.dR_dbg * dbg) * jac.dR_dbg;
  Jj.block<3, 3>(pre_idx::kR, kTheta) = jr_inv;

  const Vec3 pos_term = Rit * (sj.p - si.p - si.v * dt - 0.5 * gravity * dt * dt);
  Ji.block<3, 3>(pre_idx::kP, kTheta) = skew(pos_term);
  Ji.block<3, 3>(pre_idx::kP, kP) = -Rit;
  Ji.block<3, 3>(pre_idx::kP, kV) = -Rit * dt;
  Ji.block<3, 3>(pre_idx::kP, kBg) = -jac.dp_dbg;
  Ji.block<3, 3>(pre_idx::kP, kBa) = -jac.dp_dba;
  Jj.block<3, 3>(pre_idx::kP, kP) = Rit;

  const Vec3 vel_term = Rit * (sj.v - si.v - gravity * dt);
  Ji.block<3, 3>(pre_idx::kV, kTheta) = skew(vel_term);
  Ji.block<3, 3>(pre_idx::kV, kV) = -Rit;
  Ji.block<3, 3>(pre_idx::kV, kBg) = -jac.dv_dbg;
  Ji.block<3, 3>(pre_idx::kV, kBa) = -jac.dv_dba;
  Jj.block<3, 3>(pre_idx::kV, kV) = Rit;
  return out;
}

KeyframeState predict_keyframe(const KeyframeState& si, const PreintegratedImu& pre, const Vec3& gravity) {
  const double dt = pre.dt_total;
  KeyframeState sj = si;
  sj.R = si.R * pre.dR;
  sj.v = si.v + gravity * dt + si.R * pre.dv;
  sj.p = si.p + si.v * dt + 0.5 * gravity * dt * dt + si.R * pre.dp;
  return sj;
}

KeyframeState retract(const KeyframeState& state, const Eigen::Matrix<double, 15, 1>& delta) {
  KeyframeState out;
  out.R = state.R * exp_so3(delta.segment<3>(kf_idx::kTheta));
  out.p = state.p + delta.segment<3>(kf_idx::kP);
  out.v = state.v + delta.segment<3>(kf_idx::kV);
  out.b_g = state.b_g + delta.segment<3>(kf_idx::kBg);
  out.b_a = state.b_a + delta.segment<3>(kf_idx::kBa);
  return out;
}

Eigen::Matrix<double, 15, 1> local_difference(const KeyframeState& state, const KeyframeState& reference) {
  Eigen::Matrix<double, 15, 1> d;
  d.segment<3>(kf_idx::kTheta) = log_so3(reference.R.transpose() * state.R);
  d.segment<3>(kf_idx::kP) = state.p - reference.p;
  d.segment<3>(kf_idx::kV) = state.v - reference.v;
  d.segment<3>(kf_idx::kBg) = state.b_g - reference.b_g;
  d.segment<3>(kf_idx::kBa) = state.b_a - reference.b_a;
  return d;
}

}  // namespace toa_fusion
