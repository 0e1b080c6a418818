#include "toa_fusion/eskf.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include <Eigen/Cholesky>

#include "toa_fusion/errors.hpp"

namespace toa_fusion {

namespace {

constexpr double kMaxDt = 0.1;

void check_dt(double dt) {
  if (!(dt > 0.0) || dt > kMaxDt) {
    throw NumericalError(NumericalError::Kind::kInvalidDt, "IMU step " + std::to_string(dt) + " s outside (0, 0.1]");
  }
}

/// Kinematic state integrated by RK4: quaternion coefficients, velocity, position.
struct Kinematic {
  Eigen::Vector4d q;
  Vec3 v;
  Vec3 p;

  Kinematic operator+(const Kinematic& o) const { return {q + o.q, v + o.v, p + o.p}; }
  Kinematic operator*(double s) const { return {q * s, v * s, p * s}; }
};

Kinematic derivative(const Kinematic& s, const Vec3& omega, const Vec3& accel, const Vec3& gravity) {
  const Eigen::Vector4d qn = s.q.normalized();
  const Mat3 r = quat_to_rot(UnitQuaternion(qn[0], qn[1], qn[2], qn[3]));
  return {0.5 * omega_matrix(omega) * s.q, r * accel + gravity, s.v};
}

std::vector<BaseStation>::const_iterator find_station(const std::vector<BaseStation>& stations, int id) {
  for (auto it = stations.begin(); it != stations.end(); ++it) {
    if (it->id == id) return it;
  }
  throw DataError(DataError::Kind::kUnknownBsId, "measurement references unknown station " + std::to_string(id));
}

}  // namespace

Mat12 ImuNoiseParams::q_imu() const {
  Mat12 q = Mat12::Zero();
  q.block<3, 3>(0, 0).diagonal().setConstant(sigma_g * sigma_g);
  q.block<3, 3>(3, 3).diagonal().setConstant(sigma_wg * sigma_wg);
  q.block<3, 3>(6, 6).diagonal().setConstant(sigma_a * sigma_a);
  q.block<3, 3>(9, 9).diagonal().setConstant(sigma_wa * sigma_wa);
  return q;
}

NavState propagate_nominal(const NavState& state, const ImuSample& imu, double dt, const Vec3& gravity) {
  return propagate_nominal(state, imu, imu, dt, gravity);
}

NavState propagate_nominal(const NavState& state, const ImuSample& imu0, const ImuSample& imu1, double dt,
                           const Vec3& gravity) {
  check_dt(dt);
  const Vec3 w0 = imu0.omega - state.b_g;
  const Vec3 w1 = imu1.omega - state.b_g;
  const Vec3 a0 = imu0.accel - state.b_a;
  const Vec3 a1 = imu1.accel - state.b_a;
  const Vec3 w_mid = 0.5 * (w0 + w1);
  const Vec3 a_mid = 0.5 * (a0 + a1);

  const Kinematic s0{state.q.coeffs(), state.v, state.p};
  const Kinematic k1 = derivative(s0, w0, a0, gravity);
  const Kinematic k2 = derivative(s0 + k1 * (0.5 * dt), w_mid, a_mid, gravity);
  const Kinematic k3 = derivative(s0 + k2 * (0.5 * dt), w_mid, a_mid, gravity);
  const Kinematic k4 = derivative(s0 + k3 * dt, w1, a1, gravity);
  const Kinematic s1 = s0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);

  NavState out = state;
  out.q = UnitQuaternion(s1.q[0], s1.q[1], s1.q[2], s1.q[3]);
  out.v = s1.v;
  out.p = s1.p;
  return out;
}

ErrorJacobians error_jacobians(const NavState& state, const ImuSample& imu) {
  const Vec3 w_hat = imu.omega - state.b_g;
  const Vec3 a_hat = imu.accel - state.b_a;
  const Mat3 r = quat_to_rot(state.q);
  const Mat3 eye = Mat3::Identity();

  ErrorJacobians j;
  j.F.setZero();
  j.F.block<3, 3>(err::kTheta, err::kTheta) = -skew(w_hat);
  j.F.block<3, 3>(err::kTheta, err::kBg) = -eye;
  j.F.block<3, 3>(err::kV, err::kTheta) = -r * skew(a_hat);
  j.F.block<3, 3>(err::kV, err::kBa) = -r;
  j.F.block<3, 3>(err::kP, err::kV) = eye;

  j.G.setZero();
  j.G.block<3, 3>(err::kTheta, 0) = -eye;
  j.G.block<3, 3>(err::kBg, 3) = eye;
  j.G.block<3, 3>(err::kV, 6) = -r;
  j.G.block<3, 3>(err::kBa, 9) = eye;
  return j;
}

Mat15 symmetrize(const Mat15& P) { return 0.5 * (P + P.transpose()); }

Mat15 propagate_covariance(const Mat15& P, const Mat15& F, const Mat15x12& G, const Mat12& q_imu, double dt) {
  const Mat15 gqg = G * q_imu * G.transpose();
  auto pdot = [&](const Mat15& p) -> Mat15 { return F * p + p * F.transpose() + gqg; };
  const Mat15 k1 = pdot(P);
  const Mat15 k2 = pdot(P + 0.5 * dt * k1);
  const Mat15 k3 = pdot(P + 0.5 * dt * k2);
  const Mat15 k4 = pdot(P + dt * k3);
  return symmetrize(P + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

Eigen::MatrixXd measurement_jacobian(const NavState& state, const std::vector<BaseStation>& stations) {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(stations.size()), 15);
  for (std::size_t k = 0; k < stations.size(); ++k) {
    const Vec3 diff = state.p - stations[k].position;
    const double d = diff.norm();
    if (d < 1e-6) {
      throw NumericalError(NumericalError::Kind::kDegenerateGeometry,
                           "position coincides with station " + std::to_string(stations[k].id));
    }
    h.block<1, 3>(static_cast<Eigen::Index>(k), err::kP) = diff.transpose() / d;
  }
  return h;
}

Eigen::VectorXd measurement_function(const NavState& state, const std::vector<BaseStation>& stations) {
  Eigen::VectorXd h(static_cast<Eigen::Index>(stations.size()));
  for (std::size_t k = 0; k < stations.size(); ++k) {
    h[static_cast<Eigen::Index>(k)] = true_distance(state.p, stations[k]);
  }
  return h;
}

NavState inject_error(const NavState& state, const Vec15& dx) {
  NavState out;
  out.q = state.q * quat_from_small_angle(dx.segment<3>(err::kTheta));
  out.b_g = state.b_g + dx.segment<3>(err::kBg);
  out.v = state.v + dx.segment<3>(err::kV);
  out.b_a = state.b_a + dx.segment<3>(err::kBa);
  out.p = state.p + dx.segment<3>(err::kP);
  return out;
}

Vec15 state_difference(const NavState& truth, const NavState& nominal) {
  Vec15 dx;
  dx.segment<3>(err::kTheta) = log_so3(quat_to_rot(nominal.q).transpose() * quat_to_rot(truth.q));
  dx.segment<3>(err::kBg) = truth.b_g - nominal.b_g;
  dx.segment<3>(err::kV) = truth.v - nominal.v;
  dx.segment<3>(err::kBa) = truth.b_a - nominal.b_a;
  dx.segment<3>(err::kP) = truth.p - nominal.p;
  return dx;
}

UpdateResult update(const NavState& state, const Mat15& P, const std::vector<ToaMeasurement>& measurements,
                    const std::vector<BaseStation>& stations, const Eigen::MatrixXd& R_cov) {
  const auto m = static_cast<Eigen::Index>(measurements.size());
  if (R_cov.rows() != m || R_cov.cols() != m) {
    throw ConfigError("measurement covariance must be " + std::to_string(m) + "x" + std::to_string(m));
  }
  if (m == 0) return {state, P};

  std::vector<BaseStation> active;
  active.reserve(measurements.size());
  Eigen::VectorXd measured(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    active.push_back(*find_station(stations, measurements[static_cast<std::size_t>(i)].bs_id));
    measured[i] = measurements[static_cast<std::size_t>(i)].distance;
  }

  const Eigen::MatrixXd H = measurement_jacobian(state, active);
  const Eigen::VectorXd residual = measured - measurement_function(state, active);
  const Eigen::MatrixXd PHt = P * H.transpose();
  const Eigen::MatrixXd S = H * PHt + R_cov;
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (S + S.transpose()));
  if (llt.info() != Eigen::Success || !S.allFinite()) {
    throw NumericalError(NumericalError::Kind::kSingularInnovation, "innovation covariance is not positive definite");
  }
  // K = P H^T S^-1
  const Eigen::MatrixXd K = llt.solve(PHt.transpose()).transpose();
  const Vec15 dx = K * residual;

  UpdateResult out;
  out.P = symmetrize((Mat15::Identity() - K * H) * P);
  out.state = inject_error(state, dx);
  return out;
}

Mat15 FilterConfig::default_initial_covariance() {
  Vec15 d;
  d.segment<3>(err::kTheta).setConstant(0.01 * 0.01);
  d.segment<3>(err::kBg).setConstant(0.01 * 0.01);
  d.segment<3>(err::kV).setConstant(0.1 * 0.1);
  d.segment<3>(err::kBa).setConstant(0.01 * 0.01);
  d.segment<3>(err::kP).setConstant(0.1 * 0.1);
  return d.asDiagonal();
}

FilterRun run_filter(const std::vector<ImuSample>& imu, const std::vector<ToaMeasurement>& toa,
                     const FilterConfig& config) {
  using Clock = std::chrono::steady_clock;
  if (config.range_sigma.size() != config.stations.size()) {
    throw ConfigError("range_sigma must have one entry per station");
  }
  FilterRun run;
  if (imu.empty()) return run;

  const Mat12 q_imu = config.imu_noise.q_imu();
  NavState state = config.initial_state;
  Mat15 P = config.initial_P;
  std::size_t next_toa = 0;
  std::vector<ToaMeasurement> batch;

  for (std::size_t k = 0; k < imu.size(); ++k) {
    const auto start = Clock::now();
    if (k > 0) {
      const double dt = 1e-9 * static_cast<double>(imu[k].t_ns - imu[k - 1].t_ns);
      const ErrorJacobians jac = error_jacobians(state, imu[k - 1]);
      state = propagate_nominal(state, imu[k - 1], imu[k], dt, config.gravity);
      P = propagate_covariance(P, jac.F, jac.G, q_imu, dt);
    }

    bool updated = false;
    while (next_toa < toa.size() && toa[next_toa].t_ns <= imu[k].t_ns) {
      const TimestampNs tick = toa[next_toa].t_ns;
      batch.clear();
      while (next_toa < toa.size() && toa[next_toa].t_ns == tick) {
        batch.push_back(toa[next_toa++]);
      }
      Eigen::MatrixXd r_cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(batch.size()),
                                                    static_cast<Eigen::Index>(batch.size()));
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto idx = static_cast<std::size_t>(find_station(config.stations, batch[i].bs_id) -
                                                  config.stations.begin());
        const double sigma = config.range_sigma[idx];
        r_cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = sigma * sigma;
      }
      UpdateResult res = update(state, P, batch, config.stations, r_cov);
      state = res.state;
      P = res.P;
      updated = true;
    }

    if (updated) {
      run.cycle_ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
    }
    if (updated || config.emit_at_imu_rate) {
      run.outputs.push_back({imu[k].t_ns, state, P});
    }
  }
  return run;
}

}  // namespace toa_fusion
