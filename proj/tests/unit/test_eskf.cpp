#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "eskf_oracle.hpp"
#include "test_util.hpp"
#include "toa_fusion/errors.hpp"
#include "toa_fusion/eskf.hpp"

using namespace toa_fusion;

namespace {

NavState random_state(std::mt19937_64& rng) {
  NavState s;
  s.q = rot_to_quat(tu::random_rotation(rng));
  s.b_g = tu::random_vec(rng, 0.01);
  s.v = tu::random_vec(rng, 1.0);
  s.b_a = tu::random_vec(rng, 0.05);
  s.p = tu::random_vec(rng, 3.0);
  return s;
}

ImuSample random_imu(std::mt19937_64& rng) {
  ImuSample imu;
  imu.omega = tu::random_vec(rng, 0.5);
  imu.accel = Vec3(0, 0, 9.81) + tu::random_vec(rng, 1.0);
  return imu;
}

// Scaling and squaring with a Taylor core; adequate for small-norm arguments.
Eigen::MatrixXd expm(const Eigen::MatrixXd& A) {
  int squarings = 0;
  double norm = A.lpNorm<Eigen::Infinity>();
  while (norm > 0.1) {
    norm /= 2;
    ++squarings;
  }
  const Eigen::MatrixXd B = A / std::pow(2.0, squarings);
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(A.rows(), A.cols());
  Eigen::MatrixXd sum = term;
  for (int k = 1; k < 20; ++k) {
    term = term * B / k;
    sum += term;
  }
  for (int i = 0; i < squarings; ++i) sum = sum * sum;
  return sum;
}

}  // namespace

TEST(ErrorDynamics, FAndGMatchExactErrorDerivative) {
  std::mt19937_64 rng(30);
  using Vec12 = Eigen::Matrix<double, 12, 1>;
  for (int trial = 0; trial < 100; ++trial) {
    const NavState x = random_state(rng);
    const ImuSample imu = random_imu(rng);
    const auto jac = error_jacobians(x, imu);
    auto fx = [&](const Eigen::VectorXd& dx) -> Eigen::VectorXd {
      return tu::error_derivative(x, imu, Vec15(dx), Vec12::Zero());
    };
    auto fe = [&](const Eigen::VectorXd& eta) -> Eigen::VectorXd {
      return tu::error_derivative(x, imu, Vec15::Zero(), Vec12(eta));
    };
    EXPECT_LT(tu::relative_error(tu::numeric_jacobian(fx, Eigen::VectorXd::Zero(15)), jac.F), 1e-5);
    EXPECT_LT(tu::relative_error(tu::numeric_jacobian(fe, Eigen::VectorXd::Zero(12)), jac.G), 1e-5);
  }
}

TEST(ErrorDynamics, FMatchesFiniteDifferenceOfNominalPropagation) {
  std::mt19937_64 rng(31);
  const double dt = 1e-4;
  for (int trial = 0; trial < 20; ++trial) {
    const NavState x = random_state(rng);
    const ImuSample imu = random_imu(rng);
    const NavState x1 = propagate_nominal(x, imu, dt);
    auto f = [&](const Eigen::VectorXd& dx) -> Eigen::VectorXd {
      return state_difference(propagate_nominal(inject_error(x, dx), imu, dt), x1);
    };
    const Eigen::MatrixXd Phi = tu::numeric_jacobian(f, Eigen::VectorXd::Zero(15));
    const Mat15 F = error_jacobians(x, imu).F;
    const Eigen::MatrixXd F_fd = (Phi - Eigen::MatrixXd::Identity(15, 15)) / dt;
    EXPECT_LT(tu::relative_error(F_fd, F), 1e-3) << "trial " << trial;
  }
}

TEST(ErrorDynamics, GMatchesFiniteDifferenceOfNoiseInjection) {
  std::mt19937_64 rng(32);
  const double dt = 1e-4;
  for (int trial = 0; trial < 20; ++trial) {
    const NavState x = random_state(rng);
    const ImuSample imu = random_imu(rng);
    const NavState x1 = propagate_nominal(x, imu, dt);
    // Measured = true + bias + white noise; bias derivative = random-walk noise.
    auto f = [&](const Eigen::VectorXd& eta) -> Eigen::VectorXd {
      ImuSample noisy = imu;
      noisy.omega -= eta.segment<3>(0);
      noisy.accel -= eta.segment<3>(6);
      NavState truth = propagate_nominal(x, noisy, dt);
      truth.b_g += eta.segment<3>(3) * dt;
      truth.b_a += eta.segment<3>(9) * dt;
      return state_difference(truth, x1);
    };
    const Eigen::MatrixXd G_fd = tu::numeric_jacobian(f, Eigen::VectorXd::Zero(12)) / dt;
    EXPECT_LT(tu::relative_error(G_fd, error_jacobians(x, imu).G), 1e-3) << "trial " << trial;
  }
}

TEST(Covariance, MatchesVanLoanDiscretization) {
  std::mt19937_64 rng(33);
  const ImuNoiseParams noise;
  const Mat12 Q = noise.q_imu();
  for (double dt : {0.005, 0.02}) {
    const NavState x = random_state(rng);
    const ImuSample imu = random_imu(rng);
    const auto jac = error_jacobians(x, imu);
    Eigen::MatrixXd A0 = Eigen::MatrixXd::Random(15, 15);
    const Mat15 P = A0 * A0.transpose() * 1e-3 + Mat15::Identity() * 1e-4;

    // [[-F, GQG^T], [0, F^T]] dt -> blocks give Phi and Qd.
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(30, 30);
    M.topLeftCorner(15, 15) = -jac.F * dt;
    M.topRightCorner(15, 15) = jac.G * Q * jac.G.transpose() * dt;
    M.bottomRightCorner(15, 15) = jac.F.transpose() * dt;
    const Eigen::MatrixXd E = expm(M);
    const Eigen::MatrixXd Phi = E.bottomRightCorner(15, 15).transpose();
    const Eigen::MatrixXd Qd = Phi * E.topRightCorner(15, 15);
    const Eigen::MatrixXd expected = Phi * P * Phi.transpose() + Qd;

    const Mat15 got = propagate_covariance(P, jac.F, jac.G, Q, dt);
    EXPECT_LT(tu::relative_error(got, expected, 1e-12), 1e-7) << "dt " << dt;
    EXPECT_LT((got - got.transpose()).norm(), 1e-15);
  }
}

TEST(Measurement, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(34);
  const auto stations = default_base_stations();
  for (int trial = 0; trial < 20; ++trial) {
    const NavState x = random_state(rng);
    auto f = [&](const Eigen::VectorXd& dx) -> Eigen::VectorXd {
      return measurement_function(inject_error(x, dx), stations);
    };
    const Eigen::MatrixXd H_fd = tu::numeric_jacobian(f, Eigen::VectorXd::Zero(15));
    const Eigen::MatrixXd H = measurement_jacobian(x, stations);
    EXPECT_LT((H_fd - H).norm(), 1e-7);
    EXPECT_TRUE(H.leftCols(12).isZero(0.0));
  }
  NavState at_station;
  at_station.p = stations[0].position;
  EXPECT_THROW(measurement_jacobian(at_station, stations), NumericalError);
}

TEST(Update, SingleRangeMatchesScalarKalmanOracle) {
  std::mt19937_64 rng(35);
  const auto stations = default_base_stations();
  for (int trial = 0; trial < 10; ++trial) {
    const NavState x = random_state(rng);
    Eigen::MatrixXd A0 = Eigen::MatrixXd::Random(15, 15);
    const Mat15 P = A0 * A0.transpose() * 1e-2 + Mat15::Identity() * 1e-3;
    const BaseStation& bs = stations[static_cast<std::size_t>(trial % 5)];
    const double sigma = 0.3;
    const double d = true_distance(x.p, bs) + 0.4;

    // Oracle: scalar gain from the position block only.
    const Vec3 u = (x.p - bs.position).normalized();
    Eigen::Matrix<double, 1, 15> h = Eigen::Matrix<double, 1, 15>::Zero();
    h.segment<3>(err::kP) = u.transpose();
    const Vec15 pht = P * h.transpose();
    const double s = h.dot(pht) + sigma * sigma;
    const Vec15 k = pht / s;
    const Vec15 dx = k * (d - true_distance(x.p, bs));
    const Mat15 P_expected = P - k * pht.transpose();

    Eigen::MatrixXd R(1, 1);
    R(0, 0) = sigma * sigma;
    const auto out = update(x, P, {{0, bs.id, d}}, stations, R);
    EXPECT_LT(state_difference(out.state, inject_error(x, dx)).norm(), 1e-12);
    EXPECT_LT((out.P - P_expected).norm(), 1e-12);
    // Posterior variance along the measured direction shrinks.
    EXPECT_LT(h * out.P * h.transpose(), h * P * h.transpose());
  }
}

TEST(Update, RejectsBadInputs) {
  const auto stations = default_base_stations();
  NavState x;
  x.p = Vec3(1, 1, 1);
  EXPECT_THROW(update(x, Mat15::Identity(), {{0, 1, 5.0}}, stations, Eigen::MatrixXd::Identity(2, 2)), ConfigError);
  Eigen::MatrixXd R(1, 1);
  R(0, 0) = -1.0;
  EXPECT_THROW(update(x, Mat15::Zero(), {{0, 1, 5.0}}, stations, R), NumericalError);
  const auto same = update(x, Mat15::Identity(), {}, stations, Eigen::MatrixXd(0, 0));
  EXPECT_EQ(same.P, Mat15::Identity());
}

TEST(Injection, DifferenceInvertsInjectionForSmallErrors) {
  std::mt19937_64 rng(36);
  for (int i = 0; i < 100; ++i) {
    const NavState x = random_state(rng);
    Vec15 dx;
    for (int j = 0; j < 15; ++j) dx[j] = std::normal_distribution<double>(0, 0.1)(rng);
    // Small-angle quaternion injection agrees with Log to third order.
    const double angle = dx.segment<3>(err::kTheta).norm();
    EXPECT_LT((state_difference(inject_error(x, dx), x) - dx).norm(), angle * angle * angle + 1e-12);
    EXPECT_LT((state_difference(inject_error(x, 1e-4 * dx), x) - 1e-4 * dx).norm(), 1e-12);
  }
}

TEST(Propagation, StaticLevelBodyStaysPut) {
  NavState x;
  x.p = Vec3(1, 2, 3);
  ImuSample imu;
  imu.accel = Vec3(0, 0, 9.81);
  NavState y = x;
  for (int i = 0; i < 2000; ++i) y = propagate_nominal(y, imu, 0.005);
  EXPECT_LT((y.p - x.p).norm(), 1e-9);
  EXPECT_LT(y.v.norm(), 1e-9);
}

TEST(Propagation, ConstantRateRotation) {
  NavState x;
  ImuSample imu;
  imu.omega = Vec3(0, 0, 0.3);
  imu.accel = Vec3(0, 0, 9.81);
  NavState y = x;
  for (int i = 0; i < 1000; ++i) y = propagate_nominal(y, imu, 0.01);
  EXPECT_LT((quat_to_rot(y.q) - exp_so3(Vec3(0, 0, 3.0))).norm(), 1e-9);
  EXPECT_NEAR(y.q.norm(), 1.0, 1e-12);
}

TEST(Filter, NoiselessRangesKeepTruth) {
  // Stationary body, exact ranges: filter must stay at the truth.
  const auto stations = default_base_stations();
  FilterConfig cfg;
  cfg.initial_state.p = Vec3(0.5, -0.2, 1.2);
  cfg.stations = stations;
  cfg.range_sigma.assign(5, 0.1);
  std::vector<ImuSample> imu;
  for (int i = 0; i <= 2000; ++i) imu.push_back({i * 5'000'000LL, Vec3::Zero(), Vec3(0, 0, 9.81)});
  std::vector<ToaMeasurement> toa;
  for (int t = 0; t <= 50; ++t) {
    for (const auto& bs : stations) toa.push_back({t * 200'000'000LL, bs.id, true_distance(cfg.initial_state.p, bs)});
  }
  const auto run = run_filter(imu, toa, cfg);
  ASSERT_EQ(run.outputs.size(), 51u);
  for (std::size_t i = 0; i < run.outputs.size(); ++i) {
    EXPECT_EQ(run.outputs[i].t_ns, static_cast<TimestampNs>(i) * 200'000'000LL);
    EXPECT_LT((run.outputs[i].state.p - cfg.initial_state.p).norm(), 1e-9);
  }
  // Position uncertainty collapses well below the prior.
  EXPECT_LT((run.outputs.back().P.block<3, 3>(err::kP, err::kP).trace()), 0.03);
  EXPECT_EQ(run.cycle_ms.size(), run.outputs.size());

  cfg.range_sigma.pop_back();
  EXPECT_THROW(run_filter(imu, toa, cfg), ConfigError);
}

TEST(Filter, ConvergesFromOffsetInitialPosition) {
  const auto stations = default_base_stations();
  const Vec3 truth(0.5, -0.2, 1.2);
  FilterConfig cfg;
  cfg.initial_state.p = truth + Vec3(0.2, -0.15, 0.1);
  cfg.stations = stations;
  cfg.range_sigma.assign(5, 0.05);
  std::vector<ImuSample> imu;
  for (int i = 0; i <= 4000; ++i) imu.push_back({i * 5'000'000LL, Vec3::Zero(), Vec3(0, 0, 9.81)});
  std::vector<ToaMeasurement> toa;
  for (int t = 0; t <= 100; ++t) {
    for (const auto& bs : stations) toa.push_back({t * 200'000'000LL, bs.id, true_distance(truth, bs)});
  }
  const auto run = run_filter(imu, toa, cfg);
  EXPECT_LT((run.outputs.back().state.p - truth).norm(), 0.02);
}
