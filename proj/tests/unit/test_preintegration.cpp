#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "toa_fusion/errors.hpp"
#include "toa_fusion/preintegration.hpp"

using namespace toa_fusion;

namespace {

std::vector<ImuInterval> random_intervals(std::mt19937_64& rng, int n, double dt = 0.005) {
  std::vector<ImuInterval> out;
  Vec3 w = tu::random_vec(rng, 0.5);
  Vec3 a = Vec3(0, 0, 9.81) + tu::random_vec(rng, 1.0);
  for (int i = 0; i < n; ++i) {
    w += tu::random_vec(rng, 0.05);
    a += tu::random_vec(rng, 0.1);
    out.push_back({w, a, dt});
  }
  return out;
}

KeyframeState random_keyframe(std::mt19937_64& rng) {
  KeyframeState s;
  s.R = tu::random_rotation(rng);
  s.p = tu::random_vec(rng, 3.0);
  s.v = tu::random_vec(rng, 1.0);
  s.b_g = tu::random_vec(rng, 0.01);
  s.b_a = tu::random_vec(rng, 0.05);
  return s;
}

NavState to_nav(const KeyframeState& k) {
  NavState n;
  n.q = rot_to_quat(k.R);
  n.p = k.p;
  n.v = k.v;
  n.b_g = k.b_g;
  n.b_a = k.b_a;
  return n;
}

KeyframeState to_kf(const NavState& n) {
  KeyframeState k;
  k.R = quat_to_rot(n.q);
  k.p = n.p;
  k.v = n.v;
  k.b_g = n.b_g;
  k.b_a = n.b_a;
  return k;
}

using Vec15d = Eigen::Matrix<double, 15, 1>;

}  // namespace

TEST(Preintegration, ResidualVanishesOnConsistentTrajectory) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const KeyframeState si = random_keyframe(rng);
    const auto intervals = random_intervals(rng, 20);
    // Truth: fine RK4 substeps holding each reading constant.
    NavState x = to_nav(si);
    for (const auto& iv : intervals) {
      for (int k = 0; k < 20; ++k) x = propagate_nominal(x, {0, iv.omega, iv.accel}, iv.dt / 20);
    }
    const KeyframeState sj = to_kf(x);
    const auto pre = preintegrate(intervals, si.b_g, si.b_a, {});
    EXPECT_NEAR(pre.dt_total, 0.1, 1e-12);
    EXPECT_EQ(pre.count, 20);
    EXPECT_LT(imu_residual(pre, si, sj).norm(), 1e-6) << "trial " << trial;
  }
}

TEST(Preintegration, PredictionZeroesResidual) {
  std::mt19937_64 rng(42);
  const KeyframeState si = random_keyframe(rng);
  const auto pre = preintegrate(random_intervals(rng, 30), si.b_g, si.b_a, {});
  EXPECT_LT(imu_residual(pre, si, predict_keyframe(si, pre)).norm(), 1e-12);
  EXPECT_TRUE(residual_bias(si, si).isZero(0.0));
}

TEST(Preintegration, ComposeMatchesSequentialIntegration) {
  std::mt19937_64 rng(43);
  const Vec3 bg = tu::random_vec(rng, 0.01), ba = tu::random_vec(rng, 0.05);
  auto all = random_intervals(rng, 40);
  const std::vector<ImuInterval> first(all.begin(), all.begin() + 17), second(all.begin() + 17, all.end());
  const auto whole = preintegrate(all, bg, ba, {});
  const auto joined = compose(preintegrate(first, bg, ba, {}), preintegrate(second, bg, ba, {}));
  EXPECT_LT((whole.dR - joined.dR).norm(), 1e-12);
  EXPECT_LT((whole.dv - joined.dv).norm(), 1e-12);
  EXPECT_LT((whole.dp - joined.dp).norm(), 1e-12);
  EXPECT_NEAR(whole.dt_total, joined.dt_total, 1e-15);
  EXPECT_EQ(whole.count, joined.count);
  // Per-sample propagation drops O(dt^3) terms that the block composition keeps.
  EXPECT_LT(tu::relative_error(joined.cov, whole.cov, 1e-12), 1e-3);
}

TEST(Preintegration, CovarianceMatchesLinearizedNoisePropagation) {
  // Oracle: sum over samples of J_k Q_k J_k^T, J_k from finite differences
  // of the increments with respect to that sample's white noise.
  std::mt19937_64 rng(44);
  const ImuNoiseParams noise;
  const auto intervals = random_intervals(rng, 25);
  const Vec3 bg = Vec3::Zero(), ba = Vec3::Zero();
  const auto clean = preintegrate(intervals, bg, ba, noise);
  Mat9 oracle = Mat9::Zero();
  for (std::size_t k = 0; k < intervals.size(); ++k) {
    auto f = [&](const Eigen::VectorXd& eta) -> Eigen::VectorXd {
      auto noisy = intervals;
      noisy[k].omega += eta.head<3>();
      noisy[k].accel += eta.tail<3>();
      const auto pre = preintegrate(noisy, bg, ba, noise);
      Vec9 d;
      d.segment<3>(pre_idx::kR) = log_so3(clean.dR.transpose() * pre.dR);
      d.segment<3>(pre_idx::kP) = pre.dp - clean.dp;
      d.segment<3>(pre_idx::kV) = pre.dv - clean.dv;
      return d;
    };
    const Eigen::MatrixXd J = tu::numeric_jacobian(f, Eigen::VectorXd::Zero(6));
    Eigen::Matrix<double, 6, 6> q = Eigen::Matrix<double, 6, 6>::Zero();
    q.diagonal().head<3>().setConstant(noise.sigma_g * noise.sigma_g / intervals[k].dt);
    q.diagonal().tail<3>().setConstant(noise.sigma_a * noise.sigma_a / intervals[k].dt);
    oracle += J * q * J.transpose();
  }
  EXPECT_LT(tu::relative_error(clean.cov, oracle, 0.0), 1e-2);
  EXPECT_LT((clean.cov - clean.cov.transpose()).norm(), 1e-20);
}

TEST(Preintegration, BiasCorrectionIsFirstOrderAccurate) {
  std::mt19937_64 rng(45);
  const auto intervals = random_intervals(rng, 20);
  const Vec3 bg0 = tu::random_vec(rng, 0.01), ba0 = tu::random_vec(rng, 0.05);
  const auto pre = preintegrate(intervals, bg0, ba0, {});
  const auto jac = bias_jacobians(intervals, bg0, ba0, {});
  for (double scale : {1e-2, 1e-3}) {
    const Vec3 bg = bg0 + tu::random_vec(rng, scale), ba = ba0 + tu::random_vec(rng, scale);
    const auto exact = preintegrate(intervals, bg, ba, {});
    const auto approx = correct_bias(pre, jac, bg, ba);
    const double err = log_so3(exact.dR.transpose() * approx.dR).norm() + (exact.dv - approx.dv).norm() +
                       (exact.dp - approx.dp).norm();
    EXPECT_LT(err, 10 * scale * scale) << "scale " << scale;
  }
  // Accel bias enters linearly.
  const Vec3 ba = ba0 + Vec3(0.3, -0.2, 0.1);
  const auto exact = preintegrate(intervals, bg0, ba, {});
  const auto approx = correct_bias(pre, jac, bg0, ba);
  EXPECT_LT((exact.dv - approx.dv).norm(), 1e-8);
  EXPECT_LT((exact.dp - approx.dp).norm(), 1e-8);
}

TEST(Preintegration, ResidualJacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(46);
  for (int trial = 0; trial < 10; ++trial) {
    const auto intervals = random_intervals(rng, 20);
    const KeyframeState lin = random_keyframe(rng);
    const auto pre = preintegrate(intervals, lin.b_g, lin.b_a, {});
    const auto jac = bias_jacobians(intervals, lin.b_g, lin.b_a, {});
    // Evaluate away from the linearization point and off the exact prediction.
    KeyframeState si = lin;
    si.b_g += tu::random_vec(rng, 2e-3);
    si.b_a += tu::random_vec(rng, 1e-2);
    Vec15d noise;
    for (int i = 0; i < 15; ++i) noise[i] = std::normal_distribution<double>(0, 0.05)(rng);
    const KeyframeState sj = retract(predict_keyframe(si, pre), noise);

    const auto J = imu_residual_jacobians(pre, jac, si, sj);
    auto fi = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
      const KeyframeState s = retract(si, Vec15d(d));
      return imu_residual(correct_bias(pre, jac, s.b_g, s.b_a), s, sj);
    };
    auto fj = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
      return imu_residual(correct_bias(pre, jac, si.b_g, si.b_a), si, retract(sj, Vec15d(d)));
    };
    EXPECT_LT((tu::numeric_jacobian(fi, Eigen::VectorXd::Zero(15)) - J.wrt_i).norm(), 1e-6) << "trial " << trial;
    EXPECT_LT((tu::numeric_jacobian(fj, Eigen::VectorXd::Zero(15)) - J.wrt_j).norm(), 1e-6) << "trial " << trial;
  }
}

TEST(Preintegration, RetractionAndLocalDifferenceAreInverse) {
  std::mt19937_64 rng(47);
  for (int i = 0; i < 100; ++i) {
    const KeyframeState s = random_keyframe(rng);
    Vec15d d;
    for (int j = 0; j < 15; ++j) d[j] = std::normal_distribution<double>(0, 0.3)(rng);
    EXPECT_LT((local_difference(retract(s, d), s) - d).norm(), 1e-10);
  }
}

TEST(Preintegration, RejectsBadStep) {
  const auto pre = PreintegratedImu::start(Vec3::Zero(), Vec3::Zero());
  EXPECT_THROW(integrate(pre, {}, 0.0), NumericalError);
  EXPECT_THROW(integrate(pre, {}, -0.001), NumericalError);
  EXPECT_THROW(integrate(pre, {}, 0.2), NumericalError);
  EXPECT_THROW(integrate(pre, {}, std::nan("")), NumericalError);
}
