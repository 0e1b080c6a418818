#include <cmath>

#include <gtest/gtest.h>

#include "toa_fusion/errors.hpp"
#include "toa_fusion/synthetic.hpp"

using namespace toa_fusion;

namespace {

/// Dead-reckons the whole IMU stream from the first ground-truth state.
double max_round_trip_drift(const SyntheticData& d) {
  NavState x = nav_state_from(d.groundtruth.front());
  double worst = 0.0;
  std::size_t g = 0;
  for (std::size_t k = 0; k + 1 < d.imu.size(); ++k) {
    const double dt = 1e-9 * static_cast<double>(d.imu[k + 1].t_ns - d.imu[k].t_ns);
    x = propagate_nominal(x, d.imu[k], d.imu[k + 1], dt);
    while (g < d.groundtruth.size() && d.groundtruth[g].t_ns < d.imu[k + 1].t_ns) ++g;
    if (g < d.groundtruth.size() && d.groundtruth[g].t_ns == d.imu[k + 1].t_ns) {
      worst = std::max(worst, (x.p - d.groundtruth[g].position).norm());
    }
  }
  return worst;
}

}  // namespace

TEST(Synthetic, SampleCountsAndRates) {
  SyntheticTrajectorySpec spec;
  spec.duration_s = 10.0;
  spec.start_ns = 1'000'000'000;
  const auto d = generate_synthetic_trajectory(spec);
  ASSERT_EQ(d.imu.size(), 2001u);
  ASSERT_EQ(d.groundtruth.size(), 1001u);
  EXPECT_EQ(d.imu.front().t_ns, spec.start_ns);
  EXPECT_EQ(d.imu[1].t_ns - d.imu[0].t_ns, 5'000'000);
  EXPECT_EQ(d.groundtruth[1].t_ns - d.groundtruth[0].t_ns, 10'000'000);
  EXPECT_EQ(d.groundtruth.back().t_ns, d.imu.back().t_ns);
  for (const auto& g : d.groundtruth) {
    EXPECT_NEAR(g.orientation.norm(), 1.0, 1e-12);
    ASSERT_TRUE(g.velocity.has_value());
  }
}

TEST(Synthetic, HoverIsEquilibrium) {
  SyntheticTrajectorySpec spec;
  spec.kind = TrajectoryKind::kHoverThenDash;
  spec.duration_s = 20.0;
  const auto d = generate_synthetic_trajectory(spec);
  // First half hovers.
  for (const auto& s : d.imu) {
    if (s.t_ns >= 10'000'000'000LL) break;
    EXPECT_LT(s.omega.norm(), 1e-12);
    EXPECT_LT((s.accel - Vec3(0, 0, 9.81)).norm(), 1e-12);
  }
  for (const auto& g : d.groundtruth) {
    if (g.t_ns >= 10'000'000'000LL) break;
    EXPECT_LT((g.position - d.groundtruth.front().position).norm(), 1e-12);
  }
}

TEST(Synthetic, CircleCentripetalAcceleration) {
  SyntheticTrajectorySpec spec;
  spec.kind = TrajectoryKind::kCircle;
  spec.speed_mps = 1.5;
  spec.size_m = 2.5;
  spec.duration_s = 10.0;
  const auto d = generate_synthetic_trajectory(spec);
  const double expected = spec.speed_mps * spec.speed_mps / spec.size_m;
  for (const auto& s : d.imu) {
    EXPECT_NEAR(s.accel.head<2>().norm(), expected, 1e-9);
    EXPECT_NEAR(s.accel.z(), 9.81, 1e-9);
    EXPECT_NEAR(s.omega.z(), spec.speed_mps / spec.size_m, 1e-9);
  }
  for (const auto& g : d.groundtruth) {
    EXPECT_NEAR((g.position - spec.center).head<2>().norm(), spec.size_m, 1e-9);
    EXPECT_NEAR(g.velocity->norm(), spec.speed_mps, 1e-9);
  }
}

TEST(Synthetic, DeadReckoningRoundTripUnderOneMillimetre) {
  for (auto kind : {TrajectoryKind::kCircle, TrajectoryKind::kFigureEight, TrajectoryKind::kHoverThenDash}) {
    SyntheticTrajectorySpec spec;
    spec.kind = kind;
    spec.duration_s = 60.0;
    EXPECT_LT(max_round_trip_drift(generate_synthetic_trajectory(spec)), 1e-3) << trajectory_kind_name(kind);
  }
}

TEST(Synthetic, TiltedPathDriftConvergesAtSecondOrder) {
  // Roll/pitch wobble adds coning that the sampled integration only resolves
  // to O(dt^2); the generator is consistent if the drift shrinks accordingly.
  SyntheticTrajectorySpec spec;
  spec.kind = TrajectoryKind::kFigureEight;
  spec.tilt_amplitude_rad = 0.1;
  spec.vertical_amplitude_m = 0.3;
  const double coarse = max_round_trip_drift(generate_synthetic_trajectory(spec));
  spec.imu_rate_hz = 1000.0;
  const double fine = max_round_trip_drift(generate_synthetic_trajectory(spec));
  EXPECT_LT(fine, 1e-3);
  EXPECT_GT(coarse / fine, 15.0);
}

TEST(Synthetic, NoiseAndBiasAreSeeded) {
  SyntheticTrajectorySpec spec;
  spec.duration_s = 5.0;
  spec.imu_noise = true;
  spec.imu_bias = true;
  spec.seed = 11;
  const auto a = generate_synthetic_trajectory(spec);
  const auto b = generate_synthetic_trajectory(spec);
  spec.seed = 12;
  const auto c = generate_synthetic_trajectory(spec);
  ASSERT_EQ(a.imu.size(), b.imu.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.imu.size(); ++i) {
    EXPECT_EQ(a.imu[i].accel, b.imu[i].accel);
    differs |= a.imu[i].accel != c.imu[i].accel;
  }
  EXPECT_TRUE(differs);
  ASSERT_TRUE(a.groundtruth.front().gyro_bias.has_value());
  EXPECT_GT(a.groundtruth.front().gyro_bias->norm(), 0.0);
}

TEST(Synthetic, RejectsInvalidSpecs) {
  SyntheticTrajectorySpec spec;
  spec.duration_s = 0.0;
  EXPECT_THROW(generate_synthetic_trajectory(spec), ConfigError);
  spec = {};
  spec.imu_rate_hz = -1.0;
  EXPECT_THROW(generate_synthetic_trajectory(spec), ConfigError);
  EXPECT_THROW(parse_trajectory_kind("spiral"), ConfigError);
  EXPECT_EQ(parse_trajectory_kind("figure_eight"), TrajectoryKind::kFigureEight);
}
