#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "toa_fusion/dataset.hpp"
#include "toa_fusion/eskf.hpp"

namespace toa_fusion {

enum class TrajectoryKind { kCircle, kFigureEight, kHoverThenDash };

std::string_view trajectory_kind_name(TrajectoryKind kind);
/// Accepts circle, figure_eight, hover_then_dash. Throws ConfigError otherwise.
TrajectoryKind parse_trajectory_kind(std::string_view name);

struct SyntheticTrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::kCircle;
  double duration_s = 60.0;
  double speed_mps = 1.0;
  /// Circle radius, figure-eight half-width.
  double size_m = 3.0;
  Vec3 center = Vec3(0.0, 0.0, 1.5);
  double imu_rate_hz = 200.0;
  double groundtruth_rate_hz = 100.0;
  TimestampNs start_ns = 0;
  /// Peak roll/pitch wobble and vertical oscillation, added for excitation.
  double tilt_amplitude_rad = 0.0;
  double vertical_amplitude_m = 0.0;

  bool imu_noise = false;
  bool imu_bias = false;
  ImuNoiseParams noise;
  /// Constant turn-on bias magnitude per axis when imu_bias is set.
  double initial_gyro_bias = 2e-3;
  double initial_accel_bias = 2e-2;
  std::uint64_t seed = 0;
  Vec3 gravity = kDefaultGravity;
};

struct SyntheticData {
  std::vector<ImuSample> imu;
  std::vector<GroundTruthPose> groundtruth;  // carries velocity and the true biases
};

/// Validates the spec (ConfigError) and samples the analytic path.
SyntheticData generate_synthetic_trajectory(const SyntheticTrajectorySpec& spec);

/// Navigation state of a ground-truth row (missing velocity/biases read as zero).
NavState nav_state_from(const GroundTruthPose& pose);

}  // namespace toa_fusion
