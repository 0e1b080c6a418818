#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "toa_fusion/geometry.hpp"

namespace toa_fusion {

using TimestampNs = std::int64_t;

struct ImuSample {
  TimestampNs t_ns = 0;
  Vec3 omega = Vec3::Zero();  // rad/s, body frame
  Vec3 accel = Vec3::Zero();  // m/s^2, body frame specific force
};

struct GroundTruthPose {
  TimestampNs t_ns = 0;
  Vec3 position = Vec3::Zero();
  UnitQuaternion orientation;
  std::optional<Vec3> velocity;
  std::optional<Vec3> gyro_bias;
  std::optional<Vec3> accel_bias;
};

struct ToaMeasurement {
  TimestampNs t_ns = 0;
  int bs_id = 0;  // 1-based
  double distance = 0.0;
};

/// Estimated pose row of the trajectory CSV.
struct TrajectoryPoint {
  TimestampNs t_ns = 0;
  Vec3 position = Vec3::Zero();
  UnitQuaternion orientation;
  Vec3 velocity = Vec3::Zero();
};

/// Rigid transform from the ground-truth body frame to the IMU frame.
struct Extrinsic {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

/// EuRoC imu0/data.csv layout: t[ns], w_xyz [rad/s], a_xyz [m/s^2]; first line is a header.
std::vector<ImuSample> load_imu(const std::filesystem::path& path);

/// EuRoC ground truth: t, p(3), q(w,x,y,z) and optionally v(3), b_g(3), b_a(3).
std::vector<GroundTruthPose> load_groundtruth(const std::filesystem::path& path);

/// ToA CSV with header "t_ns,bs_id,distance_m". Ids outside [1, num_bs] raise UnknownBsId.
std::vector<ToaMeasurement> load_toa(const std::filesystem::path& path, int num_bs);
void save_toa(const std::filesystem::path& path, const std::vector<ToaMeasurement>& measurements);

void save_imu(const std::filesystem::path& path, const std::vector<ImuSample>& samples);
void save_groundtruth(const std::filesystem::path& path, const std::vector<GroundTruthPose>& poses);

/// Trajectory CSV "t_ns,px,py,pz,qw,qx,qy,qz,vx,vy,vz".
void save_trajectory(const std::filesystem::path& path, const std::vector<TrajectoryPoint>& trajectory);
std::vector<TrajectoryPoint> load_trajectory(const std::filesystem::path& path);

/// Pose of the IMU frame given the pose of the ground-truth body frame.
std::vector<GroundTruthPose> apply_extrinsic(const std::vector<GroundTruthPose>& poses, const Extrinsic& extrinsic);

inline constexpr TimestampNs kDefaultMaxGapNs = 10'000'000;
inline constexpr TimestampNs kNoGapLimit = std::numeric_limits<TimestampNs>::max();

/// For each query timestamp, the index of the nearest reference (ties to the
/// earlier one). Queries farther than max_gap from every reference are omitted.
/// Returns (reference index, query index) pairs.
std::vector<std::pair<std::size_t, std::size_t>> associate_nearest(const std::vector<TimestampNs>& reference_ts,
                                                                   const std::vector<TimestampNs>& query_ts,
                                                                   TimestampNs max_gap = kDefaultMaxGapNs);

/// Writes to a sibling temporary file then renames over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace toa_fusion
