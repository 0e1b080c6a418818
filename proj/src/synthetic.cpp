#include "toa_fusion/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "toa_fusion/errors.hpp"

namespace toa_fusion {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Wobble periods (s) chosen incommensurate with the path so the IMU sees varied excitation.
constexpr double kRollPeriod = 5.0;
constexpr double kPitchPeriod = 3.7;
constexpr double kHeavePeriod = 7.0;
constexpr double kDashRamp = 2.0;

struct PathSample {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 a = Vec3::Zero();
  Vec3 euler = Vec3::Zero();       // roll, pitch, yaw (ZYX)
  Vec3 euler_rate = Vec3::Zero();
};

Mat3 rot_zyx(const Vec3& e) {
  return (Eigen::AngleAxisd(e[2], Vec3::UnitZ()) * Eigen::AngleAxisd(e[1], Vec3::UnitY()) *
          Eigen::AngleAxisd(e[0], Vec3::UnitX()))
      .toRotationMatrix();
}

/// Body angular rate for ZYX Euler angles and their derivatives.
Vec3 body_rate(const Vec3& e, const Vec3& de) {
  const double sr = std::sin(e[0]), cr = std::cos(e[0]);
  const double sp = std::sin(e[1]), cp = std::cos(e[1]);
  return {de[0] - de[2] * sp, de[1] * cr + de[2] * cp * sr, -de[1] * sr + de[2] * cp * cr};
}

PathSample sample_path(const SyntheticTrajectorySpec& spec, double t) {
  PathSample s;
  const double A = spec.size_m;
  switch (spec.kind) {
    case TrajectoryKind::kCircle: {
      const double w = spec.speed_mps / A;
      const double c = std::cos(w * t), sn = std::sin(w * t);
      s.p = Vec3(A * c, A * sn, 0.0);
      s.v = Vec3(-A * w * sn, A * w * c, 0.0);
      s.a = Vec3(-A * w * w * c, -A * w * w * sn, 0.0);
      s.euler[2] = w * t + 0.5 * std::numbers::pi;
      s.euler_rate[2] = w;
      break;
    }
    case TrajectoryKind::kFigureEight: {
      const double w = spec.speed_mps / A;
      s.p = Vec3(A * std::sin(w * t), 0.5 * A * std::sin(2.0 * w * t), 0.0);
      s.v = Vec3(A * w * std::cos(w * t), A * w * std::cos(2.0 * w * t), 0.0);
      s.a = Vec3(-A * w * w * std::sin(w * t), -2.0 * A * w * w * std::sin(2.0 * w * t), 0.0);
      const double vx = s.v.x(), vy = s.v.y();
      s.euler[2] = std::atan2(vy, vx);
      s.euler_rate[2] = (vx * s.a.y() - vy * s.a.x()) / (vx * vx + vy * vy);
      break;
    }
    case TrajectoryKind::kHoverThenDash: {
      const double t_dash = 0.5 * spec.duration_s;
      if (t > t_dash) {
        const double tau = t - t_dash;
        const double u = spec.speed_mps;
        if (tau < kDashRamp) {
          const double k = std::numbers::pi / kDashRamp;
          s.p.x() = u * (0.5 * tau - std::sin(k * tau) / (2.0 * k));
          s.v.x() = 0.5 * u * (1.0 - std::cos(k * tau));
          s.a.x() = 0.5 * u * k * std::sin(k * tau);
        } else {
          s.p.x() = u * (0.5 * kDashRamp + (tau - kDashRamp));
          s.v.x() = u;
        }
      }
      break;
    }
  }

  if (spec.vertical_amplitude_m != 0.0) {
    const double wz = kTwoPi / kHeavePeriod;
    const double h = spec.vertical_amplitude_m;
    s.p.z() += h * std::sin(wz * t);
    s.v.z() += h * wz * std::cos(wz * t);
    s.a.z() += -h * wz * wz * std::sin(wz * t);
  }
  if (spec.tilt_amplitude_rad != 0.0) {
    const double b = spec.tilt_amplitude_rad;
    const double wr = kTwoPi / kRollPeriod, wp = kTwoPi / kPitchPeriod;
    s.euler[0] = b * std::sin(wr * t);
    s.euler_rate[0] = b * wr * std::cos(wr * t);
    s.euler[1] = b * std::sin(wp * t);
    s.euler_rate[1] = b * wp * std::cos(wp * t);
  }
  s.p += spec.center;
  return s;
}

void validate(const SyntheticTrajectorySpec& spec) {
  if (!(spec.duration_s > 0.0)) throw ConfigError("synthetic duration must be positive");
  if (!(spec.imu_rate_hz > 0.0)) throw ConfigError("synthetic IMU rate must be positive");
  if (!(spec.groundtruth_rate_hz > 0.0)) throw ConfigError("synthetic ground-truth rate must be positive");
  if (!(spec.speed_mps >= 0.0)) throw ConfigError("synthetic speed must be non-negative");
  if (spec.kind != TrajectoryKind::kHoverThenDash && !(spec.speed_mps > 0.0)) {
    throw ConfigError("circle and figure-eight need a positive speed");
  }
  if (!(spec.size_m > 0.0)) throw ConfigError("synthetic size must be positive");
}

std::size_t sample_count(double duration_s, double rate_hz) {
  return static_cast<std::size_t>(std::floor(duration_s * rate_hz + 1e-9)) + 1;
}

TimestampNs stamp(TimestampNs start, std::size_t k, double rate_hz) {
  return start + static_cast<TimestampNs>(std::llround(static_cast<double>(k) * 1e9 / rate_hz));
}

}  // namespace

std::string_view trajectory_kind_name(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::kCircle:
      return "circle";
    case TrajectoryKind::kFigureEight:
      return "figure_eight";
    case TrajectoryKind::kHoverThenDash:
      return "hover_then_dash";
  }
  return "unknown";
}

TrajectoryKind parse_trajectory_kind(std::string_view name) {
  if (name == "circle") return TrajectoryKind::kCircle;
  if (name == "figure_eight") return TrajectoryKind::kFigureEight;
  if (name == "hover_then_dash") return TrajectoryKind::kHoverThenDash;
  throw ConfigError("unknown trajectory kind '" + std::string(name) + "'");
}

SyntheticData generate_synthetic_trajectory(const SyntheticTrajectorySpec& spec) {
  validate(spec);
  SyntheticData out;

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&]() { return Vec3(normal(rng), normal(rng), normal(rng)); };

  const double dt = 1.0 / spec.imu_rate_hz;
  Vec3 b_g = Vec3::Zero();
  Vec3 b_a = Vec3::Zero();
  if (spec.imu_bias) {
    b_g = spec.initial_gyro_bias * draw();
    b_a = spec.initial_accel_bias * draw();
  }

  const std::size_t n_imu = sample_count(spec.duration_s, spec.imu_rate_hz);
  out.imu.reserve(n_imu);
  std::vector<Vec3> bias_g_track;
  std::vector<Vec3> bias_a_track;
  bias_g_track.reserve(n_imu);
  bias_a_track.reserve(n_imu);
  for (std::size_t k = 0; k < n_imu; ++k) {
    const double t = static_cast<double>(k) * dt;
    const PathSample s = sample_path(spec, t);
    const Mat3 R = rot_zyx(s.euler);
    ImuSample m;
    m.t_ns = stamp(spec.start_ns, k, spec.imu_rate_hz);
    m.omega = body_rate(s.euler, s.euler_rate);
    m.accel = R.transpose() * (s.a - spec.gravity);
    if (spec.imu_bias) {
      m.omega += b_g;
      m.accel += b_a;
    }
    if (spec.imu_noise) {
      const double root_rate = std::sqrt(spec.imu_rate_hz);
      m.omega += spec.noise.sigma_g * root_rate * draw();
      m.accel += spec.noise.sigma_a * root_rate * draw();
    }
    out.imu.push_back(m);
    bias_g_track.push_back(b_g);
    bias_a_track.push_back(b_a);
    if (spec.imu_bias) {
      b_g += spec.noise.sigma_wg * std::sqrt(dt) * draw();
      b_a += spec.noise.sigma_wa * std::sqrt(dt) * draw();
    }
  }

  const std::size_t n_gt = sample_count(spec.duration_s, spec.groundtruth_rate_hz);
  out.groundtruth.reserve(n_gt);
  for (std::size_t k = 0; k < n_gt; ++k) {
    const double t = static_cast<double>(k) / spec.groundtruth_rate_hz;
    const PathSample s = sample_path(spec, t);
    const auto imu_idx = std::min(static_cast<std::size_t>(std::floor(t * spec.imu_rate_hz + 1e-9)), n_imu - 1);
    GroundTruthPose g;
    g.t_ns = stamp(spec.start_ns, k, spec.groundtruth_rate_hz);
    g.position = s.p;
    g.orientation = rot_to_quat(rot_zyx(s.euler));
    g.velocity = s.v;
    g.gyro_bias = bias_g_track[imu_idx];
    g.accel_bias = bias_a_track[imu_idx];
    out.groundtruth.push_back(g);
  }
  return out;
}

NavState nav_state_from(const GroundTruthPose& pose) {
  NavState s;
  s.q = pose.orientation;
  s.p = pose.position;
  s.v = pose.velocity.value_or(Vec3::Zero());
  s.b_g = pose.gyro_bias.value_or(Vec3::Zero());
  s.b_a = pose.accel_bias.value_or(Vec3::Zero());
  return s;
}

}  // namespace toa_fusion
