#pragma once

#include <string>
#include <utility>
#include <vector>

#include "toa_fusion/dataset.hpp"

namespace toa_fusion {

struct PosePair {
  Vec3 p_est = Vec3::Zero();
  Mat3 R_est = Mat3::Identity();
  Vec3 p_gt = Vec3::Zero();
  Mat3 R_gt = Mat3::Identity();
};

/// Pairs each estimate with the temporally closest ground-truth pose.
std::vector<PosePair> match_trajectory(const std::vector<TrajectoryPoint>& estimate,
                                       const std::vector<GroundTruthPose>& groundtruth,
                                       TimestampNs max_gap = kDefaultMaxGapNs);

/// RMSE of position error norms, no alignment. Throws EmptyPairs.
double ate(const std::vector<PosePair>& pairs);

struct AxisRmse {
  double e_x = 0.0;
  double e_y = 0.0;
  double e_z = 0.0;
};
AxisRmse per_axis_rmse(const std::vector<PosePair>& pairs);

struct RelativeError {
  double translation_m = 0.0;
  double rotation_deg = 0.0;
};
/// RMSE over i of the relative-transform error between pair i and i + step.
/// Throws InsufficientPairs when fewer than step + 1 pairs are given.
RelativeError rpe(const std::vector<PosePair>& pairs, std::size_t step = 1);

struct TimingStats {
  double mean_ms = 0.0;
  double std_ms = 0.0;  // population
};
TimingStats timing_stats(const std::vector<double>& samples_ms);

struct MetricsReport {
  double ate = 0.0;
  double e_x = 0.0;
  double e_y = 0.0;
  double e_z = 0.0;
  double rpe_t = 0.0;
  double rpe_r = 0.0;
  double time_mean_ms = 0.0;
  double time_std_ms = 0.0;
  std::size_t pairs = 0;
  std::size_t timing_samples = 0;

  /// "key=value" lines.
  std::string to_text() const;
  static std::string csv_header();
  std::string csv_row() const;
};

MetricsReport evaluate(const std::vector<PosePair>& pairs, const std::vector<double>& timing_ms);

}  // namespace toa_fusion
