#include "toa_fusion/metrics.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "toa_fusion/errors.hpp"

namespace toa_fusion {

namespace {

void require_pairs(const std::vector<PosePair>& pairs) {
  if (pairs.empty()) throw DataError(DataError::Kind::kEmptyPairs, "no matched pose pairs");
}

}  // namespace

std::vector<PosePair> match_trajectory(const std::vector<TrajectoryPoint>& estimate,
                                       const std::vector<GroundTruthPose>& groundtruth, TimestampNs max_gap) {
  std::vector<TimestampNs> gt_ts;
  gt_ts.reserve(groundtruth.size());
  for (const auto& g : groundtruth) gt_ts.push_back(g.t_ns);
  std::vector<TimestampNs> est_ts;
  est_ts.reserve(estimate.size());
  for (const auto& e : estimate) est_ts.push_back(e.t_ns);

  std::vector<PosePair> pairs;
  for (const auto& [gi, ei] : associate_nearest(gt_ts, est_ts, max_gap)) {
    const auto& g = groundtruth[gi];
    const auto& e = estimate[ei];
    pairs.push_back({e.position, quat_to_rot(e.orientation), g.position, quat_to_rot(g.orientation)});
  }
  return pairs;
}

double ate(const std::vector<PosePair>& pairs) {
  require_pairs(pairs);
  double sq = 0.0;
  for (const auto& p : pairs) sq += (p.p_est - p.p_gt).squaredNorm();
  return std::sqrt(sq / static_cast<double>(pairs.size()));
}

AxisRmse per_axis_rmse(const std::vector<PosePair>& pairs) {
  require_pairs(pairs);
  Vec3 sq = Vec3::Zero();
  for (const auto& p : pairs) sq += (p.p_est - p.p_gt).cwiseAbs2();
  sq /= static_cast<double>(pairs.size());
  return {std::sqrt(sq.x()), std::sqrt(sq.y()), std::sqrt(sq.z())};
}

RelativeError rpe(const std::vector<PosePair>& pairs, std::size_t step) {
  if (step == 0 || pairs.size() < step + 1) {
    throw DataError(DataError::Kind::kInsufficientPairs,
                    fmt::format("RPE with step {} needs at least {} pairs, got {}", step, step + 1, pairs.size()));
  }
  double sq_t = 0.0;
  double sq_r = 0.0;
  const std::size_t n = pairs.size() - step;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = pairs[i];
    const auto& b = pairs[i + step];
    // Relative motions T_a^-1 T_b for each trajectory.
    const Mat3 dR_gt = a.R_gt.transpose() * b.R_gt;
    const Vec3 dp_gt = a.R_gt.transpose() * (b.p_gt - a.p_gt);
    const Mat3 dR_est = a.R_est.transpose() * b.R_est;
    const Vec3 dp_est = a.R_est.transpose() * (b.p_est - a.p_est);
    // E = (dT_gt)^-1 dT_est
    const Mat3 eR = dR_gt.transpose() * dR_est;
    const Vec3 ep = dR_gt.transpose() * (dp_est - dp_gt);
    sq_t += ep.squaredNorm();
    sq_r += log_so3(eR).squaredNorm();
  }
  const double m = static_cast<double>(n);
  return {std::sqrt(sq_t / m), std::sqrt(sq_r / m) * 180.0 / std::numbers::pi};
}

TimingStats timing_stats(const std::vector<double>& samples_ms) {
  if (samples_ms.empty()) throw DataError(DataError::Kind::kEmptySamples, "no timing samples");
  const double n = static_cast<double>(samples_ms.size());
  double mean = 0.0;
  for (double s : samples_ms) mean += s;
  mean /= n;
  double var = 0.0;
  for (double s : samples_ms) var += (s - mean) * (s - mean);
  return {mean, std::sqrt(var / n)};
}

MetricsReport evaluate(const std::vector<PosePair>& pairs, const std::vector<double>& timing_ms) {
  MetricsReport r;
  r.ate = ate(pairs);
  const AxisRmse axes = per_axis_rmse(pairs);
  r.e_x = axes.e_x;
  r.e_y = axes.e_y;
  r.e_z = axes.e_z;
  if (pairs.size() >= 2) {
    const RelativeError rel = rpe(pairs);
    r.rpe_t = rel.translation_m;
    r.rpe_r = rel.rotation_deg;
  }
  if (!timing_ms.empty()) {
    const TimingStats t = timing_stats(timing_ms);
    r.time_mean_ms = t.mean_ms;
    r.time_std_ms = t.std_ms;
  }
  r.pairs = pairs.size();
  r.timing_samples = timing_ms.size();
  return r;
}

std::string MetricsReport::to_text() const {
  return fmt::format(
      "ate_m={:.6f}\ne_x_m={:.6f}\ne_y_m={:.6f}\ne_z_m={:.6f}\nrpe_t_m={:.6f}\nrpe_r_deg={:.6f}\n"
      "time_mean_ms={:.6f}\ntime_std_ms={:.6f}\npairs={}\ntiming_samples={}\n",
      ate, e_x, e_y, e_z, rpe_t, rpe_r, time_mean_ms, time_std_ms, pairs, timing_samples);
}

std::string MetricsReport::csv_header() {
  return "ate_m,e_x_m,e_y_m,e_z_m,rpe_t_m,rpe_r_deg,time_mean_ms,time_std_ms";
}

std::string MetricsReport::csv_row() const {
  return fmt::format("{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}", ate, e_x, e_y, e_z, rpe_t, rpe_r,
                     time_mean_ms, time_std_ms);
}

}  // namespace toa_fusion
