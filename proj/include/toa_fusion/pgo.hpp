#pragma once

#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "toa_fusion/dataset.hpp"
#include "toa_fusion/eskf.hpp"
#include "toa_fusion/preintegration.hpp"
#include "toa_fusion/toa_sim.hpp"

namespace toa_fusion {

using Mat6 = Eigen::Matrix<double, 6, 6>;

struct KeyframeId {
  int index = 0;
  TimestampNs t_ns = 0;
};

struct PriorPoseFactor {
  int keyframe = 0;
  Mat3 R = Mat3::Identity();
  Vec3 p = Vec3::Zero();
  Mat6 cov = Mat6::Identity();  // (rotation, position)
};

struct PriorVelocityFactor {
  int keyframe = 0;
  Vec3 v = Vec3::Zero();
  Mat3 cov = Mat3::Identity();
};

struct PriorBiasFactor {
  int keyframe = 0;
  Vec6 bias = Vec6::Zero();  // (b_g, b_a)
  Mat6 cov = Mat6::Identity();
};

/// Links keyframe i to keyframe i + 1. Keeps the raw intervals so the
/// increments can be re-integrated when the bias estimate drifts.
struct ImuFactor {
  int keyframe_i = 0;
  std::vector<ImuInterval> intervals;
  PreintegratedImu pre;
  BiasJacobians bias_jac;
  /// Bias random walk over the interval, (b_g, b_a).
  Mat6 bias_cov = Mat6::Identity();

  int keyframe_j() const { return keyframe_i + 1; }
  /// Residual covariance in (r_R, r_p, r_v, r_b) order.
  Eigen::Matrix<double, 15, 15> cov() const;
};

struct RangeFactor {
  int keyframe = 0;
  int station = 0;  // index into FactorGraph::stations
  TimestampNs t_ns = 0;
  double distance = 0.0;
  double sigma = 1.0;
};

struct StationPriorFactor {
  int station = 0;
  Vec3 position = Vec3::Zero();
  double sigma = 1e-3;
};

/// Gaussian on a whole keyframe left behind by marginalizing its predecessor.
struct MarginalFactor {
  int keyframe = 0;
  KeyframeState mean;
  Eigen::Matrix<double, 15, 15> cov = Eigen::Matrix<double, 15, 15>::Identity();
};

enum class FactorKind { kPriorPose, kPriorVelocity, kPriorBias, kImu, kRange, kStationPrior, kMarginal };

std::string_view factor_kind_name(FactorKind kind);

struct Factor {
  std::variant<PriorPoseFactor, PriorVelocityFactor, PriorBiasFactor, ImuFactor, RangeFactor, StationPriorFactor,
               MarginalFactor>
      data;
  /// Lower-triangular L^-1 with cov = L L^T; whitened residual is L^-1 r.
  Eigen::MatrixXd whitener;

  FactorKind kind() const { return static_cast<FactorKind>(data.index()); }
  Eigen::MatrixXd covariance() const;
  /// Keyframes this factor touches (global indices).
  std::vector<int> keyframes() const;

  template <typename T>
  static Factor make(T payload);
  /// Recomputes the whitener from the current covariance.
  void refresh_whitener();
};

template <typename T>
Factor Factor::make(T payload) {
  Factor f;
  f.data = std::move(payload);
  f.refresh_whitener();
  return f;
}

struct FactorGraph {
  std::vector<KeyframeId> keyframes;  // contiguous global indices
  std::vector<BaseStation> stations;
  std::vector<Factor> factors;
  Vec3 gravity = kDefaultGravity;
};

/// Variable values. Keyframes are indexed globally; a graph may cover a subrange.
struct Values {
  std::vector<KeyframeState> keyframes;
  std::vector<Vec3> stations;
};

/// r = d - ||p - L||.
double range_residual(const Vec3& p, const Vec3& L, double d);
/// d r / d p = -(p - L)^T / ||p - L||. Throws DegenerateGeometry when ||p - L|| < 1e-6.
Eigen::RowVector3d range_residual_gradient(const Vec3& p, const Vec3& L);

/// Unwhitened residual of one factor.
Eigen::VectorXd factor_residual(const Factor& factor, const Values& values, const Vec3& gravity);

/// Variable reference inside a linearized factor.
struct VariableRef {
  bool is_station = false;
  int index = 0;  // global keyframe index or station index
  int dim() const { return is_station ? 3 : kf_idx::kDim; }
};

struct LinearizedFactor {
  Eigen::VectorXd residual;  // whitened
  std::vector<std::pair<VariableRef, Eigen::MatrixXd>> jacobians;  // whitened
};

LinearizedFactor linearize(const Factor& factor, const Values& values, const Vec3& gravity);

/// Sum of squared Mahalanobis norms over every factor.
double total_cost(const FactorGraph& graph, const Values& values);

struct PgoConfig {
  NavState initial_state;
  double prior_sigma_theta = 0.01;
  double prior_sigma_p = 0.1;
  double prior_sigma_v = 0.1;
  double prior_sigma_bias = 0.01;
  ImuNoiseParams imu_noise;
  std::vector<BaseStation> stations;
  std::vector<double> range_sigma;  // per station
  double station_sigma = 1e-3;
  double node_rate_hz = 10.0;
  Vec3 gravity = kDefaultGravity;
};

struct GraphBuild {
  FactorGraph graph;
  /// Dead-reckoned from the initial state through consecutive IMU factors.
  Values initial;
};

/// One keyframe per node period from the first IMU timestamp, an IMU factor
/// per consecutive pair, a range factor per ToA on its nearest keyframe
/// (ties to the earlier one), and priors on the first keyframe and stations.
GraphBuild build_graph(const std::vector<ImuSample>& imu, const std::vector<ToaMeasurement>& toa,
                       const PgoConfig& config);

struct LmOptions {
  int max_iters = 50;
  double initial_damping = 1e-4;
  double cost_tolerance = 1e-9;
  double step_tolerance = 1e-9;
};

enum class Termination { kCostTolerance, kStepTolerance, kMaxIterations, kNoProgress };

std::string_view termination_name(Termination t);

struct LmIteration {
  int iter = 0;
  double cost = 0.0;
  double damping = 0.0;
  bool accepted = false;
};

struct OptimizeReport {
  std::vector<LmIteration> iterations;  // entry 0 is the initial cost
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iteration_count = 0;
  Termination termination = Termination::kMaxIterations;
};

struct OptimizeResult {
  Values values;
  OptimizeReport report;
};

/// Levenberg-Marquardt with rotation retraction R <- R Exp(dtheta) and
/// additive Euclidean blocks. Only variables referenced by the graph move.
OptimizeResult optimize(const FactorGraph& graph, const Values& initial, const LmOptions& options = {});

/// Re-integrates IMU factors whose gyro-bias estimate left the linearization
/// point by more than `threshold` (max-norm). Accel bias enters the increments
/// linearly, so its first-order correction is already exact. Returns how many
/// were refreshed.
int refresh_imu_linearization(FactorGraph& graph, const Values& values, double threshold = 1e-3);

/// Replaces the oldest keyframe's factors by a Gaussian prior on its successor
/// (Schur complement, stations held fixed) and drops the keyframe from the graph.
void marginalize_oldest(FactorGraph& graph, const Values& values);

struct SlidingWindowOptions {
  int window = 100;
  LmOptions lm;
  bool final_batch = true;
  double bias_refresh_threshold = 1e-3;
};

struct PgoRun {
  std::vector<TimestampNs> keyframe_times;
  /// Newest keyframe after each incremental step.
  std::vector<KeyframeState> streamed;
  /// Full-batch values after the final pass (equal to the last estimates when final_batch is off).
  std::vector<KeyframeState> batch;
  std::vector<Vec3> stations;
  std::vector<double> step_ms;
  OptimizeReport final_report;
  std::vector<OptimizeReport> step_reports;
};

PgoRun run_sliding_window(const std::vector<ImuSample>& imu, const std::vector<ToaMeasurement>& toa,
                          const PgoConfig& config, const SlidingWindowOptions& options = {});

KeyframeState to_keyframe(const NavState& state);
TrajectoryPoint to_trajectory_point(TimestampNs t_ns, const KeyframeState& state);

}  // namespace toa_fusion
