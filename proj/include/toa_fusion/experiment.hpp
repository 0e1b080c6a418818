#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "toa_fusion/dataset.hpp"
#include "toa_fusion/eskf.hpp"
#include "toa_fusion/metrics.hpp"
#include "toa_fusion/pgo.hpp"
#include "toa_fusion/synthetic.hpp"
#include "toa_fusion/toa_sim.hpp"

namespace toa_fusion {

enum class EstimatorChoice { kEskf, kPgo, kBoth };

std::string_view estimator_name(EstimatorChoice choice);
/// Accepts eskf, pgo, both. Throws ConfigError otherwise.
EstimatorChoice parse_estimator(std::string_view name);

struct ExperimentConfig {
  // [input]
  bool synthetic = true;  // otherwise EuRoC-style files
  std::filesystem::path imu_path;
  std::filesystem::path groundtruth_path;
  std::optional<std::filesystem::path> toa_path;  // skip simulation when given
  /// IMU pose in the ground-truth body frame; applied to file ground truth.
  Extrinsic extrinsic;
  SyntheticTrajectorySpec trajectory;

  // [stations]
  std::vector<BaseStation> stations = default_base_stations();
  int bs_count = 5;

  // [noise]
  ScenarioPreset preset = ScenarioPreset::kMmMagic78GHz;
  std::string sequence = "V101";
  std::vector<double> noise_mean;  // explicit model overrides the preset when non-empty
  std::vector<double> noise_std;
  double toa_rate_hz = 5.0;

  // [estimator]
  EstimatorChoice estimator = EstimatorChoice::kBoth;
  double range_sigma_floor = 0.01;
  ImuNoiseParams imu_noise;
  double prior_sigma_theta = 0.01;
  double prior_sigma_p = 0.1;
  double prior_sigma_v = 0.1;
  double prior_sigma_bias = 0.01;
  double station_sigma = 1e-3;
  double node_rate_hz = 10.0;
  SlidingWindowOptions window;

  // [experiment]
  std::uint64_t seed = 1;
  int num_seeds = 1;
  int workers = 1;
  std::filesystem::path out_dir = "out";

  // [sweep]
  std::vector<ScenarioPreset> sweep_presets = {ScenarioPreset::kIndustrial5GHz, ScenarioPreset::kIndoor28GHz,
                                               ScenarioPreset::kMmMagic78GHz};
  std::vector<int> sweep_bs_counts = {2, 3, 4, 5};

  bool explicit_noise() const { return !noise_std.empty(); }
  std::vector<std::uint64_t> seeds() const;
};

/// Reads the INI config; unknown keys and malformed values raise ConfigError.
ExperimentConfig load_config(const std::filesystem::path& path);
/// Checks cross-field invariants (ConfigError).
void validate(const ExperimentConfig& config);
/// Commented template holding every key at its default value.
std::string config_template();

struct SensorData {
  std::vector<ImuSample> imu;
  std::vector<GroundTruthPose> groundtruth;
};

/// Synthetic trajectory for a given seed, or the configured files.
SensorData load_sensor_data(const ExperimentConfig& config, std::uint64_t seed);

/// Noise model for the first `bs_count` stations.
NoiseModel noise_model(const ExperimentConfig& config, ScenarioPreset preset, int bs_count, std::uint64_t seed);

struct EstimatorOutput {
  EstimatorChoice estimator = EstimatorChoice::kEskf;  // kEskf or kPgo
  std::vector<TrajectoryPoint> trajectory;             // ESKF updates or PGO batch keyframes
  std::vector<TrajectoryPoint> streamed;               // PGO only: newest keyframe per step
  std::vector<LmIteration> cost_log;                   // PGO only: final pass
  std::vector<double> timing_ms;
  MetricsReport metrics;
};

struct RunOutput {
  std::vector<ToaMeasurement> toa;
  std::vector<EstimatorOutput> estimators;
};

/// One simulate -> estimate -> evaluate pass. Pure function of its arguments apart from timing.
RunOutput run_pipeline(const ExperimentConfig& config, const SensorData& data, ScenarioPreset preset, int bs_count,
                       std::uint64_t seed, EstimatorChoice estimator);

/// Writes one ToA file per (scenario, seed); returns the paths.
std::vector<std::filesystem::path> cmd_simulate(const ExperimentConfig& config);
/// Writes trajectories, cost log and metrics for the configured scenario and seed.
RunOutput cmd_run(const ExperimentConfig& config);

struct SweepRow {
  ScenarioPreset preset = ScenarioPreset::kMmMagic78GHz;
  int bs_count = 0;
  EstimatorChoice estimator = EstimatorChoice::kEskf;
  std::uint64_t seed = 0;
  MetricsReport metrics;
};

struct SweepResult {
  std::vector<SweepRow> runs;       // one per (scenario, BS count, estimator, seed)
  std::vector<SweepRow> aggregate;  // per-metric median over seeds; metrics.pairs holds the seed count
};

/// Median over seeds of every metric, one row per (scenario, BS count, estimator).
std::vector<SweepRow> aggregate_sweep(const std::vector<SweepRow>& runs);
/// Runs every (scenario, BS count, seed) combination on `workers` threads and
/// writes sweep.csv (aggregate) and sweep_runs.csv.
SweepResult cmd_sweep(const ExperimentConfig& config);
/// Aggregate rows carry the seed count (num_seeds) where per-run rows carry the seed.
std::string sweep_csv_header(bool aggregate);
std::string sweep_csv_row(const SweepRow& row, const std::string& sequence, bool aggregate);

/// Writes imu.csv and groundtruth.csv for the configured synthetic trajectory.
void cmd_gen_traj(const ExperimentConfig& config);

}  // namespace toa_fusion
