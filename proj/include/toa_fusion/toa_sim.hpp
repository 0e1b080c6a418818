#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "toa_fusion/dataset.hpp"

namespace toa_fusion {

struct BaseStation {
  int id = 0;  // 1-based, matches ToaMeasurement::bs_id
  Vec3 position = Vec3::Zero();
};

/// The five stations placed in the Vicon-room frame.
std::vector<BaseStation> default_base_stations();

/// First `count` stations of `all`, preserving order.
std::vector<BaseStation> first_stations(const std::vector<BaseStation>& all, std::size_t count);

/// Gaussian range error with a per-station bias.
struct NoiseModel {
  std::vector<double> mean;  // m, one per station
  std::vector<double> std;   // m, one per station
  std::uint64_t seed = 0;

  static NoiseModel noiseless(std::size_t num_stations, std::uint64_t seed = 0);
};

enum class ScenarioPreset { kIndustrial5GHz, kIndoor28GHz, kMmMagic78GHz };

std::string_view preset_name(ScenarioPreset preset);
/// Accepts industrial_5ghz, indoor_28ghz, mmmagic_78ghz. Throws ConfigError otherwise.
ScenarioPreset parse_preset(std::string_view name);

/// Range-error moments for one EuRoC Vicon-room sequence (V101..V203), five stations.
NoiseModel preset_noise(ScenarioPreset preset, std::string_view sequence = "V101", std::uint64_t seed = 0);

double true_distance(const Vec3& position, const BaseStation& station);

struct SimulationResult {
  std::vector<ToaMeasurement> measurements;
  std::size_t clamped = 0;  // noisy ranges that fell below kMinDistance
};

inline constexpr double kMinDistance = 1e-6;

/// One measurement per station per tick; ticks every round(1e9 / rate_hz) ns
/// from the first ground-truth timestamp. Positions are linearly interpolated.
SimulationResult simulate(const std::vector<GroundTruthPose>& groundtruth, const std::vector<BaseStation>& stations,
                          const NoiseModel& model, double rate_hz = 5.0);

/// Position at t_ns by linear interpolation (clamped to the sequence ends).
Vec3 interpolate_position(const std::vector<GroundTruthPose>& groundtruth, TimestampNs t_ns);

}  // namespace toa_fusion
