#include "toa_fusion/toa_sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "toa_fusion/errors.hpp"

namespace toa_fusion {

namespace {

struct Moments {
  std::array<double, 5> mean;
  std::array<double, 5> std;
};

struct PresetRow {
  std::string_view sequence;
  ScenarioPreset preset;
  Moments moments;
};

// Per-station ToA range error statistics in meters, stations 1..5.
constexpr PresetRow kPresetTable[] = {
    {"V101", ScenarioPreset::kIndustrial5GHz, {{0.129, -0.045, 0.006, -0.081, -0.023}, {0.568, 0.81, 0.763, 0.872, 0.718}}},
    {"V101", ScenarioPreset::kIndoor28GHz, {{-0.024, -0.021, -0.059, 0.041, -0.06}, {0.344, 0.368, 0.352, 0.394, 0.369}}},
    {"V101", ScenarioPreset::kMmMagic78GHz, {{0.002, 0.01, -0.008, 0.003, -0.01}, {0.185, 0.171, 0.173, 0.159, 0.176}}},
    {"V102", ScenarioPreset::kIndustrial5GHz, {{0.16, -0.033, -0.135, -0.129, -0.156}, {0.645, 0.874, 0.722, 0.739, 0.677}}},
    {"V102", ScenarioPreset::kIndoor28GHz, {{-0.104, 0.104, 0.106, -0.122, -0.052}, {0.358, 0.39, 0.404, 0.367, 0.322}}},
    {"V102", ScenarioPreset::kMmMagic78GHz, {{0.037, -0.011, -0.018, 0.016, -0.046}, {0.174, 0.153, 0.154, 0.16, 0.193}}},
    {"V103", ScenarioPreset::kIndustrial5GHz, {{0.043, -0.065, 1.232, -0.066, -0.387}, {0.775, 0.784, 1.628, 0.772, 1.275}}},
    {"V103", ScenarioPreset::kIndoor28GHz, {{-0.042, 0.053, 0.008, -0.033, -0.022}, {0.353, 0.382, 0.387, 0.36, 0.369}}},
    {"V103", ScenarioPreset::kMmMagic78GHz, {{0.001, -0.011, 0.012, 0.0, -0.013}, {0.176, 0.166, 0.17, 0.18, 0.183}}},
    {"V201", ScenarioPreset::kIndustrial5GHz, {{0.059, 0.108, -0.182, -0.154, -0.27}, {0.751, 0.897, 0.592, 0.986, 0.79}}},
    {"V201", ScenarioPreset::kIndoor28GHz, {{0.025, -0.07, -0.045, 0.054, 0.12}, {0.364, 0.379, 0.392, 0.302, 0.367}}},
    {"V201", ScenarioPreset::kMmMagic78GHz, {{-0.012, 0.026, 0.015, -0.019, 0.015}, {0.164, 0.177, 0.163, 0.18, 0.192}}},
    {"V202", ScenarioPreset::kIndustrial5GHz, {{0.027, 0.141, 0.072, 0.082, -0.204}, {0.716, 0.674, 0.908, 0.933, 0.631}}},
    {"V202", ScenarioPreset::kIndoor28GHz, {{0.052, -0.053, -0.039, 0.012, 0.043}, {0.391, 0.348, 0.427, 0.359, 0.351}}},
    {"V202", ScenarioPreset::kMmMagic78GHz, {{-0.007, 0.007, -0.018, 0.013, 0.011}, {0.178, 0.168, 0.17, 0.19, 0.192}}},
    {"V203", ScenarioPreset::kIndustrial5GHz, {{0.067, -0.017, 0.273, -0.13, -0.045}, {0.754, 0.73, 1.343, 0.724, 0.684}}},
    {"V203", ScenarioPreset::kIndoor28GHz, {{0.009, -0.022, -0.046, 0.043, 0.02}, {0.376, 0.351, 0.317, 0.37, 0.358}}},
    {"V203", ScenarioPreset::kMmMagic78GHz, {{0.018, 0.017, 0.002, 0.004, -0.009}, {0.17, 0.181, 0.174, 0.178, 0.174}}},
};

}  // namespace

std::vector<BaseStation> default_base_stations() {
  return {
      {1, Vec3(-10.0, -7.0, 2.0)},
      {2, Vec3(7.0, 13.0, 3.0)},
      {3, Vec3(25.0, -35.0, 4.0)},
      {4, Vec3(-6.0, 9.0, 5.0)},
      {5, Vec3(-4.0, -14.0, 6.0)},
  };
}

std::vector<BaseStation> first_stations(const std::vector<BaseStation>& all, std::size_t count) {
  if (count > all.size()) {
    throw ConfigError("requested " + std::to_string(count) + " stations but only " + std::to_string(all.size()) +
                      " are configured");
  }
  return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(count)};
}

NoiseModel NoiseModel::noiseless(std::size_t num_stations, std::uint64_t seed) {
  return {std::vector<double>(num_stations, 0.0), std::vector<double>(num_stations, 0.0), seed};
}

std::string_view preset_name(ScenarioPreset preset) {
  switch (preset) {
    case ScenarioPreset::kIndustrial5GHz:
      return "industrial_5ghz";
    case ScenarioPreset::kIndoor28GHz:
      return "indoor_28ghz";
    case ScenarioPreset::kMmMagic78GHz:
      return "mmmagic_78ghz";
  }
  return "unknown";
}

ScenarioPreset parse_preset(std::string_view name) {
  for (auto p : {ScenarioPreset::kIndustrial5GHz, ScenarioPreset::kIndoor28GHz, ScenarioPreset::kMmMagic78GHz}) {
    if (preset_name(p) == name) return p;
  }
  throw ConfigError("unknown scenario preset '" + std::string(name) + "'");
}

NoiseModel preset_noise(ScenarioPreset preset, std::string_view sequence, std::uint64_t seed) {
  for (const auto& row : kPresetTable) {
    if (row.preset == preset && row.sequence == sequence) {
      NoiseModel model;
      model.mean.assign(row.moments.mean.begin(), row.moments.mean.end());
      model.std.assign(row.moments.std.begin(), row.moments.std.end());
      model.seed = seed;
      return model;
    }
  }
  throw ConfigError("no noise statistics for sequence '" + std::string(sequence) + "'");
}

double true_distance(const Vec3& position, const BaseStation& station) {
  return (position - station.position).norm();
}

Vec3 interpolate_position(const std::vector<GroundTruthPose>& gt, TimestampNs t_ns) {
  if (t_ns <= gt.front().t_ns) return gt.front().position;
  if (t_ns >= gt.back().t_ns) return gt.back().position;
  auto upper = std::upper_bound(gt.begin(), gt.end(), t_ns,
                                [](TimestampNs t, const GroundTruthPose& p) { return t < p.t_ns; });
  const auto& b = *upper;
  const auto& a = *(upper - 1);
  const double s = static_cast<double>(t_ns - a.t_ns) / static_cast<double>(b.t_ns - a.t_ns);
  return (1.0 - s) * a.position + s * b.position;
}

SimulationResult simulate(const std::vector<GroundTruthPose>& groundtruth, const std::vector<BaseStation>& stations,
                          const NoiseModel& model, double rate_hz) {
  if (groundtruth.empty()) {
    throw DataError(DataError::Kind::kEmptyTrajectory, "cannot simulate ToA on an empty trajectory");
  }
  if (!(rate_hz > 0.0)) {
    throw ConfigError("ToA rate must be positive");
  }
  if (model.mean.size() < stations.size() || model.std.size() < stations.size()) {
    throw ConfigError("noise model has fewer entries than configured stations");
  }
  for (std::size_t k = 0; k < stations.size(); ++k) {
    if (model.std[k] < 0.0) throw ConfigError("noise std must be non-negative");
  }

  const auto period = static_cast<TimestampNs>(std::llround(1e9 / rate_hz));
  std::mt19937_64 rng(model.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  SimulationResult result;
  for (TimestampNs t = groundtruth.front().t_ns; t <= groundtruth.back().t_ns; t += period) {
    const Vec3 p = interpolate_position(groundtruth, t);
    for (std::size_t k = 0; k < stations.size(); ++k) {
      double d = true_distance(p, stations[k]) + model.mean[k] + model.std[k] * normal(rng);
      if (d < kMinDistance) {
        d = kMinDistance;
        ++result.clamped;
      }
      result.measurements.push_back({t, stations[k].id, d});
    }
  }
  return result;
}

}  // namespace toa_fusion
