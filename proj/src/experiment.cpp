#include "toa_fusion/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <Eigen/Geometry>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "toa_fusion/errors.hpp"

namespace toa_fusion {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    const std::string item = trim(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (!item.empty()) out.push_back(item);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) {
    throw ConfigError(fmt::format("{}: '{}' is not a number", key, text));
  }
  return v;
}

long long parse_int(const std::string& key, const std::string& text) {
  long long v = 0;
  const auto t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw ConfigError(fmt::format("{}: '{}' is not an integer", key, text));
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const auto t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, text));
}

std::vector<double> parse_doubles(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split(text, ',')) out.push_back(parse_double(key, item));
  return out;
}

Vec3 parse_vec3(const std::string& key, const std::string& text) {
  const auto v = parse_doubles(key, text);
  if (v.size() != 3) throw ConfigError(fmt::format("{}: expected three comma-separated values", key));
  return {v[0], v[1], v[2]};
}

/// Reads keys out of one section and records which were consumed.
class Section {
 public:
  Section(const pt::ptree& root, std::string name) : name_(std::move(name)) {
    if (auto child = root.get_child_optional(name_)) tree_ = *child;
  }

  template <typename F>
  void read(const std::string& key, F&& apply) {
    seen_.insert(key);
    if (auto v = tree_.get_optional<std::string>(key)) apply(name_ + "." + key, *v);
  }

  void reject_unknown() const {
    for (const auto& [key, value] : tree_) {
      if (!seen_.contains(key)) throw ConfigError(fmt::format("unknown key '{}.{}'", name_, key));
    }
  }

 private:
  std::string name_;
  pt::ptree tree_;
  std::set<std::string> seen_;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::filesystem::path toa_file_name(const ExperimentConfig& config, ScenarioPreset preset, std::uint64_t seed) {
  return config.out_dir / fmt::format("toa_{}_seed{}.csv", preset_name(preset), seed);
}

void write_cost_log(const std::filesystem::path& path, const std::vector<LmIteration>& log) {
  std::string out = "iter,cost,damping\n";
  for (const auto& it : log) out += fmt::format("{},{:.12g},{:.6g}\n", it.iter, it.cost, it.damping);
  write_file_atomic(path, out);
}

}  // namespace

std::string_view estimator_name(EstimatorChoice choice) {
  switch (choice) {
    case EstimatorChoice::kEskf:
      return "eskf";
    case EstimatorChoice::kPgo:
      return "pgo";
    case EstimatorChoice::kBoth:
      return "both";
  }
  return "unknown";
}

EstimatorChoice parse_estimator(std::string_view name) {
  if (name == "eskf") return EstimatorChoice::kEskf;
  if (name == "pgo") return EstimatorChoice::kPgo;
  if (name == "both") return EstimatorChoice::kBoth;
  throw ConfigError("unknown estimator '" + std::string(name) + "' (expected eskf, pgo or both)");
}

std::vector<std::uint64_t> ExperimentConfig::seeds() const {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < num_seeds; ++i) out.push_back(seed + static_cast<std::uint64_t>(i));
  return out;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  pt::ptree root;
  try {
    pt::read_ini(path.string(), root);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  static const std::set<std::string> kSections = {"input", "trajectory", "stations", "noise",
                                                  "estimator", "experiment", "sweep"};
  for (const auto& [name, child] : root) {
    if (!kSections.contains(name)) throw ConfigError("unknown config section [" + name + "]");
  }

  ExperimentConfig c;
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(trim(p));
    return fp.is_absolute() ? fp : base / fp;
  };

  Section input(root, "input");
  input.read("source", [&](const std::string& k, const std::string& v) {
    const auto t = trim(v);
    if (t == "synthetic") {
      c.synthetic = true;
    } else if (t == "files") {
      c.synthetic = false;
    } else {
      throw ConfigError(k + ": expected synthetic or files");
    }
  });
  input.read("imu", [&](const std::string&, const std::string& v) { c.imu_path = resolve(v); });
  input.read("groundtruth", [&](const std::string&, const std::string& v) { c.groundtruth_path = resolve(v); });
  input.read("toa", [&](const std::string&, const std::string& v) {
    if (!trim(v).empty()) c.toa_path = resolve(v);
  });
  input.read("extrinsic_rotation", [&](const std::string& k, const std::string& v) {
    const auto q = parse_doubles(k, v);
    if (q.size() != 4) throw ConfigError(k + ": expected qw,qx,qy,qz");
    const Eigen::Quaterniond e(q[0], q[1], q[2], q[3]);
    if (std::abs(e.norm() - 1.0) > 1e-6) throw ConfigError(k + ": quaternion is not unit norm");
    c.extrinsic.rotation = e.toRotationMatrix();
  });
  input.read("extrinsic_translation",
             [&](const std::string& k, const std::string& v) { c.extrinsic.translation = parse_vec3(k, v); });
  input.reject_unknown();

  auto& tr = c.trajectory;
  Section traj(root, "trajectory");
  traj.read("kind", [&](const std::string&, const std::string& v) { tr.kind = parse_trajectory_kind(trim(v)); });
  traj.read("duration_s", [&](const std::string& k, const std::string& v) { tr.duration_s = parse_double(k, v); });
  traj.read("speed_mps", [&](const std::string& k, const std::string& v) { tr.speed_mps = parse_double(k, v); });
  traj.read("size_m", [&](const std::string& k, const std::string& v) { tr.size_m = parse_double(k, v); });
  traj.read("center", [&](const std::string& k, const std::string& v) { tr.center = parse_vec3(k, v); });
  traj.read("imu_rate_hz", [&](const std::string& k, const std::string& v) { tr.imu_rate_hz = parse_double(k, v); });
  traj.read("groundtruth_rate_hz",
            [&](const std::string& k, const std::string& v) { tr.groundtruth_rate_hz = parse_double(k, v); });
  traj.read("tilt_amplitude_rad",
            [&](const std::string& k, const std::string& v) { tr.tilt_amplitude_rad = parse_double(k, v); });
  traj.read("vertical_amplitude_m",
            [&](const std::string& k, const std::string& v) { tr.vertical_amplitude_m = parse_double(k, v); });
  traj.read("imu_noise", [&](const std::string& k, const std::string& v) { tr.imu_noise = parse_bool(k, v); });
  traj.read("imu_bias", [&](const std::string& k, const std::string& v) { tr.imu_bias = parse_bool(k, v); });
  traj.read("initial_gyro_bias",
            [&](const std::string& k, const std::string& v) { tr.initial_gyro_bias = parse_double(k, v); });
  traj.read("initial_accel_bias",
            [&](const std::string& k, const std::string& v) { tr.initial_accel_bias = parse_double(k, v); });
  traj.reject_unknown();

  Section st(root, "stations");
  st.read("positions", [&](const std::string& k, const std::string& v) {
    c.stations.clear();
    for (const auto& item : split(v, ';')) {
      c.stations.push_back({static_cast<int>(c.stations.size()) + 1, parse_vec3(k, item)});
    }
  });
  st.read("count", [&](const std::string& k, const std::string& v) { c.bs_count = static_cast<int>(parse_int(k, v)); });
  st.reject_unknown();

  Section noise(root, "noise");
  noise.read("preset", [&](const std::string&, const std::string& v) { c.preset = parse_preset(trim(v)); });
  noise.read("sequence", [&](const std::string&, const std::string& v) { c.sequence = trim(v); });
  noise.read("mean", [&](const std::string& k, const std::string& v) { c.noise_mean = parse_doubles(k, v); });
  noise.read("std", [&](const std::string& k, const std::string& v) { c.noise_std = parse_doubles(k, v); });
  noise.read("toa_rate_hz", [&](const std::string& k, const std::string& v) { c.toa_rate_hz = parse_double(k, v); });
  noise.reject_unknown();

  Section est(root, "estimator");
  est.read("type", [&](const std::string&, const std::string& v) { c.estimator = parse_estimator(trim(v)); });
  est.read("range_sigma_floor",
           [&](const std::string& k, const std::string& v) { c.range_sigma_floor = parse_double(k, v); });
  est.read("sigma_g", [&](const std::string& k, const std::string& v) { c.imu_noise.sigma_g = parse_double(k, v); });
  est.read("sigma_a", [&](const std::string& k, const std::string& v) { c.imu_noise.sigma_a = parse_double(k, v); });
  est.read("sigma_wg", [&](const std::string& k, const std::string& v) { c.imu_noise.sigma_wg = parse_double(k, v); });
  est.read("sigma_wa", [&](const std::string& k, const std::string& v) { c.imu_noise.sigma_wa = parse_double(k, v); });
  est.read("prior_sigma_theta",
           [&](const std::string& k, const std::string& v) { c.prior_sigma_theta = parse_double(k, v); });
  est.read("prior_sigma_p", [&](const std::string& k, const std::string& v) { c.prior_sigma_p = parse_double(k, v); });
  est.read("prior_sigma_v", [&](const std::string& k, const std::string& v) { c.prior_sigma_v = parse_double(k, v); });
  est.read("prior_sigma_bias",
           [&](const std::string& k, const std::string& v) { c.prior_sigma_bias = parse_double(k, v); });
  est.read("station_sigma", [&](const std::string& k, const std::string& v) { c.station_sigma = parse_double(k, v); });
  est.read("node_rate_hz", [&](const std::string& k, const std::string& v) { c.node_rate_hz = parse_double(k, v); });
  est.read("window", [&](const std::string& k, const std::string& v) {
    c.window.window = static_cast<int>(parse_int(k, v));
  });
  est.read("final_batch", [&](const std::string& k, const std::string& v) { c.window.final_batch = parse_bool(k, v); });
  est.read("max_iters", [&](const std::string& k, const std::string& v) {
    c.window.lm.max_iters = static_cast<int>(parse_int(k, v));
  });
  est.read("initial_damping",
           [&](const std::string& k, const std::string& v) { c.window.lm.initial_damping = parse_double(k, v); });
  est.read("cost_tolerance",
           [&](const std::string& k, const std::string& v) { c.window.lm.cost_tolerance = parse_double(k, v); });
  est.read("step_tolerance",
           [&](const std::string& k, const std::string& v) { c.window.lm.step_tolerance = parse_double(k, v); });
  est.reject_unknown();

  Section ex(root, "experiment");
  ex.read("seed", [&](const std::string& k, const std::string& v) {
    const auto s = parse_int(k, v);
    if (s < 0) throw ConfigError(k + " must be non-negative");
    c.seed = static_cast<std::uint64_t>(s);
  });
  ex.read("num_seeds", [&](const std::string& k, const std::string& v) { c.num_seeds = static_cast<int>(parse_int(k, v)); });
  ex.read("workers", [&](const std::string& k, const std::string& v) { c.workers = static_cast<int>(parse_int(k, v)); });
  ex.read("out_dir", [&](const std::string&, const std::string& v) { c.out_dir = resolve(v); });
  ex.reject_unknown();

  Section sw(root, "sweep");
  sw.read("presets", [&](const std::string&, const std::string& v) {
    c.sweep_presets.clear();
    for (const auto& item : split(v, ',')) c.sweep_presets.push_back(parse_preset(item));
  });
  sw.read("bs_counts", [&](const std::string& k, const std::string& v) {
    c.sweep_bs_counts.clear();
    for (const auto& item : split(v, ',')) c.sweep_bs_counts.push_back(static_cast<int>(parse_int(k, item)));
  });
  sw.reject_unknown();

  validate(c);
  return c;
}

void validate(const ExperimentConfig& c) {
  const int k = static_cast<int>(c.stations.size());
  auto check_count = [&](int n) {
    if (n < 2 || n > k) throw ConfigError(fmt::format("BS count {} outside [2, {}]", n, k));
  };
  check_count(c.bs_count);
  for (int n : c.sweep_bs_counts) check_count(n);
  if (c.sweep_presets.empty()) throw ConfigError("sweep needs at least one preset");
  if (c.explicit_noise()) {
    if (c.noise_std.size() != c.stations.size()) throw ConfigError("noise.std needs one entry per station");
    if (!c.noise_mean.empty() && c.noise_mean.size() != c.stations.size()) {
      throw ConfigError("noise.mean needs one entry per station");
    }
    for (double s : c.noise_std) {
      if (s < 0.0) throw ConfigError("noise.std entries must be non-negative");
    }
  } else if (!c.noise_mean.empty()) {
    throw ConfigError("noise.mean given without noise.std");
  } else if (c.stations.size() > 5) {
    throw ConfigError("presets cover five stations; give noise.mean/noise.std for more");
  }
  if (!(c.toa_rate_hz > 0.0)) throw ConfigError("noise.toa_rate_hz must be positive");
  if (!(c.range_sigma_floor > 0.0)) throw ConfigError("estimator.range_sigma_floor must be positive");
  if (!(c.node_rate_hz > 0.0)) throw ConfigError("estimator.node_rate_hz must be positive");
  if (c.window.window < 2) throw ConfigError("estimator.window must be at least 2");
  if (c.window.lm.max_iters < 1) throw ConfigError("estimator.max_iters must be positive");
  if (c.num_seeds < 1) throw ConfigError("experiment.num_seeds must be positive");
  if (c.workers < 1) throw ConfigError("experiment.workers must be positive");
  if (!c.synthetic && (c.imu_path.empty() || c.groundtruth_path.empty())) {
    throw ConfigError("input.source = files needs input.imu and input.groundtruth");
  }
}

std::string config_template() {
  const ExperimentConfig d;
  const auto& t = d.trajectory;
  std::string stations;
  for (const auto& s : d.stations) {
    stations += fmt::format("{}{},{},{}", stations.empty() ? "" : "; ", s.position.x(), s.position.y(), s.position.z());
  }
  return fmt::format(
      R"(; toa-fusion experiment configuration. Every key is shown at its default.
; Relative paths resolve against this file's directory.

[input]
; synthetic: generate IMU and ground truth from [trajectory]; files: read imu/groundtruth below
source = synthetic
; EuRoC imu0/data.csv layout (t_ns, w_xyz, a_xyz)
imu =
; EuRoC ground truth (t_ns, p_xyz, q_wxyz[, v_xyz, b_g, b_a])
groundtruth =
; optional pre-simulated ToA file (t_ns,bs_id,distance_m); empty = simulate
toa =
; IMU pose in the ground-truth body frame, applied to file ground truth
extrinsic_rotation = 1,0,0,0
extrinsic_translation = 0,0,0

[trajectory]
; circle | figure_eight | hover_then_dash
kind = {}
duration_s = {}
speed_mps = {}
; circle radius or figure-eight half-width
size_m = {}
center = {},{},{}
imu_rate_hz = {}
groundtruth_rate_hz = {}
tilt_amplitude_rad = {}
vertical_amplitude_m = {}
imu_noise = {}
imu_bias = {}
initial_gyro_bias = {}
initial_accel_bias = {}

[stations]
; x,y,z per station separated by ';' (ids are 1-based in this order)
positions = {}
; subsets always take the first n stations
count = {}

[noise]
; industrial_5ghz | indoor_28ghz | mmmagic_78ghz
preset = {}
; EuRoC Vicon-room sequence whose moments the preset uses (V101..V203)
sequence = {}
; explicit per-station range error moments override the preset when std is set
mean =
std =
toa_rate_hz = {}

[estimator]
; eskf | pgo | both
type = {}
; measurement sigma = max(noise std, floor)
range_sigma_floor = {}
sigma_g = {}
sigma_a = {}
sigma_wg = {}
sigma_wa = {}
prior_sigma_theta = {}
prior_sigma_p = {}
prior_sigma_v = {}
prior_sigma_bias = {}
station_sigma = {}
node_rate_hz = {}
window = {}
final_batch = {}
max_iters = {}
initial_damping = {}
cost_tolerance = {}
step_tolerance = {}

[experiment]
seed = {}
num_seeds = {}
workers = {}
out_dir = {}

[sweep]
presets = industrial_5ghz,indoor_28ghz,mmmagic_78ghz
bs_counts = 2,3,4,5
)",
      trajectory_kind_name(t.kind), t.duration_s, t.speed_mps, t.size_m, t.center.x(), t.center.y(), t.center.z(),
      t.imu_rate_hz, t.groundtruth_rate_hz, t.tilt_amplitude_rad, t.vertical_amplitude_m, t.imu_noise, t.imu_bias,
      t.initial_gyro_bias, t.initial_accel_bias, stations, d.bs_count, preset_name(d.preset), d.sequence,
      d.toa_rate_hz, estimator_name(d.estimator), d.range_sigma_floor, d.imu_noise.sigma_g, d.imu_noise.sigma_a,
      d.imu_noise.sigma_wg, d.imu_noise.sigma_wa, d.prior_sigma_theta, d.prior_sigma_p, d.prior_sigma_v,
      d.prior_sigma_bias, d.station_sigma, d.node_rate_hz, d.window.window, d.window.final_batch, d.window.lm.max_iters,
      d.window.lm.initial_damping, d.window.lm.cost_tolerance, d.window.lm.step_tolerance, d.seed, d.num_seeds,
      d.workers, d.out_dir.string());
}

SensorData load_sensor_data(const ExperimentConfig& config, std::uint64_t seed) {
  if (config.synthetic) {
    SyntheticTrajectorySpec spec = config.trajectory;
    spec.noise = config.imu_noise;
    // Separate stream from the ToA noise of the same seed.
    spec.seed = seed ^ 0x9E3779B97F4A7C15ULL;
    SyntheticData d = generate_synthetic_trajectory(spec);
    return {std::move(d.imu), std::move(d.groundtruth)};
  }
  SensorData d{load_imu(config.imu_path), apply_extrinsic(load_groundtruth(config.groundtruth_path), config.extrinsic)};
  if (d.groundtruth.empty()) throw DataError(DataError::Kind::kEmptyTrajectory, "ground truth is empty");
  // Keep the IMU stream inside the ground-truth span so both estimators start from a known pose.
  const TimestampNs t0 = d.groundtruth.front().t_ns;
  const TimestampNs t1 = d.groundtruth.back().t_ns;
  std::erase_if(d.imu, [&](const ImuSample& s) { return s.t_ns < t0 || s.t_ns > t1; });
  if (d.imu.size() < 2) throw DataError(DataError::Kind::kEmptyInput, "IMU does not overlap the ground truth");
  return d;
}

NoiseModel noise_model(const ExperimentConfig& config, ScenarioPreset preset, int bs_count, std::uint64_t seed) {
  NoiseModel m;
  if (config.explicit_noise()) {
    m.std = config.noise_std;
    m.mean = config.noise_mean.empty() ? std::vector<double>(m.std.size(), 0.0) : config.noise_mean;
    m.seed = seed;
  } else {
    m = preset_noise(preset, config.sequence, seed);
  }
  m.mean.resize(static_cast<std::size_t>(bs_count));
  m.std.resize(static_cast<std::size_t>(bs_count));
  return m;
}

RunOutput run_pipeline(const ExperimentConfig& config, const SensorData& data, ScenarioPreset preset, int bs_count,
                       std::uint64_t seed, EstimatorChoice estimator) {
  const auto stations = first_stations(config.stations, static_cast<std::size_t>(bs_count));
  const NoiseModel model = noise_model(config, preset, bs_count, seed);

  RunOutput out;
  if (config.toa_path) {
    out.toa = load_toa(*config.toa_path, static_cast<int>(config.stations.size()));
    std::erase_if(out.toa, [&](const ToaMeasurement& m) { return m.bs_id > bs_count; });
  } else {
    out.toa = simulate(data.groundtruth, stations, model, config.toa_rate_hz).measurements;
  }

  std::vector<double> sigma;
  for (double s : model.std) sigma.push_back(std::max(s, config.range_sigma_floor));
  NavState x0 = nav_state_from(data.groundtruth.front());
  x0.b_g.setZero();
  x0.b_a.setZero();

  if (estimator != EstimatorChoice::kPgo) {
    FilterConfig fc;
    fc.initial_state = x0;
    fc.imu_noise = config.imu_noise;
    fc.stations = stations;
    fc.range_sigma = sigma;
    const FilterRun run = run_filter(data.imu, out.toa, fc);
    EstimatorOutput e;
    e.estimator = EstimatorChoice::kEskf;
    for (const auto& o : run.outputs) e.trajectory.push_back({o.t_ns, o.state.p, o.state.q, o.state.v});
    e.timing_ms = run.cycle_ms;
    e.metrics = evaluate(match_trajectory(e.trajectory, data.groundtruth), e.timing_ms);
    out.estimators.push_back(std::move(e));
  }
  if (estimator != EstimatorChoice::kEskf) {
    PgoConfig pc;
    pc.initial_state = x0;
    pc.prior_sigma_theta = config.prior_sigma_theta;
    pc.prior_sigma_p = config.prior_sigma_p;
    pc.prior_sigma_v = config.prior_sigma_v;
    pc.prior_sigma_bias = config.prior_sigma_bias;
    pc.imu_noise = config.imu_noise;
    pc.stations = stations;
    pc.range_sigma = sigma;
    pc.station_sigma = config.station_sigma;
    pc.node_rate_hz = config.node_rate_hz;
    const PgoRun run = run_sliding_window(data.imu, out.toa, pc, config.window);
    EstimatorOutput e;
    e.estimator = EstimatorChoice::kPgo;
    for (std::size_t k = 0; k < run.batch.size(); ++k) {
      e.trajectory.push_back(to_trajectory_point(run.keyframe_times[k], run.batch[k]));
      e.streamed.push_back(to_trajectory_point(run.keyframe_times[k], run.streamed[k]));
    }
    e.cost_log = run.final_report.iterations;
    e.timing_ms = run.step_ms;
    e.metrics = evaluate(match_trajectory(e.trajectory, data.groundtruth), e.timing_ms);
    out.estimators.push_back(std::move(e));
  }
  return out;
}

std::vector<std::filesystem::path> cmd_simulate(const ExperimentConfig& config) {
  std::filesystem::create_directories(config.out_dir);
  std::vector<std::filesystem::path> written;
  for (std::uint64_t seed : config.seeds()) {
    const SensorData data = load_sensor_data(config, seed);
    const auto stations = first_stations(config.stations, static_cast<std::size_t>(config.bs_count));
    const NoiseModel model = noise_model(config, config.preset, config.bs_count, seed);
    const SimulationResult sim = simulate(data.groundtruth, stations, model, config.toa_rate_hz);
    const auto path = toa_file_name(config, config.preset, seed);
    save_toa(path, sim.measurements);
    written.push_back(path);
  }
  return written;
}

RunOutput cmd_run(const ExperimentConfig& config) {
  std::filesystem::create_directories(config.out_dir);
  const SensorData data = load_sensor_data(config, config.seed);
  RunOutput out = run_pipeline(config, data, config.preset, config.bs_count, config.seed, config.estimator);

  std::string text;
  std::string csv = "estimator," + MetricsReport::csv_header() + "\n";
  for (const auto& e : out.estimators) {
    const std::string name(estimator_name(e.estimator));
    save_trajectory(config.out_dir / (name + "_trajectory.csv"), e.trajectory);
    if (e.estimator == EstimatorChoice::kPgo) {
      save_trajectory(config.out_dir / "pgo_streamed_trajectory.csv", e.streamed);
      write_cost_log(config.out_dir / "pgo_cost_log.csv", e.cost_log);
    }
    text += "[" + name + "]\n" + e.metrics.to_text();
    if (e.estimator == EstimatorChoice::kPgo) text += "ate_source=batch\n";
    text += "\n";
    csv += name + "," + e.metrics.csv_row() + "\n";
  }
  write_file_atomic(config.out_dir / "metrics.txt", text);
  write_file_atomic(config.out_dir / "metrics.csv", csv);
  return out;
}

std::vector<SweepRow> aggregate_sweep(const std::vector<SweepRow>& runs) {
  using Key = std::tuple<int, int, int>;
  std::map<Key, std::vector<const SweepRow*>> groups;
  std::vector<Key> order;
  for (const auto& r : runs) {
    const Key key{static_cast<int>(r.preset), r.bs_count, static_cast<int>(r.estimator)};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(&r);
  }
  std::vector<SweepRow> out;
  for (const auto& key : order) {
    const auto& g = groups[key];
    auto med = [&](double MetricsReport::*field) {
      std::vector<double> v;
      for (const auto* r : g) v.push_back(r->metrics.*field);
      return median(v);
    };
    SweepRow row = *g.front();
    row.seed = 0;
    row.metrics.ate = med(&MetricsReport::ate);
    row.metrics.e_x = med(&MetricsReport::e_x);
    row.metrics.e_y = med(&MetricsReport::e_y);
    row.metrics.e_z = med(&MetricsReport::e_z);
    row.metrics.rpe_t = med(&MetricsReport::rpe_t);
    row.metrics.rpe_r = med(&MetricsReport::rpe_r);
    row.metrics.time_mean_ms = med(&MetricsReport::time_mean_ms);
    row.metrics.time_std_ms = med(&MetricsReport::time_std_ms);
    row.metrics.pairs = g.size();  // number of seeds aggregated
    out.push_back(row);
  }
  return out;
}

std::string sweep_csv_header(bool aggregate) {
  return std::string("dataset,scenario,approach,bs_num,") + (aggregate ? "num_seeds," : "seed,") +
         MetricsReport::csv_header();
}

std::string sweep_csv_row(const SweepRow& row, const std::string& sequence, bool aggregate) {
  return fmt::format("{},{},{},{},{},{}", sequence, preset_name(row.preset), estimator_name(row.estimator),
                     row.bs_count, aggregate ? row.metrics.pairs : row.seed, row.metrics.csv_row());
}

SweepResult cmd_sweep(const ExperimentConfig& config) {
  std::filesystem::create_directories(config.out_dir);
  struct Job {
    ScenarioPreset preset;
    int bs_count;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (auto preset : config.sweep_presets) {
    for (int n : config.sweep_bs_counts) {
      for (auto seed : config.seeds()) jobs.push_back({preset, n, seed});
    }
  }

  std::vector<RunOutput> results(jobs.size());
  std::map<std::uint64_t, SensorData> data;
  for (auto seed : config.seeds()) data.emplace(seed, load_sensor_data(config, seed));

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        const Job& j = jobs[i];
        results[i] = run_pipeline(config, data.at(j.seed), j.preset, j.bs_count, j.seed, config.estimator);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const auto n_threads = static_cast<std::size_t>(std::max(1, config.workers));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < std::min(n_threads, jobs.size()); ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);

  SweepResult sweep;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    for (const auto& e : results[i].estimators) {
      sweep.runs.push_back({jobs[i].preset, jobs[i].bs_count, e.estimator, jobs[i].seed, e.metrics});
    }
  }
  // Group by estimator first so the aggregate reads like the paper's tables.
  std::vector<SweepRow> ordered;
  for (auto est : {EstimatorChoice::kPgo, EstimatorChoice::kEskf}) {
    for (const auto& r : sweep.runs) {
      if (r.estimator == est) ordered.push_back(r);
    }
  }
  sweep.aggregate = aggregate_sweep(ordered);

  std::string runs_csv = sweep_csv_header(false) + "\n";
  for (const auto& r : sweep.runs) runs_csv += sweep_csv_row(r, config.sequence, false) + "\n";
  std::string agg_csv = sweep_csv_header(true) + "\n";
  for (const auto& r : sweep.aggregate) agg_csv += sweep_csv_row(r, config.sequence, true) + "\n";
  write_file_atomic(config.out_dir / "sweep_runs.csv", runs_csv);
  write_file_atomic(config.out_dir / "sweep.csv", agg_csv);
  return sweep;
}

void cmd_gen_traj(const ExperimentConfig& config) {
  if (!config.synthetic) throw ConfigError("gen-traj needs input.source = synthetic");
  std::filesystem::create_directories(config.out_dir);
  const SensorData data = load_sensor_data(config, config.seed);
  save_imu(config.out_dir / "imu.csv", data.imu);
  save_groundtruth(config.out_dir / "groundtruth.csv", data.groundtruth);
}

}  // namespace toa_fusion
