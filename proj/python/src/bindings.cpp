#include <optional>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "toa_fusion/errors.hpp"
#include "toa_fusion/experiment.hpp"
#include "toa_fusion/geometry.hpp"

namespace py = pybind11;
using namespace toa_fusion;

namespace {

using RowMatX3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using RowMatX4 = Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor>;
using TimeArray = py::array_t<std::int64_t>;

TimeArray to_time_array(const std::vector<TimestampNs>& t) {
  TimeArray out(static_cast<py::ssize_t>(t.size()));
  std::copy(t.begin(), t.end(), out.mutable_data());
  return out;
}

template <typename T, typename F>
RowMatX3 stack3(const std::vector<T>& items, F get) {
  RowMatX3 m(static_cast<Eigen::Index>(items.size()), 3);
  for (std::size_t i = 0; i < items.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = get(items[i]).transpose();
  return m;
}

template <typename T, typename F>
RowMatX4 stack_quat(const std::vector<T>& items, F get) {
  RowMatX4 m(static_cast<Eigen::Index>(items.size()), 4);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const UnitQuaternion& q = get(items[i]);
    m.row(static_cast<Eigen::Index>(i)) << q.w(), q.x(), q.y(), q.z();
  }
  return m;
}

py::dict trajectory_dict(const std::vector<TrajectoryPoint>& traj) {
  std::vector<TimestampNs> t;
  for (const auto& p : traj) t.push_back(p.t_ns);
  py::dict d;
  d["t_ns"] = to_time_array(t);
  d["position"] = stack3(traj, [](const TrajectoryPoint& p) { return p.position; });
  d["orientation_wxyz"] = stack_quat(traj, [](const TrajectoryPoint& p) -> const UnitQuaternion& {
    return p.orientation;
  });
  d["velocity"] = stack3(traj, [](const TrajectoryPoint& p) { return p.velocity; });
  return d;
}

py::dict metrics_dict(const MetricsReport& m) {
  py::dict d;
  d["ate_m"] = m.ate;
  d["e_x_m"] = m.e_x;
  d["e_y_m"] = m.e_y;
  d["e_z_m"] = m.e_z;
  d["rpe_t_m"] = m.rpe_t;
  d["rpe_r_deg"] = m.rpe_r;
  d["time_mean_ms"] = m.time_mean_ms;
  d["time_std_ms"] = m.time_std_ms;
  d["pairs"] = m.pairs;
  return d;
}

std::vector<GroundTruthPose> groundtruth_from(const TimeArray& t_ns, const RowMatX3& position) {
  if (t_ns.size() != position.rows()) throw ConfigError("t_ns and position lengths differ");
  std::vector<GroundTruthPose> gt(static_cast<std::size_t>(t_ns.size()));
  const auto t = t_ns.unchecked<1>();
  for (py::ssize_t i = 0; i < t_ns.size(); ++i) {
    gt[static_cast<std::size_t>(i)].t_ns = t(i);
    gt[static_cast<std::size_t>(i)].position = position.row(i).transpose();
  }
  return gt;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "ToA + IMU pose estimation: ESKF and sliding-window pose-graph optimization";

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  static py::exception<ConfigError> config_error(m, "ConfigError", base.ptr());
  static py::exception<DataError> data_error(m, "DataError", base.ptr());
  static py::exception<NumericalError> numerical_error(m, "NumericalError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      py::set_error(config_error, e.what());
    } catch (const DataError& e) {
      py::set_error(data_error, e.what());
    } catch (const NumericalError& e) {
      py::set_error(numerical_error, e.what());
    }
  });

  m.def("exp_so3", &exp_so3, py::arg("theta"), "Rotation matrix of a rotation vector.");
  m.def("log_so3", &log_so3, py::arg("rotation"), "Rotation vector of a rotation matrix.");

  m.def(
      "default_base_stations", [] { return stack3(default_base_stations(), [](const BaseStation& s) { return s.position; }); },
      "Positions of the five default base stations, shape (5, 3).");

  m.def(
      "preset_noise",
      [](const std::string& preset, const std::string& sequence) {
        const NoiseModel n = preset_noise(parse_preset(preset), sequence);
        return py::make_tuple(n.mean, n.std);
      },
      py::arg("preset"), py::arg("sequence") = "V101", "(mean, std) per station for a scenario preset.");

  m.def(
      "generate_trajectory",
      [](const std::string& kind, double duration_s, double speed_mps, double size_m, bool imu_noise, bool imu_bias,
         std::uint64_t seed) {
        SyntheticTrajectorySpec spec;
        spec.kind = parse_trajectory_kind(kind);
        spec.duration_s = duration_s;
        spec.speed_mps = speed_mps;
        spec.size_m = size_m;
        spec.imu_noise = imu_noise;
        spec.imu_bias = imu_bias;
        spec.seed = seed;
        const SyntheticData d = generate_synthetic_trajectory(spec);
        std::vector<TimestampNs> ti, tg;
        for (const auto& s : d.imu) ti.push_back(s.t_ns);
        for (const auto& g : d.groundtruth) tg.push_back(g.t_ns);
        py::dict out;
        out["imu_t_ns"] = to_time_array(ti);
        out["omega"] = stack3(d.imu, [](const ImuSample& s) { return s.omega; });
        out["accel"] = stack3(d.imu, [](const ImuSample& s) { return s.accel; });
        out["gt_t_ns"] = to_time_array(tg);
        out["position"] = stack3(d.groundtruth, [](const GroundTruthPose& g) { return g.position; });
        out["orientation_wxyz"] = stack_quat(d.groundtruth, [](const GroundTruthPose& g) -> const UnitQuaternion& {
          return g.orientation;
        });
        out["velocity"] = stack3(d.groundtruth, [](const GroundTruthPose& g) { return g.velocity.value_or(Vec3::Zero()); });
        return out;
      },
      py::arg("kind") = "circle", py::arg("duration_s") = 60.0, py::arg("speed_mps") = 1.0, py::arg("size_m") = 3.0,
      py::arg("imu_noise") = false, py::arg("imu_bias") = false, py::arg("seed") = 0,
      "Analytic synthetic trajectory: IMU at 200 Hz and ground truth at 100 Hz.");

  m.def(
      "simulate_toa",
      [](const TimeArray& t_ns, const RowMatX3& position, const std::string& preset, int bs_count,
         std::uint64_t seed, double rate_hz) {
        const auto stations = first_stations(default_base_stations(), static_cast<std::size_t>(bs_count));
        NoiseModel model = preset_noise(parse_preset(preset), "V101", seed);
        model.mean.resize(stations.size());
        model.std.resize(stations.size());
        const auto sim = simulate(groundtruth_from(t_ns, position), stations, model, rate_hz);
        std::vector<TimestampNs> t;
        py::array_t<int> ids(static_cast<py::ssize_t>(sim.measurements.size()));
        py::array_t<double> dist(static_cast<py::ssize_t>(sim.measurements.size()));
        for (std::size_t i = 0; i < sim.measurements.size(); ++i) {
          t.push_back(sim.measurements[i].t_ns);
          ids.mutable_data()[i] = sim.measurements[i].bs_id;
          dist.mutable_data()[i] = sim.measurements[i].distance;
        }
        return py::make_tuple(to_time_array(t), ids, dist);
      },
      py::arg("t_ns"), py::arg("position"), py::arg("preset") = "mmmagic_78ghz", py::arg("bs_count") = 5,
      py::arg("seed") = 0, py::arg("rate_hz") = 5.0,
      "Noisy ranges to the first bs_count default stations: (t_ns, bs_id, distance_m).");

  m.def(
      "ate",
      [](const RowMatX3& estimate, const RowMatX3& groundtruth) {
        if (estimate.rows() != groundtruth.rows()) throw ConfigError("estimate and ground truth lengths differ");
        std::vector<PosePair> pairs(static_cast<std::size_t>(estimate.rows()));
        for (Eigen::Index i = 0; i < estimate.rows(); ++i) {
          pairs[static_cast<std::size_t>(i)].p_est = estimate.row(i).transpose();
          pairs[static_cast<std::size_t>(i)].p_gt = groundtruth.row(i).transpose();
        }
        return ate(pairs);
      },
      py::arg("estimate"), py::arg("groundtruth"), "RMSE of position differences between matched rows.");

  m.def("config_template", &config_template, "Default INI configuration with every key.");

  m.def(
      "run",
      [](const std::optional<std::filesystem::path>& config, const std::optional<std::string>& estimator,
         std::optional<std::uint64_t> seed, std::optional<int> bs_count, const std::optional<std::string>& preset,
         const std::optional<std::string>& trajectory, std::optional<double> duration_s) {
        ExperimentConfig c = config ? load_config(*config) : ExperimentConfig{};
        if (estimator) c.estimator = parse_estimator(*estimator);
        if (seed) c.seed = *seed;
        if (bs_count) c.bs_count = *bs_count;
        if (preset) c.preset = parse_preset(*preset);
        if (trajectory) c.trajectory.kind = parse_trajectory_kind(*trajectory);
        if (duration_s) c.trajectory.duration_s = *duration_s;
        validate(c);
        RunOutput out;
        {
          py::gil_scoped_release release;
          const SensorData data = load_sensor_data(c, c.seed);
          out = run_pipeline(c, data, c.preset, c.bs_count, c.seed, c.estimator);
        }
        py::dict result;
        for (const auto& e : out.estimators) {
          py::dict d = trajectory_dict(e.trajectory);
          d["metrics"] = metrics_dict(e.metrics);
          result[py::str(std::string(estimator_name(e.estimator)))] = d;
        }
        return result;
      },
      py::arg("config") = py::none(), py::kw_only(), py::arg("estimator") = py::none(), py::arg("seed") = py::none(),
      py::arg("bs_count") = py::none(), py::arg("preset") = py::none(), py::arg("trajectory") = py::none(),
      py::arg("duration_s") = py::none(),
      "Simulate, estimate and evaluate one scenario; returns per-estimator trajectories and metrics.");
}
