#include "toa_fusion/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "toa_fusion/errors.hpp"

namespace toa_fusion {

namespace {

using Kind = DataError::Kind;

std::string describe(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

/// Splits a line on commas and parses every field as a double. Returns false
/// on any field that is not a complete finite number.
bool parse_fields(std::string_view line, std::vector<double>& out) {
  out.clear();
  std::size_t start = 0;
  while (true) {
    std::size_t end = line.find(',', start);
    std::string_view field = line.substr(start, end == std::string_view::npos ? line.size() - start : end - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t')) field.remove_suffix(1);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (field.empty() || ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(value)) {
      return false;
    }
    out.push_back(value);
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return true;
}

bool parse_int64(std::string_view field, std::int64_t& value) {
  while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
  while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  return !field.empty() && ec == std::errc() && ptr == field.data() + field.size();
}

/// Timestamps are written as integers but some tools emit "1.4e18"; accept
/// both while refusing fractional nanoseconds.
bool leading_timestamp(std::string_view line, std::int64_t& t) {
  const std::size_t comma = line.find(',');
  std::string_view field = line.substr(0, comma);
  if (parse_int64(field, t)) return true;
  double d = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), d);
  if (ec != std::errc() || ptr != field.data() + field.size() || d != std::floor(d)) return false;
  t = static_cast<std::int64_t>(d);
  return true;
}

/// Visits every data line (header skipped, blank lines ignored) with its 1-based line number.
template <typename Fn>
void for_each_data_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) {
    throw DataError(Kind::kIoFailure, "cannot open " + path.string());
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) continue;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    fn(std::string_view(line), line_no);
  }
  if (in.bad()) {
    throw DataError(Kind::kIoFailure, "read failure on " + path.string());
  }
}

void check_monotonic(bool have_prev, std::int64_t prev, std::int64_t t, const std::filesystem::path& path,
                     std::size_t line_no) {
  if (have_prev && t <= prev) {
    throw DataError(Kind::kNonMonotonicTimestamp, "non-increasing timestamp at " + describe(path, line_no), line_no);
  }
}

[[noreturn]] void malformed(const std::filesystem::path& path, std::size_t line_no, const std::string& why) {
  throw DataError(Kind::kMalformedLine, "malformed line " + describe(path, line_no) + ": " + why, line_no);
}

void append_number(std::string& out, double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  out.append(buf, ptr);
}

void append_number(std::string& out, std::int64_t value) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  out.append(buf, ptr);
}

void append_row(std::string& out, std::int64_t t, std::initializer_list<double> values) {
  append_number(out, t);
  for (double v : values) {
    out.push_back(',');
    append_number(out, v);
  }
  out.push_back('\n');
}

}  // namespace

std::vector<ImuSample> load_imu(const std::filesystem::path& path) {
  std::vector<ImuSample> samples;
  std::vector<double> fields;
  for_each_data_line(path, [&](std::string_view line, std::size_t line_no) {
    std::int64_t t = 0;
    if (!parse_fields(line, fields) || !leading_timestamp(line, t)) malformed(path, line_no, "unparsable field");
    if (fields.size() != 7) malformed(path, line_no, "expected 7 columns");
    check_monotonic(!samples.empty(), samples.empty() ? 0 : samples.back().t_ns, t, path, line_no);
    samples.push_back({t, Vec3(fields[1], fields[2], fields[3]), Vec3(fields[4], fields[5], fields[6])});
  });
  return samples;
}

std::vector<GroundTruthPose> load_groundtruth(const std::filesystem::path& path) {
  std::vector<GroundTruthPose> poses;
  std::vector<double> fields;
  for_each_data_line(path, [&](std::string_view line, std::size_t line_no) {
    std::int64_t t = 0;
    if (!parse_fields(line, fields) || !leading_timestamp(line, t)) malformed(path, line_no, "unparsable field");
    if (fields.size() != 8 && fields.size() != 11 && fields.size() != 17) {
      malformed(path, line_no, "expected 8, 11 or 17 columns");
    }
    check_monotonic(!poses.empty(), poses.empty() ? 0 : poses.back().t_ns, t, path, line_no);
    // Disk order is w, x, y, z.
    const Eigen::Vector4d q(fields[5], fields[6], fields[7], fields[4]);
    if (std::abs(q.norm() - 1.0) > 1e-3) malformed(path, line_no, "quaternion is not unit norm");
    GroundTruthPose pose;
    pose.t_ns = t;
    pose.position = Vec3(fields[1], fields[2], fields[3]);
    pose.orientation = UnitQuaternion(q[0], q[1], q[2], q[3]);
    if (fields.size() >= 11) pose.velocity = Vec3(fields[8], fields[9], fields[10]);
    if (fields.size() == 17) {
      pose.gyro_bias = Vec3(fields[11], fields[12], fields[13]);
      pose.accel_bias = Vec3(fields[14], fields[15], fields[16]);
    }
    poses.push_back(pose);
  });
  return poses;
}

std::vector<ToaMeasurement> load_toa(const std::filesystem::path& path, int num_bs) {
  std::vector<ToaMeasurement> out;
  for_each_data_line(path, [&](std::string_view line, std::size_t line_no) {
    const std::size_t c1 = line.find(',');
    const std::size_t c2 = c1 == std::string_view::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string_view::npos || line.find(',', c2 + 1) != std::string_view::npos) {
      malformed(path, line_no, "expected 3 columns");
    }
    std::int64_t t = 0;
    std::int64_t id = 0;
    std::vector<double> dist;
    if (!leading_timestamp(line, t) || !parse_int64(line.substr(c1 + 1, c2 - c1 - 1), id) ||
        !parse_fields(line.substr(c2 + 1), dist)) {
      malformed(path, line_no, "unparsable field");
    }
    if (!(dist[0] > 0.0)) malformed(path, line_no, "distance must be positive");
    if (id < 1 || id > num_bs) {
      throw DataError(Kind::kUnknownBsId,
                      "unknown base station id " + std::to_string(id) + " at " + describe(path, line_no), line_no);
    }
    // Several stations share one tick, so only strict decrease is an error.
    if (!out.empty() && t < out.back().t_ns) {
      throw DataError(Kind::kNonMonotonicTimestamp, "decreasing timestamp at " + describe(path, line_no), line_no);
    }
    out.push_back({t, static_cast<int>(id), dist[0]});
  });
  return out;
}

void save_toa(const std::filesystem::path& path, const std::vector<ToaMeasurement>& measurements) {
  std::string out = "t_ns,bs_id,distance_m\n";
  out.reserve(out.size() + measurements.size() * 40);
  for (const auto& m : measurements) {
    append_number(out, m.t_ns);
    out.push_back(',');
    append_number(out, static_cast<std::int64_t>(m.bs_id));
    out.push_back(',');
    append_number(out, m.distance);
    out.push_back('\n');
  }
  write_file_atomic(path, out);
}

void save_imu(const std::filesystem::path& path, const std::vector<ImuSample>& samples) {
  std::string out =
      "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
      "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]\n";
  for (const auto& s : samples) {
    append_row(out, s.t_ns, {s.omega.x(), s.omega.y(), s.omega.z(), s.accel.x(), s.accel.y(), s.accel.z()});
  }
  write_file_atomic(path, out);
}

void save_groundtruth(const std::filesystem::path& path, const std::vector<GroundTruthPose>& poses) {
  std::string out =
      "#timestamp,p_x [m],p_y [m],p_z [m],q_w [],q_x [],q_y [],q_z [],v_x [m s^-1],v_y [m s^-1],v_z [m s^-1],"
      "b_w_x [rad s^-1],b_w_y [rad s^-1],b_w_z [rad s^-1],b_a_x [m s^-2],b_a_y [m s^-2],b_a_z [m s^-2]\n";
  for (const auto& p : poses) {
    const Vec3 v = p.velocity.value_or(Vec3::Zero());
    const Vec3 bg = p.gyro_bias.value_or(Vec3::Zero());
    const Vec3 ba = p.accel_bias.value_or(Vec3::Zero());
    const auto& q = p.orientation;
    append_row(out, p.t_ns,
               {p.position.x(), p.position.y(), p.position.z(), q.w(), q.x(), q.y(), q.z(), v.x(), v.y(), v.z(),
                bg.x(), bg.y(), bg.z(), ba.x(), ba.y(), ba.z()});
  }
  write_file_atomic(path, out);
}

void save_trajectory(const std::filesystem::path& path, const std::vector<TrajectoryPoint>& trajectory) {
  std::string out = "t_ns,px,py,pz,qw,qx,qy,qz,vx,vy,vz\n";
  for (const auto& p : trajectory) {
    const auto& q = p.orientation;
    append_row(out, p.t_ns,
               {p.position.x(), p.position.y(), p.position.z(), q.w(), q.x(), q.y(), q.z(), p.velocity.x(),
                p.velocity.y(), p.velocity.z()});
  }
  write_file_atomic(path, out);
}

std::vector<TrajectoryPoint> load_trajectory(const std::filesystem::path& path) {
  std::vector<TrajectoryPoint> out;
  std::vector<double> f;
  for_each_data_line(path, [&](std::string_view line, std::size_t line_no) {
    std::int64_t t = 0;
    if (!parse_fields(line, f) || !leading_timestamp(line, t)) malformed(path, line_no, "unparsable field");
    if (f.size() != 11) malformed(path, line_no, "expected 11 columns");
    check_monotonic(!out.empty(), out.empty() ? 0 : out.back().t_ns, t, path, line_no);
    out.push_back({t, Vec3(f[1], f[2], f[3]), UnitQuaternion(f[5], f[6], f[7], f[4]), Vec3(f[8], f[9], f[10])});
  });
  return out;
}

std::vector<GroundTruthPose> apply_extrinsic(const std::vector<GroundTruthPose>& poses, const Extrinsic& extrinsic) {
  std::vector<GroundTruthPose> out = poses;
  const UnitQuaternion q_ext = rot_to_quat(extrinsic.rotation);
  for (auto& p : out) {
    const Mat3 r = quat_to_rot(p.orientation);
    p.position = p.position + r * extrinsic.translation;
    p.orientation = p.orientation * q_ext;
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> associate_nearest(const std::vector<TimestampNs>& reference_ts,
                                                                   const std::vector<TimestampNs>& query_ts,
                                                                   TimestampNs max_gap) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (reference_ts.empty()) return pairs;
  std::size_t r = 0;
  for (std::size_t q = 0; q < query_ts.size(); ++q) {
    const TimestampNs t = query_ts[q];
    // Advance while the next reference is strictly closer; ties stay on the earlier one.
    while (r + 1 < reference_ts.size()) {
      const auto here = static_cast<unsigned long long>(std::llabs(reference_ts[r] - t));
      const auto next = static_cast<unsigned long long>(std::llabs(reference_ts[r + 1] - t));
      if (next < here) {
        ++r;
      } else {
        break;
      }
    }
    const auto gap = static_cast<unsigned long long>(std::llabs(reference_ts[r] - t));
    if (gap <= static_cast<unsigned long long>(max_gap)) {
      pairs.emplace_back(r, q);
    }
  }
  return pairs;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw DataError(Kind::kIoFailure, "cannot write " + tmp.string());
    }
    out << contents;
    out.flush();
    if (!out) {
      throw DataError(Kind::kIoFailure, "write failure on " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw DataError(Kind::kIoFailure, "cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

}  // namespace toa_fusion
