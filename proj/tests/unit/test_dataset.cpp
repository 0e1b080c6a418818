#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "toa_fusion/dataset.hpp"
#include "toa_fusion/errors.hpp"

using namespace toa_fusion;
using toa_fusion::tu::TempDir;
namespace fs = std::filesystem;

namespace {

std::size_t data_error_line(const std::function<void()>& f, DataError::Kind expected) {
  try {
    f();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), expected) << e.what();
    return e.line();
  }
  ADD_FAILURE() << "no DataError thrown";
  return 0;
}

const char* kImuHeader = "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
                         "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]\n";

}  // namespace

TEST(LoadImu, HeaderOnlyIsEmpty) {
  TempDir dir;
  EXPECT_TRUE(load_imu(dir.write("imu.csv", kImuHeader)).empty());
}

TEST(LoadImu, EchoesRow) {
  TempDir dir;
  const auto s = load_imu(dir.write("imu.csv", std::string(kImuHeader) + "100,0.1,0.2,0.3,9.8,0.0,0.1\r\n"));
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].t_ns, 100);
  EXPECT_EQ(s[0].omega, Vec3(0.1, 0.2, 0.3));
  EXPECT_EQ(s[0].accel, Vec3(9.8, 0.0, 0.1));
}

TEST(LoadImu, Errors) {
  TempDir dir;
  const auto bad_order = dir.write("a.csv", std::string(kImuHeader) + "200,0,0,0,0,0,0\n100,0,0,0,0,0,0\n");
  EXPECT_EQ(data_error_line([&] { load_imu(bad_order); }, DataError::Kind::kNonMonotonicTimestamp), 3u);
  const auto dup = dir.write("d.csv", std::string(kImuHeader) + "200,0,0,0,0,0,0\n200,0,0,0,0,0,0\n");
  EXPECT_EQ(data_error_line([&] { load_imu(dup); }, DataError::Kind::kNonMonotonicTimestamp), 3u);
  const auto arity = dir.write("b.csv", std::string(kImuHeader) + "100,0,0,0,0,0\n");
  EXPECT_EQ(data_error_line([&] { load_imu(arity); }, DataError::Kind::kMalformedLine), 2u);
  const auto junk = dir.write("c.csv", std::string(kImuHeader) + "100,0,0,x,0,0,0\n");
  EXPECT_EQ(data_error_line([&] { load_imu(junk); }, DataError::Kind::kMalformedLine), 2u);
  data_error_line([&] { load_imu(dir.path() / "missing.csv"); }, DataError::Kind::kIoFailure);
}

TEST(LoadGroundTruth, Layouts) {
  TempDir dir;
  const std::string header = "#timestamp,p_x,p_y,p_z,q_w,q_x,q_y,q_z,v_x,v_y,v_z,bw_x,bw_y,bw_z,ba_x,ba_y,ba_z\n";
  const auto p = dir.write("gt.csv", header + "10,1,2,3,1,0,0,0\n"
                                              "20,1,2,3,0,1,0,0,4,5,6,0.1,0.2,0.3,0.4,0.5,0.6\n");
  const auto g = load_groundtruth(p);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].orientation.w(), 1.0);
  EXPECT_FALSE(g[0].velocity.has_value());
  EXPECT_EQ(g[0].position, Vec3(1, 2, 3));
  EXPECT_EQ(g[1].orientation.x(), 1.0);
  ASSERT_TRUE(g[1].velocity && g[1].gyro_bias && g[1].accel_bias);
  EXPECT_EQ(*g[1].velocity, Vec3(4, 5, 6));
  EXPECT_EQ(*g[1].gyro_bias, Vec3(0.1, 0.2, 0.3));
  EXPECT_EQ(*g[1].accel_bias, Vec3(0.4, 0.5, 0.6));
}

TEST(LoadGroundTruth, QuaternionNorm) {
  TempDir dir;
  const auto near = load_groundtruth(dir.write("a.csv", "h\n10,0,0,0,1.0005,0,0,0\n"));
  EXPECT_NEAR(near[0].orientation.norm(), 1.0, 1e-12);
  const auto bad = dir.write("b.csv", "h\n10,0,0,0,0.9,0,0,0\n");
  EXPECT_EQ(data_error_line([&] { load_groundtruth(bad); }, DataError::Kind::kMalformedLine), 2u);
}

TEST(Toa, RoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> d(0.001, 80.0);
  std::uniform_int_distribution<int> id(1, 5);
  std::vector<ToaMeasurement> m;
  TimestampNs t = 1'403'636'579'763'555'584;
  for (int i = 0; i < 1000; ++i) {
    t += (i % 5 == 0) ? 200'000'000 : 0;
    m.push_back({t, id(rng), d(rng)});
  }
  const auto path = dir.path() / "toa.csv";
  save_toa(path, m);
  const auto back = load_toa(path, 5);
  ASSERT_EQ(back.size(), m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_EQ(back[i].t_ns, m[i].t_ns);
    EXPECT_EQ(back[i].bs_id, m[i].bs_id);
    EXPECT_NEAR(back[i].distance, m[i].distance, 1e-9 * m[i].distance);
  }
}

TEST(Toa, EmptyAndUnknownStation) {
  TempDir dir;
  const auto path = dir.path() / "empty.csv";
  save_toa(path, {});
  std::ifstream in(path);
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(all, "t_ns,bs_id,distance_m\n");
  EXPECT_TRUE(load_toa(path, 5).empty());
  const auto bad = dir.write("bad.csv", "t_ns,bs_id,distance_m\n0,7,1.0\n");
  EXPECT_EQ(data_error_line([&] { load_toa(bad, 5); }, DataError::Kind::kUnknownBsId), 2u);
}

TEST(ImuGroundTruthWriters, RoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(12);
  std::vector<ImuSample> imu;
  std::vector<GroundTruthPose> gt;
  for (int i = 0; i < 50; ++i) {
    imu.push_back({i * 5'000'000LL, tu::random_vec(rng), tu::random_vec(rng, 9.0)});
    GroundTruthPose g;
    g.t_ns = i * 10'000'000LL;
    g.position = tu::random_vec(rng);
    g.orientation = rot_to_quat(tu::random_rotation(rng));
    g.velocity = tu::random_vec(rng);
    g.gyro_bias = tu::random_vec(rng, 1e-3);
    g.accel_bias = tu::random_vec(rng, 1e-2);
    gt.push_back(g);
  }
  save_imu(dir.path() / "imu.csv", imu);
  save_groundtruth(dir.path() / "gt.csv", gt);
  const auto imu2 = load_imu(dir.path() / "imu.csv");
  const auto gt2 = load_groundtruth(dir.path() / "gt.csv");
  ASSERT_EQ(imu2.size(), imu.size());
  ASSERT_EQ(gt2.size(), gt.size());
  for (std::size_t i = 0; i < imu.size(); ++i) {
    EXPECT_EQ(imu2[i].t_ns, imu[i].t_ns);
    EXPECT_EQ(imu2[i].omega, imu[i].omega);  // shortest round-trip formatting is exact
    EXPECT_EQ(imu2[i].accel, imu[i].accel);
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    EXPECT_EQ(gt2[i].position, gt[i].position);
    EXPECT_LT((gt2[i].orientation.coeffs() - gt[i].orientation.coeffs()).norm(), 1e-15);
    EXPECT_EQ(*gt2[i].accel_bias, *gt[i].accel_bias);
  }
}

TEST(Trajectory, RoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(13);
  std::vector<TrajectoryPoint> traj;
  for (int i = 0; i < 20; ++i) {
    traj.push_back({i * 100'000'000LL, tu::random_vec(rng), rot_to_quat(tu::random_rotation(rng)),
                    tu::random_vec(rng)});
  }
  save_trajectory(dir.path() / "t.csv", traj);
  const auto back = load_trajectory(dir.path() / "t.csv");
  ASSERT_EQ(back.size(), traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    EXPECT_EQ(back[i].t_ns, traj[i].t_ns);
    EXPECT_EQ(back[i].position, traj[i].position);
    EXPECT_EQ(back[i].velocity, traj[i].velocity);
  }
}

TEST(AssociateNearest, Examples) {
  const std::vector<TimestampNs> ts = {0, 10, 20, 30};
  const auto id = associate_nearest(ts, ts);
  ASSERT_EQ(id.size(), ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) EXPECT_EQ(id[i], std::make_pair(i, i));

  const auto tie = associate_nearest({100, 200}, {150}, kNoGapLimit);
  ASSERT_EQ(tie.size(), 1u);
  EXPECT_EQ(tie[0].first, 0u);
  EXPECT_TRUE(associate_nearest({100, 200}, {150}, 10).empty());
  EXPECT_TRUE(associate_nearest({}, {1, 2}).empty());
}

TEST(AssociateNearest, MatchesBruteForceAndIsMonotone) {
  std::mt19937_64 rng(14);
  std::uniform_int_distribution<TimestampNs> step(1, 30);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TimestampNs> ref, query;
    TimestampNs t = 0;
    for (int i = 0; i < 40; ++i) ref.push_back(t += step(rng));
    t = 0;
    for (int i = 0; i < 60; ++i) query.push_back(t += step(rng) / 2 + 1);
    const TimestampNs gap = 7;
    const auto pairs = associate_nearest(ref, query, gap);
    std::size_t k = 0;
    for (std::size_t q = 0; q < query.size(); ++q) {
      std::size_t best = 0;
      for (std::size_t r = 1; r < ref.size(); ++r) {
        if (std::llabs(ref[r] - query[q]) < std::llabs(ref[best] - query[q])) best = r;
      }
      if (std::llabs(ref[best] - query[q]) > gap) continue;
      ASSERT_LT(k, pairs.size());
      EXPECT_EQ(pairs[k], std::make_pair(best, q));
      if (k > 0) EXPECT_LE(pairs[k - 1].first, pairs[k].first);
      ++k;
    }
    EXPECT_EQ(k, pairs.size());
  }
}

TEST(Extrinsic, IdentityAndOffset) {
  GroundTruthPose g;
  g.position = Vec3(1, 2, 3);
  g.orientation = quat_exp(Vec3(0, 0, 1.5707963267948966));
  Extrinsic e;
  e.translation = Vec3(1, 0, 0);
  const auto out = apply_extrinsic({g}, e);
  EXPECT_LT((out[0].position - Vec3(1, 3, 3)).norm(), 1e-12);
  EXPECT_LT((out[0].orientation.coeffs() - g.orientation.coeffs()).norm(), 1e-15);
}

TEST(WriteFileAtomic, ReplacesContents) {
  TempDir dir;
  const auto p = dir.path() / "f.txt";
  write_file_atomic(p, "first");
  write_file_atomic(p, "second");
  std::ifstream in(p);
  std::string s;
  in >> s;
  EXPECT_EQ(s, "second");
  EXPECT_EQ(std::distance(fs::directory_iterator(dir.path()), fs::directory_iterator{}), 1);
}
