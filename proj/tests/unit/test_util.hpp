#pragma once

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <functional>
#include <random>

#include <Eigen/Core>

#include "toa_fusion/geometry.hpp"

namespace toa_fusion::tu {

inline Vec3 random_vec(std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  return {n(rng), n(rng), n(rng)};
}

/// Rotation vector with norm uniformly in [0, max_angle).
inline Vec3 random_rotation_vector(std::mt19937_64& rng, double max_angle) {
  std::uniform_real_distribution<double> u(0.0, max_angle);
  Vec3 axis = random_vec(rng);
  while (axis.norm() < 1e-6) axis = random_vec(rng);
  return axis.normalized() * u(rng);
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
  // Uniform quaternion via normalized Gaussian 4-vector; Eigen does the conversion.
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

/// Central-difference Jacobian of f: R^n -> R^m at x.
inline Eigen::MatrixXd numeric_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x, double h = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd J(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    J.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

/// ||A - B|| / max(||B||, floor): relative error with a floor for near-zero references.
inline double relative_error(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double floor = 1.0) {
  return (A - B).norm() / std::max(B.norm(), floor);
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() / ("toa_fusion_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::filesystem::path write(const std::string& name, const std::string& contents) const {
    std::ofstream(path_ / name, std::ios::binary) << contents;
    return path_ / name;
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace toa_fusion::tu
