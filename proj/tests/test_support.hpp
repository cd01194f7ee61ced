#ifndef DECOUPLE4D_TEST_SUPPORT_HPP
#define DECOUPLE4D_TEST_SUPPORT_HPP

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include <Eigen/Geometry>

#include "decouple4d/geometry.hpp"

namespace testing_support {

using decouple4d::CameraPose;
using decouple4d::Matrix3d;
using decouple4d::Vector3d;

inline Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Vector3d(n(rng), n(rng), n(rng)).normalized();
}

inline Matrix3d random_rotation(std::mt19937_64& rng, double max_angle = 3.14159) {
  std::uniform_real_distribution<double> u(0.0, max_angle);
  return Eigen::AngleAxisd(u(rng), random_unit(rng)).toRotationMatrix();
}

inline CameraPose random_pose(std::mt19937_64& rng, double max_angle = 3.14159, double max_t = 2.0) {
  std::uniform_real_distribution<double> u(-max_t, max_t);
  CameraPose p;
  p.rotation = random_rotation(rng, max_angle);
  p.translation = Vector3d(u(rng), u(rng), u(rng));
  return p;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("decouple4d_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// Relative path -> file bytes for every regular file below `root`.
inline std::map<std::string, std::string> tree_contents(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

}  // namespace testing_support

#endif  // DECOUPLE4D_TEST_SUPPORT_HPP
