#ifndef DECOUPLE4D_SYNTHSCENE_HPP
#define DECOUPLE4D_SYNTHSCENE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "decouple4d/dense_map.hpp"
#include "decouple4d/error.hpp"
#include "decouple4d/geometry.hpp"
#include "decouple4d/random.hpp"

namespace decouple4d {

enum class CameraPath { orbit, linear, random_walk };

inline std::string to_string(CameraPath p) {
  switch (p) {
    case CameraPath::orbit: return "orbit";
    case CameraPath::linear: return "linear";
    case CameraPath::random_walk: return "random_walk";
  }
  return "orbit";
}

inline CameraPath camera_path_from_string(const std::string& s) {
  if (s == "orbit") return CameraPath::orbit;
  if (s == "linear") return CameraPath::linear;
  if (s == "random_walk") return CameraPath::random_walk;
  throw Error(ErrorCode::InvalidConfig, "unknown camera path '" + s + "'");
}

struct SceneConfig {
  int num_frames = 20;
  int num_static_points = 2000;
  int num_dynamic_points = 200;
  Intrinsics intrinsics;
  CameraPath camera_path = CameraPath::orbit;
  double path_amplitude = 0.25;
  /// One velocity per moving object, scene units per frame.
  std::vector<Vector3d> dynamic_velocities{Vector3d(0.03, 0.0, -0.08)};
  double pixel_noise_sigma = 0.04;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_frames < 2) throw Error(ErrorCode::InvalidConfig, "num_frames must be at least 2");
    if (num_static_points <= 0) throw Error(ErrorCode::InvalidConfig, "num_static_points must be positive");
    if (num_dynamic_points < 0) throw Error(ErrorCode::InvalidConfig, "num_dynamic_points must be >= 0");
    if (num_dynamic_points > 0 && dynamic_velocities.empty()) {
      throw Error(ErrorCode::InvalidConfig, "dynamic points need at least one object velocity");
    }
    if (!(pixel_noise_sigma >= 0.0)) throw Error(ErrorCode::InvalidConfig, "pixel_noise_sigma must be >= 0");
    if (!(path_amplitude >= 0.0)) throw Error(ErrorCode::InvalidConfig, "path_amplitude must be >= 0");
    intrinsics.validate();
  }
};

/// Plane n . X = offset in world coordinates.
struct Plane {
  Vector3d normal;
  double offset = 0.0;
};

/// A scene point that won its pixel's z-buffer. `pixel` is the exact
/// sub-pixel projection and `depth` the exact camera z of the point.
struct Observation {
  int point_id = 0;
  int row = 0;
  int col = 0;
  Vector2d pixel = Vector2d::Zero();
  double depth = 0.0;
};

struct FrameTruth {
  DenseMap depth;
  DenseMap mask;
  std::vector<Observation> observations;
};

/// Point ids: static points are 0..N_s-1, dynamic points follow.
struct SceneTruth {
  SceneConfig config;
  std::vector<CameraPose> trajectory;
  std::vector<Vector3d> static_points;
  std::vector<int> static_surface;
  std::vector<std::vector<Vector3d>> dynamic_points;
  std::vector<int> dynamic_object;
  std::vector<Plane> static_planes;
  std::vector<FrameTruth> frames;

  int num_frames() const { return static_cast<int>(trajectory.size()); }
  bool is_dynamic(int point_id) const { return point_id >= static_cast<int>(static_points.size()); }

  Vector3d point(int point_id, int frame) const {
    if (!is_dynamic(point_id)) return static_points[point_id];
    return dynamic_points[frame][point_id - static_points.size()];
  }
};

namespace scene_detail {

inline const Vector3d kLookAtTarget(0.0, 0.0, 8.0);
inline const Vector3d kObjectCenter(-0.8, 0.2, 5.5);
inline const Vector3d kObjectSpacing(1.6, 0.0, 0.0);
inline constexpr double kObjectSize = 1.3;
inline constexpr int kStaticMargin = 3;

inline Matrix3d look_at(const Vector3d& eye, const Vector3d& target) {
  const Vector3d z = (target - eye).normalized();
  const Vector3d x = Vector3d::UnitY().cross(z).normalized();
  const Vector3d y = z.cross(x);
  Matrix3d r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

inline std::vector<Plane> creased_wall() {
  return {{Vector3d(0.25, 0.0, 1.0), 8.0}, {Vector3d(-0.25, 0.0, 1.0), 8.0}};
}

inline Vector3d object_center(int k) { return kObjectCenter + k * kObjectSpacing; }

/// Ray parameter s with plane.normal . (origin + s dir) = plane.offset.
inline double ray_plane(const Vector3d& origin, const Vector3d& dir, const Plane& plane) {
  return (plane.offset - plane.normal.dot(origin)) / plane.normal.dot(dir);
}

}  // namespace scene_detail

/// Camera-to-world poses; frame 0 is the identity for every path.
inline std::vector<CameraPose> camera_trajectory(const SceneConfig& cfg) {
  using scene_detail::kLookAtTarget;
  std::vector<CameraPose> traj;
  traj.reserve(cfg.num_frames);
  const double a = cfg.path_amplitude;
  Rng rng = make_rng(cfg.seed, Stream::camera_path);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector3d walk = Vector3d::Zero();
  for (int t = 0; t < cfg.num_frames; ++t) {
    CameraPose p;
    p.frame_id = t;
    switch (cfg.camera_path) {
      case CameraPath::orbit: {
        const double th = 2.0 * std::numbers::pi * t / cfg.num_frames;
        p.translation = Vector3d(a * std::sin(th), 0.5 * a * (1.0 - std::cos(th)), 0.0);
        p.rotation = t == 0 ? Matrix3d::Identity() : scene_detail::look_at(p.translation, kLookAtTarget);
        break;
      }
      case CameraPath::linear:
        p.translation = Vector3d(a * t / (cfg.num_frames - 1), 0.0, 0.0);
        break;
      case CameraPath::random_walk: {
        if (t > 0) {
          const double step = a / std::sqrt(static_cast<double>(cfg.num_frames));
          walk += step * Vector3d(normal(rng), normal(rng), 0.5 * normal(rng));
        }
        p.translation = walk;
        p.rotation = t == 0 ? Matrix3d::Identity() : scene_detail::look_at(p.translation, kLookAtTarget);
        break;
      }
    }
    traj.push_back(canonicalize(p));
  }
  return traj;
}

namespace scene_detail {

struct SplatCandidate {
  double z = std::numeric_limits<double>::infinity();
  int point_id = -1;
  Vector2d pixel;
};

/// Depth along the pixel-centre ray to the surface that carries the point, so
/// that the stored depth unprojects onto the rendered surface.
inline double surfel_depth(const SceneTruth& truth, int point_id, int frame, int row, int col,
                           double fallback) {
  const CameraPose& pose = truth.trajectory[frame];
  Plane plane;
  if (!truth.is_dynamic(point_id)) {
    plane = truth.static_planes[truth.static_surface[point_id]];
  } else {
    const int k = truth.dynamic_object[point_id - truth.static_points.size()];
    plane = {Vector3d::UnitZ(), object_center(k).z() + truth.config.dynamic_velocities[k].z() * frame};
  }
  const Vector3d ray = pose.rotation * truth.config.intrinsics.normalized(Vector2d(col, row));
  const double s = ray_plane(pose.translation, ray, plane);
  if (!(s > 0.0) || !std::isfinite(s) || std::abs(s - fallback) > 0.5 * fallback) return fallback;
  return s;
}

}  // namespace scene_detail

/// Builds a deterministic dynamic scene: a concave two-plane wall sampled in
/// the first view, moving square plates in front of it, and a camera path
/// aimed at the wall. Each frame is rendered by 1-pixel point splatting.
inline SceneTruth generate_scene(const SceneConfig& cfg) {
  using namespace scene_detail;
  cfg.validate();
  SceneTruth truth;
  truth.config = cfg;
  truth.trajectory = camera_trajectory(cfg);
  truth.static_planes = creased_wall();
  const Intrinsics& k = cfg.intrinsics;

  {
    Rng rng = make_rng(cfg.seed, Stream::static_points);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int ns = cfg.num_static_points;
    const double gw = k.width + 2.0 * kStaticMargin;
    const double gh = k.height + 2.0 * kStaticMargin;
    const int nx = std::max(1, static_cast<int>(std::sqrt(ns * gw / gh)));
    const int ny = (ns + nx - 1) / nx;
    std::vector<std::pair<int, int>> cells;
    cells.reserve(static_cast<std::size_t>(nx) * ny);
    for (int i = 0; i < ny; ++i)
      for (int j = 0; j < nx; ++j) cells.emplace_back(i, j);
    std::shuffle(cells.begin(), cells.end(), rng);
    truth.static_points.reserve(ns);
    for (int n = 0; n < ns; ++n) {
      const auto [i, j] = cells[n];
      const double u = -kStaticMargin - 0.5 + (j + unit(rng)) * gw / nx;
      const double v = -kStaticMargin - 0.5 + (i + unit(rng)) * gh / ny;
      const Vector3d ray = k.normalized(Vector2d(u, v));
      double best = std::numeric_limits<double>::infinity();
      int surface = 0;
      for (std::size_t p = 0; p < truth.static_planes.size(); ++p) {
        const double s = ray_plane(Vector3d::Zero(), ray, truth.static_planes[p]);
        if (s > 0.0 && s < best) {
          best = s;
          surface = static_cast<int>(p);
        }
      }
      truth.static_points.push_back(best * ray);
      truth.static_surface.push_back(surface);
    }
  }

  std::vector<Vector3d> base;
  if (cfg.num_dynamic_points > 0) {
    Rng rng = make_rng(cfg.seed, Stream::dynamic_points);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int objects = static_cast<int>(cfg.dynamic_velocities.size());
    for (int obj = 0; obj < objects; ++obj) {
      const int count = cfg.num_dynamic_points / objects + (obj < cfg.num_dynamic_points % objects ? 1 : 0);
      if (count == 0) continue;
      const int m = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(count))));
      std::vector<std::pair<int, int>> cells;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) cells.emplace_back(i, j);
      std::shuffle(cells.begin(), cells.end(), rng);
      for (int n = 0; n < count; ++n) {
        const auto [i, j] = cells[n];
        const Vector3d offset((j + unit(rng)) / m - 0.5, (i + unit(rng)) / m - 0.5, 0.0);
        base.push_back(object_center(obj) + kObjectSize * offset);
        truth.dynamic_object.push_back(obj);
      }
    }
  }

  const int nf = cfg.num_frames;
  truth.dynamic_points.resize(nf);
  for (int t = 0; t < nf; ++t) {
    auto& pts = truth.dynamic_points[t];
    pts.reserve(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      pts.push_back(base[i] + static_cast<double>(t) * cfg.dynamic_velocities[truth.dynamic_object[i]]);
    }
  }

  const int num_points = static_cast<int>(truth.static_points.size() + base.size());
  truth.frames.resize(nf);
  for (int t = 0; t < nf; ++t) {
    const CameraPose world_to_cam = inverse(truth.trajectory[t]);
    std::vector<SplatCandidate> zbuf(static_cast<std::size_t>(k.width) * k.height);
    for (int id = 0; id < num_points; ++id) {
      const Vector3d pc = world_to_cam.apply(truth.point(id, t));
      if (!(pc.z() > kMinTargetDepth)) continue;
      const Vector2d px = k.project(pc);
      const long col = std::lround(px.x());
      const long row = std::lround(px.y());
      if (col < 0 || row < 0 || col >= k.width || row >= k.height) continue;
      SplatCandidate& cell = zbuf[static_cast<std::size_t>(row) * k.width + col];
      if (pc.z() < cell.z) cell = {pc.z(), id, px};
    }
    FrameTruth& frame = truth.frames[t];
    frame.depth = DenseMap(k.height, k.width, MapRole::depth);
    frame.mask = DenseMap(k.height, k.width, MapRole::mask, 0.0);
    for (int row = 0; row < k.height; ++row) {
      for (int col = 0; col < k.width; ++col) {
        const SplatCandidate& cell = zbuf[static_cast<std::size_t>(row) * k.width + col];
        if (cell.point_id < 0) continue;
        frame.depth(row, col) = surfel_depth(truth, cell.point_id, t, row, col, cell.z);
        frame.mask(row, col) = truth.is_dynamic(cell.point_id) ? 1.0 : 0.0;
        frame.observations.push_back({cell.point_id, row, col, cell.pixel, cell.z});
      }
    }
    quantize_to_float(frame.depth);
  }
  return truth;
}

/// World point that rendered pixel (row, col) of frame t, rebuilt from the
/// stored depth.
inline Vector3d unproject_pixel(const SceneTruth& truth, int t, int row, int col) {
  const double d = truth.frames[t].depth(row, col);
  return truth.trajectory[t].apply(truth.config.intrinsics.unproject(Vector2d(col, row), d));
}

/// Exact world position of the rendered surface at the pixel centre.
inline Vector3d surface_point(const SceneTruth& truth, const Observation& obs, int t) {
  const double d = scene_detail::surfel_depth(truth, obs.point_id, t, obs.row, obs.col, obs.depth);
  return truth.trajectory[t].apply(truth.config.intrinsics.unproject(Vector2d(obs.col, obs.row), d));
}

enum class PassId { first, mask_aware };

inline std::string to_string(PassId p) { return p == PassId::first ? "first" : "mask_aware"; }

struct NoiseProfile {
  double sigma_static = 0.05;
  double sigma_dynamic = 0.01;
  double calibration_gain = 1.0;
  double sigma_floor = 1e-4;
  /// Confidence multiplier applied to a seeded random subset of pixels.
  double miscalibration_multiplier = 1.0;
  double miscalibration_fraction = 0.0;

  void validate() const {
    if (!(sigma_static >= 0.0) || !(sigma_dynamic >= 0.0)) {
      throw Error(ErrorCode::InvalidNoiseProfile, "noise sigmas must be non-negative");
    }
    if (!(calibration_gain > 0.0)) throw Error(ErrorCode::InvalidNoiseProfile, "calibration_gain must be positive");
    if (!(sigma_floor > 0.0)) throw Error(ErrorCode::InvalidNoiseProfile, "sigma_floor must be positive");
    if (!(miscalibration_multiplier > 0.0)) {
      throw Error(ErrorCode::InvalidNoiseProfile, "miscalibration_multiplier must be positive");
    }
    if (!(miscalibration_fraction >= 0.0 && miscalibration_fraction <= 1.0)) {
      throw Error(ErrorCode::InvalidNoiseProfile, "miscalibration_fraction must lie in [0, 1]");
    }
  }

  double confidence(double sigma) const {
    const double s = std::max(sigma, sigma_floor);
    return calibration_gain / (s * s);
  }
};

inline NoiseProfile default_noise_profile(PassId pass) {
  NoiseProfile p;
  if (pass == PassId::first) {
    p.sigma_static = 0.05;
    p.sigma_dynamic = 0.01;
  } else {
    p.sigma_static = 0.01;
    p.sigma_dynamic = 0.10;
  }
  return p;
}

struct PassPrediction {
  int frame_id = 0;
  PassId pass = PassId::first;
  DenseMap depth;
  DenseMap confidence;
};

/// Adds region-dependent Gaussian depth noise to the ground truth and reports
/// the matching confidence gain / sigma^2. Pixels without ground truth stay
/// undefined in both maps.
inline std::vector<PassPrediction> corrupt_pass(const SceneTruth& truth, PassId pass, const NoiseProfile& profile,
                                                std::uint64_t seed) {
  profile.validate();
  const std::uint64_t pass_index = pass == PassId::first ? 0 : 1;
  std::vector<PassPrediction> out;
  out.reserve(truth.frames.size());
  for (std::size_t t = 0; t < truth.frames.size(); ++t) {
    const FrameTruth& ft = truth.frames[t];
    const std::uint64_t index = (pass_index << 32) | t;
    Rng noise_rng = make_rng(seed, Stream::depth_noise, index);
    Rng mis_rng = make_rng(seed, Stream::miscalibration, index);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    PassPrediction pred;
    pred.frame_id = static_cast<int>(t);
    pred.pass = pass;
    pred.depth = DenseMap(ft.depth.height, ft.depth.width, MapRole::depth);
    pred.confidence = DenseMap(ft.depth.height, ft.depth.width, MapRole::confidence);
    for (std::size_t i = 0; i < ft.depth.size(); ++i) {
      if (!ft.depth.defined(i)) continue;
      const double sigma = ft.mask.values[i] > 0.5 ? profile.sigma_dynamic : profile.sigma_static;
      const double z = normal(noise_rng);
      pred.depth.values[i] = ft.depth.values[i] + sigma * z;
      double c = profile.confidence(sigma);
      if (profile.miscalibration_fraction > 0.0 && unit(mis_rng) < profile.miscalibration_fraction) {
        c *= profile.miscalibration_multiplier;
      }
      pred.confidence.values[i] = c;
    }
    quantize_to_float(pred.depth);
    quantize_to_float(pred.confidence);
    out.push_back(std::move(pred));
  }
  return out;
}

/// Pixels selected for miscalibration by corrupt_pass for this pass/frame.
inline std::vector<bool> miscalibrated_pixels(const SceneTruth& truth, PassId pass, const NoiseProfile& profile,
                                              std::uint64_t seed, int frame) {
  const FrameTruth& ft = truth.frames[frame];
  const std::uint64_t index = ((pass == PassId::first ? std::uint64_t{0} : 1) << 32) | static_cast<std::uint64_t>(frame);
  Rng mis_rng = make_rng(seed, Stream::miscalibration, index);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<bool> out(ft.depth.size(), false);
  if (!(profile.miscalibration_fraction > 0.0)) return out;
  for (std::size_t i = 0; i < ft.depth.size(); ++i) {
    if (!ft.depth.defined(i)) continue;
    out[i] = unit(mis_rng) < profile.miscalibration_fraction;
  }
  return out;
}

}  // namespace decouple4d

#endif  // DECOUPLE4D_SYNTHSCENE_HPP
