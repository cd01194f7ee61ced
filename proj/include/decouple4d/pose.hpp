#ifndef DECOUPLE4D_POSE_HPP
#define DECOUPLE4D_POSE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "decouple4d/dense_map.hpp"
#include "decouple4d/error.hpp"
#include "decouple4d/geometry.hpp"
#include "decouple4d/random.hpp"
#include "decouple4d/synthscene.hpp"

namespace decouple4d {

using Trajectory = std::vector<CameraPose>;

struct WeightedCorrespondenceSet {
  std::vector<Vector3d> points_r;
  std::vector<Vector3d> points_t;
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }

  void add(const Vector3d& r, const Vector3d& t, double w) {
    points_r.push_back(r);
    points_t.push_back(t);
    weights.push_back(w);
  }

  void validate() const {
    if (points_r.size() != points_t.size() || points_r.size() != weights.size()) {
      throw Error(ErrorCode::DimensionMismatch, "correspondence fields differ in length");
    }
    for (double w : weights) {
      if (!(w >= 0.0 && w <= 1.0)) throw Error(ErrorCode::InvalidConfig, "correspondence weight outside [0, 1]");
    }
  }
};

/// Sum of w_i |T p_r,i - p_t,i|^2.
inline double geometric_loss(const CameraPose& pose, const WeightedCorrespondenceSet& set) {
  double sum = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.weights[i] == 0.0) continue;
    sum += set.weights[i] * (pose.apply(set.points_r[i]) - set.points_t[i]).squaredNorm();
  }
  return sum;
}

inline constexpr double kCollinearRatio = 1e-12;

/// Closed-form weighted rigid alignment (Kabsch without scale): the pose
/// minimising geometric_loss.
inline CameraPose weighted_pose_solve(const WeightedCorrespondenceSet& set) {
  set.validate();
  double mass = 0.0;
  int support = 0;
  for (double w : set.weights) {
    mass += w;
    support += w > 0.0 ? 1 : 0;
  }
  if (!(mass > 0.0)) throw Error(ErrorCode::ZeroWeightMass, "all correspondence weights are zero");
  if (support < 3) {
    throw Error(ErrorCode::DegenerateConfiguration,
                "need at least 3 weighted correspondences, have " + std::to_string(support));
  }
  Vector3d cr = Vector3d::Zero();
  Vector3d ct = Vector3d::Zero();
  for (std::size_t i = 0; i < set.size(); ++i) {
    cr += set.weights[i] * set.points_r[i];
    ct += set.weights[i] * set.points_t[i];
  }
  cr /= mass;
  ct /= mass;
  Matrix3d cross = Matrix3d::Zero();
  Matrix3d spread = Matrix3d::Zero();
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double w = set.weights[i];
    if (w == 0.0) continue;
    const Vector3d a = set.points_r[i] - cr;
    const Vector3d b = set.points_t[i] - ct;
    cross += w * a * b.transpose();
    spread += w * a * a.transpose();
  }
  const Eigen::JacobiSVD<Matrix3d> shape(spread);
  const Vector3d sv = shape.singularValues();
  if (!(sv[0] > 0.0) || sv[1] <= kCollinearRatio * sv[0]) {
    throw Error(ErrorCode::DegenerateConfiguration, "weighted support is collinear");
  }
  Eigen::JacobiSVD<Matrix3d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Matrix3d u = svd.matrixU();
  Matrix3d v = svd.matrixV();
  if ((v * u.transpose()).determinant() < 0.0) v.col(2) *= -1.0;
  CameraPose out;
  out.rotation = v * u.transpose();
  out.translation = ct - out.rotation * cr;
  return out;
}

/// Consecutive-frame correspondences built from shared point identities.
/// Pixel noise is drawn per frame and per observation, independent of the
/// weights, so masked and unmasked solves see the same measurements.
/// `mask` (optional) gives w = 1 - mask at the source pixel.
inline WeightedCorrespondenceSet frame_pair_correspondences(const SceneTruth& truth, int r, int t,
                                                            const DenseMap* mask, double pixel_noise_sigma,
                                                            std::uint64_t noise_seed) {
  const Intrinsics& k = truth.config.intrinsics;
  auto noisy_points = [&](int frame) {
    const auto& obs = truth.frames[frame].observations;
    Rng rng = make_rng(noise_seed, Stream::pixel_noise, static_cast<std::uint64_t>(frame));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Vector3d> pts;
    pts.reserve(obs.size());
    for (const Observation& o : obs) {
      const double du = normal(rng);
      const double dv = normal(rng);
      pts.push_back(k.unproject(o.pixel + pixel_noise_sigma * Vector2d(du, dv), o.depth));
    }
    return pts;
  };
  const auto& obs_r = truth.frames[r].observations;
  const auto& obs_t = truth.frames[t].observations;
  const std::vector<Vector3d> pr = noisy_points(r);
  const std::vector<Vector3d> pt = noisy_points(t);
  std::size_t num_points = truth.static_points.size() + truth.dynamic_object.size();
  std::vector<int> index_t(num_points, -1);
  for (std::size_t j = 0; j < obs_t.size(); ++j) index_t[obs_t[j].point_id] = static_cast<int>(j);
  WeightedCorrespondenceSet set;
  for (std::size_t i = 0; i < obs_r.size(); ++i) {
    const int j = index_t[obs_r[i].point_id];
    if (j < 0) continue;
    double w = 1.0;
    if (mask != nullptr && mask->defined(obs_r[i].row, obs_r[i].col)) {
      w = std::clamp(1.0 - (*mask)(obs_r[i].row, obs_r[i].col), 0.0, 1.0);
    }
    set.add(pr[i], pt[j], w);
  }
  return set;
}

/// Chains pairwise solves into camera-to-world poses anchored at frame 0.
/// With use_mask the per-frame masks weight the correspondences.
inline Trajectory estimate_trajectory(const SceneTruth& truth, const std::vector<DenseMap>* masks, bool use_mask,
                                      double pixel_noise_sigma, std::uint64_t noise_seed) {
  const int n = truth.num_frames();
  if (n < 2) throw Error(ErrorCode::InvalidConfig, "trajectory estimation needs at least two frames");
  if (use_mask && (masks == nullptr || static_cast<int>(masks->size()) != n)) {
    throw Error(ErrorCode::LengthMismatch, "one mask per frame is required for masked pose estimation");
  }
  Trajectory traj;
  traj.reserve(n);
  traj.push_back(CameraPose::identity(0));
  for (int t = 1; t < n; ++t) {
    const DenseMap* mask = use_mask ? &(*masks)[t - 1] : nullptr;
    CameraPose rel;
    try {
      rel = weighted_pose_solve(frame_pair_correspondences(truth, t - 1, t, mask, pixel_noise_sigma, noise_seed));
    } catch (const Error& e) {
      throw StageError("pose", t, e.code(), e.what());
    }
    CameraPose next = compose(traj.back(), inverse(rel));
    next.frame_id = t;
    traj.push_back(canonicalize(next));
  }
  return traj;
}

inline void validate_trajectory(const Trajectory& traj) {
  for (std::size_t i = 1; i < traj.size(); ++i) {
    if (traj[i].frame_id <= traj[i - 1].frame_id) {
      throw Error(ErrorCode::Format, "trajectory frame ids must be strictly increasing");
    }
  }
}

/// Relative pose mapping camera-r coordinates into camera-t coordinates.
inline CameraPose relative_pose(const CameraPose& cam_r, const CameraPose& cam_t) {
  CameraPose rel = compose(inverse(cam_t), cam_r);
  rel.frame_id = cam_t.frame_id;
  return rel;
}

}  // namespace decouple4d

#endif  // DECOUPLE4D_POSE_HPP
