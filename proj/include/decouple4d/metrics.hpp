#ifndef DECOUPLE4D_METRICS_HPP
#define DECOUPLE4D_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "decouple4d/dense_map.hpp"
#include "decouple4d/error.hpp"
#include "decouple4d/geometry.hpp"
#include "decouple4d/pose.hpp"

namespace decouple4d {

struct PointCloud {
  std::vector<Vector3d> points;
  /// Source frame of each point; empty when unknown.
  std::vector<int> frame_ids;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// World points of every defined depth pixel whose row and column are
/// multiples of `stride`.
inline PointCloud unproject_cloud(const std::vector<DenseMap>& depths, const Trajectory& traj, const Intrinsics& k,
                                  int stride = 1) {
  if (stride < 1) throw Error(ErrorCode::InvalidConfig, "stride must be >= 1");
  if (depths.size() != traj.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(depths.size()) + " depth maps for " +
                                               std::to_string(traj.size()) + " poses");
  }
  PointCloud cloud;
  for (std::size_t f = 0; f < depths.size(); ++f) {
    const DenseMap& d = depths[f];
    for (int row = 0; row < d.height; row += stride) {
      for (int col = 0; col < d.width; col += stride) {
        if (!d.defined(row, col)) continue;
        cloud.points.push_back(traj[f].apply(k.unproject(Vector2d(col, row), d(row, col))));
        cloud.frame_ids.push_back(traj[f].frame_id);
      }
    }
  }
  if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "no defined depth at the sampled pixels");
  return cloud;
}

/// Exact nearest-neighbour queries on a uniform grid. Cells are visited in
/// growing cubic shells until no unvisited cell can hold a closer point.
class NearestNeighborGrid {
 public:
  explicit NearestNeighborGrid(const std::vector<Vector3d>& points) : points_(points) {
    if (points_.empty()) throw Error(ErrorCode::EmptyCloud, "nearest-neighbour grid over an empty cloud");
    lo_ = points_.front();
    Vector3d hi = points_.front();
    for (const Vector3d& p : points_) {
      lo_ = lo_.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const Vector3d extent = hi - lo_;
    const double n = static_cast<double>(points_.size());
    const double floor_extent = std::max(extent.maxCoeff() * 1e-3, 1e-12);
    const Vector3d e = extent.cwiseMax(floor_extent);
    cell_ = std::cbrt(e.prod() / std::max(1.0, n / 2.0));
    for (;;) {
      for (int a = 0; a < 3; ++a) dims_[a] = static_cast<long>(std::floor(extent[a] / cell_)) + 1;
      if (static_cast<double>(dims_[0]) * dims_[1] * dims_[2] <= 4.0 * n + 64.0) break;
      cell_ *= 1.5;
    }
    start_.assign(static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]) + 1, 0);
    std::vector<long> cell_of(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) {
      long c[3];
      cell_coords(points_[i], c);
      for (int a = 0; a < 3; ++a) c[a] = std::clamp(c[a], 0L, dims_[a] - 1);
      cell_of[i] = flat(c);
      ++start_[cell_of[i] + 1];
    }
    for (std::size_t i = 1; i < start_.size(); ++i) start_[i] += start_[i - 1];
    order_.resize(points_.size());
    std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
    for (std::size_t i = 0; i < points_.size(); ++i) order_[fill[cell_of[i]]++] = i;
  }

  /// Smallest squared distance from q to the indexed points.
  double nearest_squared(const Vector3d& q) const {
    long c[3];
    cell_coords(q, c);
    // Start from the nearest cell inside the grid; shells around it still
    // bound every unvisited point for queries outside the box.
    for (int a = 0; a < 3; ++a) c[a] = std::clamp(c[a], 0L, dims_[a] - 1);
    double margin = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      const double cell_lo = lo_[a] + c[a] * cell_;
      margin = std::min({margin, q[a] - cell_lo, cell_lo + cell_ - q[a]});
    }
    margin = std::max(0.0, margin);
    long max_ring = 0;
    for (int a = 0; a < 3; ++a) max_ring = std::max({max_ring, c[a], dims_[a] - 1 - c[a]});
    double best = std::numeric_limits<double>::infinity();
    for (long r = 0; r <= max_ring; ++r) {
      visit_shell(c, r, q, best);
      // Points outside the visited cube are at least this far away.
      const double bound = (r * cell_ + margin) * (1.0 - 1e-12);
      if (bound > 0.0 && best <= bound * bound) break;
    }
    return best;
  }

 private:
  void cell_coords(const Vector3d& p, long c[3]) const {
    for (int a = 0; a < 3; ++a) {
      const double v = std::floor((p[a] - lo_[a]) / cell_);
      c[a] = static_cast<long>(std::clamp(v, -1.0, static_cast<double>(dims_[a])));
    }
  }

  long flat(const long c[3]) const { return (c[2] * dims_[1] + c[1]) * dims_[0] + c[0]; }

  void scan_cell(long x, long y, long z, const Vector3d& q, double& best) const {
    if (x < 0 || y < 0 || z < 0 || x >= dims_[0] || y >= dims_[1] || z >= dims_[2]) return;
    const long c[3] = {x, y, z};
    const long f = flat(c);
    for (std::size_t k = start_[f]; k < start_[f + 1]; ++k) {
      best = std::min(best, (points_[order_[k]] - q).squaredNorm());
    }
  }

  /// Cells at Chebyshev distance exactly r from c, clipped to the grid.
  void visit_shell(const long c[3], long r, const Vector3d& q, double& best) const {
    const long z0 = std::max(-r, -c[2]), z1 = std::min(r, dims_[2] - 1 - c[2]);
    const long y0 = std::max(-r, -c[1]), y1 = std::min(r, dims_[1] - 1 - c[1]);
    const long x0 = std::max(-r, -c[0]), x1 = std::min(r, dims_[0] - 1 - c[0]);
    for (long dz = z0; dz <= z1; ++dz) {
      for (long dy = y0; dy <= y1; ++dy) {
        if (std::abs(dz) < r && std::abs(dy) < r) {
          if (x0 == -r) scan_cell(c[0] - r, c[1] + dy, c[2] + dz, q, best);
          if (r > 0 && x1 == r) scan_cell(c[0] + r, c[1] + dy, c[2] + dz, q, best);
        } else {
          for (long dx = x0; dx <= x1; ++dx) scan_cell(c[0] + dx, c[1] + dy, c[2] + dz, q, best);
        }
      }
    }
  }

  const std::vector<Vector3d>& points_;
  Vector3d lo_;
  double cell_ = 1.0;
  long dims_[3] = {1, 1, 1};
  std::vector<std::size_t> start_;
  std::vector<std::size_t> order_;
};

inline double brute_force_nearest_squared(const std::vector<Vector3d>& points, const Vector3d& q) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vector3d& p : points) best = std::min(best, (p - q).squaredNorm());
  return best;
}

struct ChamferOptions {
  /// Clouds smaller than this are searched exhaustively.
  std::size_t brute_force_below = 1000;
};

/// Distance from each query point to its nearest neighbour in `target`.
inline std::vector<double> directed_distances(const PointCloud& query, const PointCloud& target,
                                              const ChamferOptions& opts = {}) {
  std::vector<double> out(query.size());
  if (target.size() < opts.brute_force_below) {
    for (std::size_t i = 0; i < query.size(); ++i) {
      out[i] = std::sqrt(brute_force_nearest_squared(target.points, query.points[i]));
    }
    return out;
  }
  const NearestNeighborGrid grid(target.points);
  for (std::size_t i = 0; i < query.size(); ++i) out[i] = std::sqrt(grid.nearest_squared(query.points[i]));
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Element at index floor((n - 1) / 2) of the sorted values.
inline double lower_median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t k = (v.size() - 1) / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

struct ChamferResult {
  double acc_mean = 0.0;
  double acc_median = 0.0;
  double comp_mean = 0.0;
  double comp_median = 0.0;
  double dist_mean = 0.0;
  double dist_median = 0.0;
};

/// Statistics are taken over sorted copies, so they do not depend on point
/// order or on which cloud is called the prediction.
inline ChamferResult chamfer_from_distances(std::vector<double> acc, std::vector<double> comp) {
  std::sort(acc.begin(), acc.end());
  std::sort(comp.begin(), comp.end());
  std::vector<double> all(acc.size() + comp.size());
  std::merge(acc.begin(), acc.end(), comp.begin(), comp.end(), all.begin());
  ChamferResult r;
  r.acc_mean = mean_of(acc);
  r.acc_median = lower_median(acc);
  r.comp_mean = mean_of(comp);
  r.comp_median = lower_median(comp);
  r.dist_mean = mean_of(all);
  r.dist_median = lower_median(std::move(all));
  return r;
}

inline ChamferResult chamfer(const PointCloud& pred, const PointCloud& gt, const ChamferOptions& opts = {}) {
  if (pred.empty() || gt.empty()) throw Error(ErrorCode::EmptyCloud, "chamfer needs two nonempty clouds");
  return chamfer_from_distances(directed_distances(pred, gt, opts), directed_distances(gt, pred, opts));
}

/// Rigid transform (no scale) taking `src` onto `dst` in the least-squares
/// sense. Degenerate layouts still return a minimiser.
inline CameraPose align_rigid(const std::vector<Vector3d>& src, const std::vector<Vector3d>& dst) {
  const double n = static_cast<double>(src.size());
  Vector3d cs = Vector3d::Zero();
  Vector3d cd = Vector3d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= n;
  cd /= n;
  Matrix3d cross = Matrix3d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) cross += (src[i] - cs) * (dst[i] - cd).transpose();
  Eigen::JacobiSVD<Matrix3d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Matrix3d u = svd.matrixU();
  Matrix3d v = svd.matrixV();
  if ((v * u.transpose()).determinant() < 0.0) v.col(2) *= -1.0;
  CameraPose out;
  out.rotation = v * u.transpose();
  out.translation = cd - out.rotation * cs;
  return out;
}

inline void require_comparable(const Trajectory& pred, const Trajectory& gt) {
  if (pred.size() != gt.size()) {
    throw Error(ErrorCode::LengthMismatch, "trajectories have " + std::to_string(pred.size()) + " and " +
                                               std::to_string(gt.size()) + " poses");
  }
}

/// RMSE of camera positions after rigid alignment of pred onto gt.
inline double ate(const Trajectory& pred, const Trajectory& gt) {
  require_comparable(pred, gt);
  if (pred.size() < 2) throw Error(ErrorCode::LengthMismatch, "ATE needs at least two poses");
  std::vector<Vector3d> p;
  std::vector<Vector3d> g;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    p.push_back(pred[i].translation);
    g.push_back(gt[i].translation);
  }
  const CameraPose a = align_rigid(p, g);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (a.apply(p[i]) - g[i]).squaredNorm();
  return std::sqrt(s / static_cast<double>(p.size()));
}

struct RelativePoseError {
  double rte = 0.0;
  /// Degrees.
  double rre = 0.0;
};

inline RelativePoseError rpe(const Trajectory& pred, const Trajectory& gt, int delta = 1) {
  require_comparable(pred, gt);
  if (delta < 1 || static_cast<std::size_t>(delta) >= pred.size()) {
    throw Error(ErrorCode::InvalidDelta,
                "delta " + std::to_string(delta) + " for " + std::to_string(pred.size()) + " poses");
  }
  double st = 0.0;
  double sr = 0.0;
  const std::size_t m = pred.size() - static_cast<std::size_t>(delta);
  for (std::size_t i = 0; i < m; ++i) {
    const CameraPose rel_gt = compose(inverse(gt[i]), gt[i + delta]);
    const CameraPose rel_pred = compose(inverse(pred[i]), pred[i + delta]);
    const CameraPose err = compose(inverse(rel_gt), rel_pred);
    st += err.translation.squaredNorm();
    const double ang = rotation_angle(err.rotation) * 180.0 / std::numbers::pi;
    sr += ang * ang;
  }
  return {std::sqrt(st / m), std::sqrt(sr / m)};
}

struct MetricReport {
  double acc_mean = 0.0;
  double acc_median = 0.0;
  double comp_mean = 0.0;
  double comp_median = 0.0;
  double dist_mean = 0.0;
  double dist_median = 0.0;
  double ate = 0.0;
  double rte = 0.0;
  double rre = 0.0;

  static constexpr const char* kKeys[9] = {"acc_mean",    "acc_median", "comp_mean", "comp_median", "dist_mean",
                                           "dist_median", "ate",        "rte",       "rre"};

  std::vector<double> values() const {
    return {acc_mean, acc_median, comp_mean, comp_median, dist_mean, dist_median, ate, rte, rre};
  }

  static std::string tsv_header() {
    std::string s;
    for (int i = 0; i < 9; ++i) s += (i ? "\t" : "") + std::string(kKeys[i]);
    return s;
  }

  std::string to_tsv() const {
    std::string s;
    char buf[64];
    const auto v = values();
    for (int i = 0; i < 9; ++i) {
      std::snprintf(buf, sizeof buf, "%.9g", v[i]);
      s += (i ? "\t" : "") + std::string(buf);
    }
    return s;
  }

  std::string to_key_values(const std::string& prefix = "") const {
    std::string s;
    char buf[96];
    const auto v = values();
    for (int i = 0; i < 9; ++i) {
      std::snprintf(buf, sizeof buf, "%s%s=%.9g\n", prefix.c_str(), kKeys[i], v[i]);
      s += buf;
    }
    return s;
  }
};

inline MetricReport evaluate(const PointCloud& pred, const PointCloud& gt, const Trajectory& pred_traj,
                             const Trajectory& gt_traj, const ChamferOptions& opts = {}, int delta = 1) {
  MetricReport m;
  const ChamferResult c = chamfer(pred, gt, opts);
  m.acc_mean = c.acc_mean;
  m.acc_median = c.acc_median;
  m.comp_mean = c.comp_mean;
  m.comp_median = c.comp_median;
  m.dist_mean = c.dist_mean;
  m.dist_median = c.dist_median;
  m.ate = ate(pred_traj, gt_traj);
  const RelativePoseError r = rpe(pred_traj, gt_traj, delta);
  m.rte = r.rte;
  m.rre = r.rre;
  return m;
}

}  // namespace decouple4d

#endif  // DECOUPLE4D_METRICS_HPP
