#ifndef DECOUPLE4D_GEOMETRY_HPP
#define DECOUPLE4D_GEOMETRY_HPP

#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "decouple4d/error.hpp"

namespace decouple4d {

using Vector2d = Eigen::Vector2d;
using Vector3d = Eigen::Vector3d;
using Matrix3d = Eigen::Matrix3d;
using Matrix4d = Eigen::Matrix4d;
using Vector6d = Eigen::Matrix<double, 6, 1>;

inline constexpr double kOrthonormalDriftTolerance = 1e-9;
inline constexpr double kMinTargetDepth = 1e-9;

/// Rigid transform x -> rotation * x + translation.
///
/// Trajectories store camera-to-world transforms; relative poses map
/// reference-camera coordinates into target-camera coordinates.
struct CameraPose {
  Matrix3d rotation = Matrix3d::Identity();
  Vector3d translation = Vector3d::Zero();
  int frame_id = 0;

  static CameraPose identity(int frame_id = 0) {
    CameraPose p;
    p.frame_id = frame_id;
    return p;
  }

  Vector3d apply(const Vector3d& x) const { return rotation * x + translation; }

  Matrix4d matrix() const {
    Matrix4d m = Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
};

inline double orthonormality_error(const Matrix3d& r) {
  return (r.transpose() * r - Matrix3d::Identity()).norm();
}

/// Closest rotation in Frobenius norm (polar factor), determinant forced to +1.
inline Matrix3d orthonormalize(const Matrix3d& r) {
  Eigen::JacobiSVD<Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3d u = svd.matrixU();
  const Matrix3d v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

inline bool is_rotation(const Matrix3d& r, double tol = kOrthonormalDriftTolerance) {
  return orthonormality_error(r) <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

/// Returns the transform that applies `b` first and then `a`. The frame id of
/// the result is taken from `b`.
inline CameraPose compose(const CameraPose& a, const CameraPose& b) {
  CameraPose out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  out.frame_id = b.frame_id;
  if (orthonormality_error(out.rotation) > kOrthonormalDriftTolerance) {
    out.rotation = orthonormalize(out.rotation);
  }
  return out;
}

inline CameraPose inverse(const CameraPose& p) {
  CameraPose out;
  out.rotation = p.rotation.transpose();
  out.translation = -(out.rotation * p.translation);
  out.frame_id = p.frame_id;
  return out;
}

inline Matrix3d skew(const Vector3d& v) {
  Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

/// SE(3) exponential of xi = (omega, v).
inline CameraPose exp_se3(const Vector6d& xi) {
  const Vector3d omega = xi.head<3>();
  const Vector3d v = xi.tail<3>();
  const double theta = omega.norm();
  const Matrix3d w = skew(omega);
  Matrix3d rot;
  Matrix3d jac;
  if (theta < 1e-8) {
    rot = Matrix3d::Identity() + w + 0.5 * w * w;
    jac = Matrix3d::Identity() + 0.5 * w + w * w / 6.0;
  } else {
    const double t2 = theta * theta;
    rot = Eigen::AngleAxisd(theta, omega / theta).toRotationMatrix();
    jac = Matrix3d::Identity() + (1.0 - std::cos(theta)) / t2 * w +
          (theta - std::sin(theta)) / (t2 * theta) * w * w;
  }
  CameraPose out;
  out.rotation = rot;
  out.translation = jac * v;
  return out;
}

/// Geodesic rotation angle in radians.
inline double rotation_angle(const Matrix3d& r) {
  const double s = 0.5 * Vector3d(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)).norm();
  const double c = 0.5 * (r.trace() - 1.0);
  return std::atan2(s, c);
}

/// Quaternion in (x, y, z, w) storage with w >= 0.
inline Eigen::Quaterniond to_quaternion(const CameraPose& p) {
  Eigen::Quaterniond q(p.rotation);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return q;
}

inline CameraPose from_quaternion(int frame_id, const Vector3d& translation, Eigen::Quaterniond q) {
  q.normalize();
  CameraPose p;
  p.rotation = q.toRotationMatrix();
  p.translation = translation;
  p.frame_id = frame_id;
  return p;
}

/// Rotation rebuilt from its unit quaternion.
inline CameraPose canonicalize(const CameraPose& p) {
  return from_quaternion(p.frame_id, p.translation, to_quaternion(p));
}

struct Intrinsics {
  double fx = 40.0;
  double fy = 40.0;
  double cx = 23.5;
  double cy = 19.5;
  int width = 48;
  int height = 40;

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0)) throw Error(ErrorCode::InvalidConfig, "focal lengths must be positive");
    if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidConfig, "image size must be positive");
    if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
      throw Error(ErrorCode::InvalidConfig, "principal point outside the image");
    }
  }

  Matrix3d matrix() const {
    Matrix3d k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  /// K^-1 [u v 1]^T, a ray with unit z component.
  Vector3d normalized(const Vector2d& pixel) const {
    return {(pixel.x() - cx) / fx, (pixel.y() - cy) / fy, 1.0};
  }

  Vector3d unproject(const Vector2d& pixel, double depth) const { return depth * normalized(pixel); }

  Vector2d project(const Vector3d& x) const {
    return {fx * x.x() / x.z() + cx, fy * x.y() / x.z() + cy};
  }
};

/// A pixel in a reference frame, its depth, and its target-frame image.
/// `displacement` is the world motion of the observed point between the two
/// frames, expressed in target-camera axes; zero for static points.
struct PixelCorrespondence {
  Vector2d x_r = Vector2d::Zero();
  Vector2d x_t = Vector2d::Zero();
  double depth_r = 1.0;
  Vector3d displacement = Vector3d::Zero();
};

struct EssentialMatrix {
  Matrix3d matrix = Matrix3d::Zero();
  /// Set when the relative translation vanishes and the matrix is zero.
  bool degenerate = false;
};

/// E = [t]x R for a reference-to-target relative pose.
inline EssentialMatrix essential_matrix(const CameraPose& relative) {
  EssentialMatrix e;
  e.matrix = skew(relative.translation) * relative.rotation;
  e.degenerate = relative.translation.norm() == 0.0;
  return e;
}

struct WarpResult {
  Vector2d pixel;
  double depth = 0.0;
};

/// Transfers a reference pixel into the target frame through its depth, the
/// relative pose, and the point's own displacement.
inline WarpResult warp(const Vector2d& x_r, double depth_r, const Vector3d& displacement,
                       const CameraPose& relative, const Intrinsics& k) {
  const Vector3d x = relative.apply(k.unproject(x_r, depth_r)) + displacement;
  if (!(x.z() > kMinTargetDepth)) {
    throw Error(ErrorCode::NonPositiveTargetDepth,
                "warped point has depth " + std::to_string(x.z()) + " in the target camera");
  }
  return {k.project(x), x.z()};
}

inline WarpResult warp(const PixelCorrespondence& corr, const CameraPose& relative, const Intrinsics& k) {
  return warp(corr.x_r, corr.depth_r, corr.displacement, relative, k);
}

/// Signed bilinear form x_t^T E x_r on homogeneous coordinates (third entry 1).
inline double epipolar_residual(const Vector2d& x_r, const Vector2d& x_t, const Matrix3d& e) {
  return x_t.homogeneous().dot(e * x_r.homogeneous());
}

/// Residual of pixel coordinates, evaluated on their calibrated rays K^-1 x.
inline double epipolar_residual(const Vector2d& x_r, const Vector2d& x_t, const Matrix3d& e,
                                const Intrinsics& k) {
  return k.normalized(x_t).dot(e * k.normalized(x_r));
}

/// Epipolar line of x_r in the target frame, l = E K^-1 x_r. As a 3-vector it
/// is the normal of the epipolar plane through both camera centres.
inline Vector3d epipolar_line(const Vector2d& x_r, const Matrix3d& e, const Intrinsics& k) {
  return e * k.normalized(x_r);
}

/// Unit normal of the epipolar line (and plane).
inline Vector3d epipolar_normal(const Vector2d& x_r, const Matrix3d& e, const Intrinsics& k) {
  return epipolar_line(x_r, e, k).normalized();
}

/// In-image direction of the line normal, (l1, l2) / |(l1, l2)|.
inline Vector2d epipolar_line_image_normal(const Vector2d& x_r, const Matrix3d& e, const Intrinsics& k) {
  return epipolar_line(x_r, e, k).head<2>().normalized();
}

/// Residual scaled by the epipolar line magnitude, so it is independent of the
/// arbitrary scale of E.
inline double normalized_epipolar_residual(const Vector2d& x_r, const Vector2d& x_t, const Matrix3d& e,
                                           const Intrinsics& k) {
  const Vector3d l = epipolar_line(x_r, e, k);
  return k.normalized(x_t).dot(l) / l.norm();
}

/// Component of a displacement perpendicular to the epipolar plane.
inline Vector3d perpendicular_displacement(const Vector3d& displacement, const Vector3d& normal) {
  return normal.dot(displacement) * normal;
}

/// First-order model of the residual caused by an independently moving
/// point: (1 / Z_r) n^T dX_perp, in the same units as
/// normalized_epipolar_residual. Exact up to the factor Z_r / Z_t.
inline double epipolar_residual_first_order(const PixelCorrespondence& corr, const Matrix3d& e,
                                            const Intrinsics& k) {
  const Vector3d n = epipolar_normal(corr.x_r, e, k);
  return n.dot(perpendicular_displacement(corr.displacement, n)) / corr.depth_r;
}

}  // namespace decouple4d

#endif  // DECOUPLE4D_GEOMETRY_HPP
