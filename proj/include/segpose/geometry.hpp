#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "segpose/error.hpp"
#include "segpose/random.hpp"

namespace segpose {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kMinDepth = 1e-9;

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0))
      throw Error(ErrorKind::InvalidArgument, "focal lengths must be positive");
    if (width <= 0 || height <= 0)
      throw Error(ErrorKind::InvalidArgument, "image size must be positive");
  }

  bool contains(const Vec2& uv) const {
    return uv.x() >= 0.0 && uv.y() >= 0.0 && uv.x() < width && uv.y() < height;
  }

  bool operator==(const CameraIntrinsics&) const = default;
};

/// Rigid transform mapping model coordinates into the camera frame.
///
/// The rotation is checked on construction: ||R^T R - I|| < 1e-9 and
/// det(R) within 1e-9 of +1.
class Pose {
 public:
  Pose() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}

  Pose(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {
    if (!rotation_.allFinite() || !translation_.allFinite())
      throw Error(ErrorKind::NonFinite, "pose has non-finite entries");
    const double ortho = (rotation_.transpose() * rotation_ - Mat3::Identity()).norm();
    const double det = rotation_.determinant();
    if (ortho >= 1e-9 || std::abs(det - 1.0) > 1e-9)
      throw Error(ErrorKind::InvalidArgument, "rotation is not a proper orthonormal matrix");
  }

  static Pose identity() { return Pose(); }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }

  Pose inverse() const {
    Mat3 rt = rotation_.transpose();
    return Pose(rt, -(rt * translation_));
  }

  // (a * b).apply(x) == a.apply(b.apply(x))
  Pose operator*(const Pose& other) const {
    return Pose(rotation_ * other.rotation_, rotation_ * other.translation_ + translation_);
  }

  bool operator==(const Pose& other) const {
    return rotation_ == other.rotation_ && translation_ == other.translation_;
  }

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

/// Re-projects a near-rotation onto SO(3) (closest in Frobenius norm).
inline Mat3 orthonormalize(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

inline Mat3 rotation_exp(const Vec3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
}

struct ObjectModel {
  int id = 1;
  std::string name;
  std::vector<Vec3> keypoints;
  std::vector<Vec3> surface_points;
  double diameter = 0.0;
  bool symmetric = false;
};

inline constexpr std::size_t kDefaultKeypointCount = 8;
inline constexpr std::size_t kDefaultSurfaceSamples = 500;

/// Corners of the axis-aligned box spanned by `points`, x slowest, z fastest:
/// (min,min,min), (min,min,max), (min,max,min), ... , (max,max,max).
inline std::vector<Vec3> bounding_box_corners(std::span<const Vec3> points) {
  if (points.empty()) throw Error(ErrorKind::EmptyModel, "no points for bounding box");
  Vec3 lo = points.front();
  Vec3 hi = points.front();
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  std::vector<Vec3> corners;
  corners.reserve(8);
  for (int ix = 0; ix < 2; ++ix)
    for (int iy = 0; iy < 2; ++iy)
      for (int iz = 0; iz < 2; ++iz)
        corners.emplace_back(ix ? hi.x() : lo.x(), iy ? hi.y() : lo.y(), iz ? hi.z() : lo.z());
  return corners;
}

inline double point_set_diameter(std::span<const Vec3> points) {
  double best = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j)
      best = std::max(best, (points[i] - points[j]).squaredNorm());
  return std::sqrt(best);
}

/// Builds a model from its surface samples; keypoints and diameter are derived.
inline ObjectModel make_object_model(int id, std::string name, std::vector<Vec3> surface_points,
                                     bool symmetric) {
  if (surface_points.empty()) throw Error(ErrorKind::EmptyModel, "model has no surface points");
  ObjectModel m;
  m.id = id;
  m.name = std::move(name);
  m.keypoints = bounding_box_corners(surface_points);
  m.diameter = point_set_diameter(surface_points);
  if (!(m.diameter > 0.0)) throw Error(ErrorKind::InvalidArgument, "model diameter must be positive");
  m.surface_points = std::move(surface_points);
  m.symmetric = symmetric;
  return m;
}

/// Uniform samples on the surface of an axis-aligned box centred at the origin.
inline std::vector<Vec3> sample_box_surface(const Vec3& extents, std::size_t count, Rng& rng) {
  const double ax = extents.x(), ay = extents.y(), az = extents.z();
  const double areas[3] = {ay * az, ax * az, ax * ay};  // faces normal to x, y, z
  const double total = areas[0] + areas[1] + areas[2];
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Vec3> pts;
  pts.reserve(count + 8);
  // The eight corners are always included so the bounding box is exact.
  for (const auto& c : bounding_box_corners(std::vector<Vec3>{-extents / 2, extents / 2}))
    pts.push_back(c);
  while (pts.size() < count) {
    const double pick = unit(rng) * total;
    const int axis = pick < areas[0] ? 0 : (pick < areas[0] + areas[1] ? 1 : 2);
    Vec3 p(unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5);
    p = p.cwiseProduct(extents);
    p[axis] = (unit(rng) < 0.5 ? -0.5 : 0.5) * extents[axis];
    pts.push_back(p);
  }
  return pts;
}

/// Uniform samples on a closed cylinder about the z axis, centred at the origin.
inline std::vector<Vec3> sample_cylinder_surface(double radius, double height, std::size_t count,
                                                 Rng& rng) {
  const double side = 2.0 * std::numbers::pi * radius * height;
  const double cap = std::numbers::pi * radius * radius;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Vec3> pts;
  pts.reserve(count);
  // Extreme points along x, y, z keep the bounding box equal to the analytic one.
  for (double s : {-1.0, 1.0}) {
    pts.emplace_back(s * radius, 0.0, s * height / 2);
    pts.emplace_back(0.0, s * radius, -s * height / 2);
  }
  while (pts.size() < count) {
    const double pick = unit(rng) * (side + 2 * cap);
    const double phi = 2.0 * std::numbers::pi * unit(rng);
    if (pick < side) {
      pts.emplace_back(radius * std::cos(phi), radius * std::sin(phi), (unit(rng) - 0.5) * height);
    } else {
      const double r = radius * std::sqrt(unit(rng));
      const double z = pick < side + cap ? -height / 2 : height / 2;
      pts.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
    }
  }
  return pts;
}

/// Pinhole projection; throws BehindCamera when the camera-frame depth is <= 1e-9.
inline Vec2 project(const Vec3& p, const Pose& pose, const CameraIntrinsics& k) {
  const Vec3 c = pose.apply(p);
  if (!(c.z() > kMinDepth)) throw Error(ErrorKind::BehindCamera, "point projects from behind the camera");
  return {k.fx * c.x() / c.z() + k.cx, k.fy * c.y() / c.z() + k.cy};
}

inline Vec2 project_camera_point(const Vec3& c, const CameraIntrinsics& k) {
  if (!(c.z() > kMinDepth)) throw Error(ErrorKind::BehindCamera, "point projects from behind the camera");
  return {k.fx * c.x() / c.z() + k.cx, k.fy * c.y() / c.z() + k.cy};
}

inline std::vector<Vec2> project_all(std::span<const Vec3> points, const Pose& pose,
                                     const CameraIntrinsics& k) {
  std::vector<Vec2> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(project(p, pose, k));
  return out;
}

inline double rotation_geodesic(const Mat3& a, const Mat3& b) {
  // atan2 form keeps full precision near 0 and pi, unlike acos of the trace.
  const Mat3 r = a.transpose() * b;
  const Vec3 axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * axis.norm(), 0.5 * (r.trace() - 1.0));
}

inline double rotation_geodesic(const Pose& a, const Pose& b) {
  return rotation_geodesic(a.rotation(), b.rotation());
}

inline double relative_translation_error(const Pose& est, const Pose& gt) {
  return (est.translation() - gt.translation()).norm() / gt.translation().norm();
}

/// Mean distance between corresponding model points under both poses.
inline double add_metric(const Pose& est, const Pose& gt, const ObjectModel& model) {
  if (model.surface_points.empty()) throw Error(ErrorKind::EmptyModel, "ADD on empty model");
  double sum = 0.0;
  for (const auto& p : model.surface_points) sum += (est.apply(p) - gt.apply(p)).norm();
  return sum / static_cast<double>(model.surface_points.size());
}

/// Symmetric ADD: each estimated point is matched to its nearest ground-truth point.
inline double adds_metric(const Pose& est, const Pose& gt, const ObjectModel& model) {
  const auto& pts = model.surface_points;
  if (pts.empty()) throw Error(ErrorKind::EmptyModel, "ADD-S on empty model");
  std::vector<Vec3> target;
  target.reserve(pts.size());
  for (const auto& q : pts) target.push_back(gt.apply(q));
  double sum = 0.0;
  for (const auto& p : pts) {
    const Vec3 x = est.apply(p);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& y : target) best = std::min(best, (x - y).squaredNorm());
    sum += std::sqrt(best);
  }
  return sum / static_cast<double>(pts.size());
}

/// Mean 2D reprojection discrepancy in pixels. The symmetric variant matches
/// each estimated projection to its nearest ground-truth projection in the image.
inline double rep_metric(const Pose& est, const Pose& gt, const ObjectModel& model,
                         const CameraIntrinsics& k, bool symmetric) {
  const auto& pts = model.surface_points;
  if (pts.empty()) throw Error(ErrorKind::EmptyModel, "REP on empty model");
  const auto a = project_all(pts, est, k);
  const auto b = project_all(pts, gt, k);
  double sum = 0.0;
  if (!symmetric) {
    for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]).norm();
  } else {
    for (const auto& x : a) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& y : b) best = std::min(best, (x - y).squaredNorm());
      sum += std::sqrt(best);
    }
  }
  return sum / static_cast<double>(a.size());
}

inline Mat3 random_rotation(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return orthonormalize(q.toRotationMatrix());
}

}  // namespace segpose
