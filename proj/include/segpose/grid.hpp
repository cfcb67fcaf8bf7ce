#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "segpose/geometry.hpp"
#include "segpose/scene.hpp"

namespace segpose {

/// Layout of the S x S prediction lattice over the input image.
///
/// Offsets are expressed in normalized units: the full image width (height)
/// spans `norm_span` units horizontally (vertically).
class GridSpec {
 public:
  GridSpec() : GridSpec(76, 608, 608, 10.0) {}

  GridSpec(int size, int image_w, int image_h, double norm_span = 10.0)
      : size_(size), image_w_(image_w), image_h_(image_h), norm_span_(norm_span) {
    if (size_ < 2) throw Error(ErrorKind::InvalidArgument, "grid size must be >= 2");
    if (image_w_ <= 0 || image_h_ <= 0)
      throw Error(ErrorKind::InvalidArgument, "image size must be positive");
    if (image_w_ % size_ != 0 || image_h_ % size_ != 0)
      throw Error(ErrorKind::InvalidArgument, "image size must be divisible by grid size");
    if (!(norm_span_ > 0.0)) throw Error(ErrorKind::InvalidArgument, "norm_span must be positive");
  }

  int size() const { return size_; }
  int image_width() const { return image_w_; }
  int image_height() const { return image_h_; }
  double norm_span() const { return norm_span_; }
  double cell_width() const { return static_cast<double>(image_w_) / size_; }
  double cell_height() const { return static_cast<double>(image_h_) / size_; }
  std::size_t cell_count() const { return static_cast<std::size_t>(size_) * size_; }

  // pixels -> normalized units, per axis
  Vec2 scale() const { return {norm_span_ / image_w_, norm_span_ / image_h_}; }

  bool operator==(const GridSpec&) const = default;

 private:
  int size_;
  int image_w_;
  int image_h_;
  double norm_span_;
};

struct CellIndex {
  int row = 0;
  int col = 0;

  bool operator==(const CellIndex&) const = default;
};

inline void check_index(CellIndex idx, const GridSpec& spec) {
  if (idx.row < 0 || idx.col < 0 || idx.row >= spec.size() || idx.col >= spec.size())
    throw Error(ErrorKind::OutOfRange, "cell index out of range");
}

inline std::size_t flat_index(CellIndex idx, const GridSpec& spec) {
  return static_cast<std::size_t>(idx.row) * spec.size() + idx.col;
}

inline CellIndex cell_index(std::size_t flat, const GridSpec& spec) {
  return {static_cast<int>(flat / spec.size()), static_cast<int>(flat % spec.size())};
}

struct KeypointPrediction {
  Vec2 offset = Vec2::Zero();  // normalized units
  double confidence = 0.0;     // in [0, 1]

  bool operator==(const KeypointPrediction&) const = default;
};

struct CellPrediction {
  int class_label = 0;  // 0 is background
  int instance = -1;    // source instance when known (simulation only)
  std::vector<KeypointPrediction> keypoints;
  // Optional per-class scores (logits, K+1 entries) for the segmentation loss.
  std::vector<double> class_scores;

  bool operator==(const CellPrediction&) const = default;
};

struct PredictionGrid {
  GridSpec spec;
  std::size_t num_keypoints = kDefaultKeypointCount;
  std::vector<CellPrediction> cells;  // row-major, S*S

  PredictionGrid() = default;
  PredictionGrid(const GridSpec& s, std::size_t n) : spec(s), num_keypoints(n) {
    cells.resize(spec.cell_count());
    for (auto& c : cells) c.keypoints.resize(n);
  }

  CellPrediction& at(CellIndex idx) { return cells[flat_index(idx, spec)]; }
  const CellPrediction& at(CellIndex idx) const { return cells[flat_index(idx, spec)]; }

  void validate() const {
    if (cells.size() != spec.cell_count())
      throw Error(ErrorKind::SpecMismatch, "prediction grid cell count does not match spec");
    for (const auto& c : cells) {
      if (c.keypoints.size() != num_keypoints)
        throw Error(ErrorKind::SpecMismatch, "cell keypoint count does not match grid");
      for (const auto& kp : c.keypoints)
        if (!(kp.confidence >= 0.0 && kp.confidence <= 1.0))
          throw Error(ErrorKind::InvalidArgument, "confidence outside [0,1]");
    }
  }

  bool operator==(const PredictionGrid&) const = default;
};

struct GroundTruthCell {
  int class_label = 0;
  int instance = -1;              // index into Scene::instances, -1 for background
  std::vector<Vec2> keypoints;    // projected keypoints of the owning instance, pixels

  bool operator==(const GroundTruthCell&) const = default;
};

struct GroundTruthGrid {
  GridSpec spec;
  std::size_t num_keypoints = kDefaultKeypointCount;
  std::vector<GroundTruthCell> cells;
  std::vector<int> skipped_instances;  // instances dropped because they were behind the camera

  GroundTruthGrid() = default;
  GroundTruthGrid(const GridSpec& s, std::size_t n) : spec(s), num_keypoints(n) {
    cells.resize(spec.cell_count());
  }

  const GroundTruthCell& at(CellIndex idx) const { return cells[flat_index(idx, spec)]; }

  bool operator==(const GroundTruthGrid&) const = default;
};

inline Vec2 cell_center(CellIndex idx, const GridSpec& spec) {
  check_index(idx, spec);
  return {(idx.col + 0.5) * spec.cell_width(), (idx.row + 0.5) * spec.cell_height()};
}

inline Vec2 encode_offset(const Vec2& g, CellIndex idx, const GridSpec& spec) {
  return (g - cell_center(idx, spec)).cwiseProduct(spec.scale());
}

inline Vec2 decode_offset(const Vec2& offset, CellIndex idx, const GridSpec& spec) {
  return cell_center(idx, spec) + offset.cwiseQuotient(spec.scale());
}

inline Vec2 decode_prediction(CellIndex idx, const KeypointPrediction& kp, const GridSpec& spec) {
  return decode_offset(kp.offset, idx, spec);
}

/// c + h - g expressed in normalized units.
inline Vec2 residual(const KeypointPrediction& kp, CellIndex idx, const Vec2& g,
                     const GridSpec& spec) {
  return kp.offset - encode_offset(g, idx, spec);
}

// ---------------------------------------------------------------------------
// Depth-aware coverage

namespace detail {

inline double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Andrew's monotone chain; counter-clockwise (in a y-up sense), no collinear points.
inline std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

inline bool inside_convex(std::span<const Vec2> hull, const Vec2& p) {
  if (hull.size() < 3) return false;
  for (std::size_t i = 0; i < hull.size(); ++i)
    if (cross(hull[i], hull[(i + 1) % hull.size()], p) < 0) return false;
  return true;
}

}  // namespace detail

/// Image-space footprint of one posed instance: the convex hull of its
/// projected surface points, with depth taken from the model's bounding box.
/// Exact for convex models.
struct InstanceFootprint {
  int instance = -1;
  int class_label = 0;
  bool visible = false;
  Pose pose;
  Vec3 box_lo = Vec3::Zero();
  Vec3 box_hi = Vec3::Zero();
  std::vector<Vec2> hull;
  Vec2 image_lo = Vec2::Zero();
  Vec2 image_hi = Vec2::Zero();
  std::vector<Vec2> keypoints;

  // Camera-frame depth where the ray through pixel (u, v) first meets the object.
  std::optional<double> depth_at(const Vec2& uv, const CameraIntrinsics& k) const {
    if (!visible) return std::nullopt;
    if (uv.x() < image_lo.x() || uv.y() < image_lo.y() || uv.x() > image_hi.x() ||
        uv.y() > image_hi.y())
      return std::nullopt;
    if (!detail::inside_convex(hull, uv)) return std::nullopt;
    const Mat3 rt = pose.rotation().transpose();
    const Vec3 origin = -(rt * pose.translation());
    const Vec3 dir = rt * Vec3((uv.x() - k.cx) / k.fx, (uv.y() - k.cy) / k.fy, 1.0);
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      if (std::abs(dir[a]) < 1e-300) {
        if (origin[a] < box_lo[a] || origin[a] > box_hi[a]) return std::nullopt;
        continue;
      }
      double t0 = (box_lo[a] - origin[a]) / dir[a];
      double t1 = (box_hi[a] - origin[a]) / dir[a];
      if (t0 > t1) std::swap(t0, t1);
      t_near = std::max(t_near, t0);
      t_far = std::min(t_far, t1);
    }
    // Hull pixels always see the box up to rounding at the silhouette edge.
    if (t_far < 0.0) return std::nullopt;
    return std::max(std::min(t_near, t_far), kMinDepth);
  }
};

inline InstanceFootprint make_footprint(int instance, const ObjectInstance& inst,
                                        const ObjectModel& model, const CameraIntrinsics& k) {
  InstanceFootprint f;
  f.instance = instance;
  f.class_label = inst.model_id;
  f.pose = inst.pose;
  for (const auto& kp : model.keypoints)
    if (!(inst.pose.apply(kp).z() > kMinDepth)) return f;  // not visible
  f.keypoints = project_all(model.keypoints, inst.pose, k);
  std::vector<Vec2> projected;
  projected.reserve(model.surface_points.size());
  for (const auto& p : model.surface_points) {
    const Vec3 c = inst.pose.apply(p);
    if (c.z() > kMinDepth) projected.push_back(project_camera_point(c, k));
  }
  f.hull = detail::convex_hull(std::move(projected));
  if (f.hull.size() < 3) return f;
  f.image_lo = f.image_hi = f.hull.front();
  for (const auto& h : f.hull) {
    f.image_lo = f.image_lo.cwiseMin(h);
    f.image_hi = f.image_hi.cwiseMax(h);
  }
  const auto corners = bounding_box_corners(model.keypoints);
  f.box_lo = corners.front();
  f.box_hi = corners.back();
  f.visible = true;
  return f;
}

inline std::vector<InstanceFootprint> make_footprints(const Scene& scene,
                                                      std::span<const ObjectModel> models) {
  std::vector<InstanceFootprint> out;
  out.reserve(scene.instances.size());
  for (std::size_t i = 0; i < scene.instances.size(); ++i) {
    const auto& inst = scene.instances[i];
    out.push_back(make_footprint(static_cast<int>(i), inst, find_model(models, inst.model_id),
                                 scene.intrinsics));
  }
  return out;
}

struct SampleOwner {
  int instance = -1;
  double depth = std::numeric_limits<double>::infinity();
};

inline SampleOwner frontmost(std::span<const InstanceFootprint> footprints, const Vec2& uv,
                             const CameraIntrinsics& k) {
  SampleOwner best;
  for (const auto& f : footprints) {
    if (auto d = f.depth_at(uv, k); d && *d < best.depth) {
      best.depth = *d;
      best.instance = f.instance;
    }
  }
  return best;
}

inline constexpr int kSubsamplesPerAxis = 4;

/// Labels every cell with the frontmost instance covering it.
///
/// Each cell is probed at 4x4 sub-samples; each sub-sample goes to its
/// nearest covering instance (or background) and the cell takes the majority
/// label. Ties go to the nearest instance, background counting as infinitely
/// far. Instances with a keypoint behind the camera are skipped and listed in
/// `skipped_instances`.
inline GroundTruthGrid rasterize_ground_truth(const Scene& scene, std::span<const ObjectModel> models,
                                              const GridSpec& spec, const CameraIntrinsics& k) {
  const std::size_t n = models.empty() ? kDefaultKeypointCount : models.front().keypoints.size();
  GroundTruthGrid gt(spec, n);
  std::vector<InstanceFootprint> footprints;
  footprints.reserve(scene.instances.size());
  for (std::size_t i = 0; i < scene.instances.size(); ++i) {
    const auto& inst = scene.instances[i];
    auto f = make_footprint(static_cast<int>(i), inst, find_model(models, inst.model_id), k);
    if (!f.visible) gt.skipped_instances.push_back(static_cast<int>(i));
    footprints.push_back(std::move(f));
  }

  const int s = spec.size();
  const double cw = spec.cell_width(), ch = spec.cell_height();
  std::vector<int> votes(scene.instances.size() + 1);
  std::vector<double> nearest(scene.instances.size() + 1);
  for (int row = 0; row < s; ++row) {
    for (int col = 0; col < s; ++col) {
      std::fill(votes.begin(), votes.end(), 0);
      std::fill(nearest.begin(), nearest.end(), std::numeric_limits<double>::infinity());
      for (int sy = 0; sy < kSubsamplesPerAxis; ++sy) {
        for (int sx = 0; sx < kSubsamplesPerAxis; ++sx) {
          const Vec2 uv(col * cw + (sx + 0.5) * cw / kSubsamplesPerAxis,
                        row * ch + (sy + 0.5) * ch / kSubsamplesPerAxis);
          const auto owner = frontmost(footprints, uv, k);
          const std::size_t slot = static_cast<std::size_t>(owner.instance + 1);
          ++votes[slot];
          nearest[slot] = std::min(nearest[slot], owner.depth);
        }
      }
      std::size_t winner = 0;
      for (std::size_t v = 1; v < votes.size(); ++v) {
        if (votes[v] > votes[winner] || (votes[v] == votes[winner] && votes[v] > 0 &&
                                         nearest[v] < nearest[winner]))
          winner = v;
      }
      if (winner == 0) continue;
      auto& cell = gt.cells[static_cast<std::size_t>(row) * s + col];
      const auto& f = footprints[winner - 1];
      cell.instance = f.instance;
      cell.class_label = f.class_label;
      cell.keypoints = f.keypoints;
    }
  }
  return gt;
}

/// Noise-free prediction grid matching a ground truth: exact offsets, unit confidences.
inline PredictionGrid perfect_predictions(const GroundTruthGrid& gt) {
  PredictionGrid grid(gt.spec, gt.num_keypoints);
  for (std::size_t i = 0; i < gt.cells.size(); ++i) {
    const auto& g = gt.cells[i];
    if (g.class_label == 0) continue;
    auto& c = grid.cells[i];
    c.class_label = g.class_label;
    const CellIndex idx = cell_index(i, gt.spec);
    for (std::size_t k = 0; k < gt.num_keypoints; ++k)
      c.keypoints[k] = {encode_offset(g.keypoints[k], idx, gt.spec), 1.0};
  }
  return grid;
}

}  // namespace segpose
