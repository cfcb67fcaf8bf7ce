#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "segpose/grid.hpp"
#include "segpose/losses.hpp"
#include "segpose/random.hpp"
#include "segpose/scene.hpp"

namespace segpose {

/// Parametric stand-in for the network's prediction error.
struct NoiseModel {
  double inlier_sigma_px = 3.0;
  double outlier_rate = 0.2;
  double outlier_sigma_px = 40.0;
  double confidence_jitter = 0.1;
  double label_flip_rate = 0.02;
  double tau = 1.0;

  void validate() const {
    auto rate = [](double r) { return r >= 0.0 && r <= 1.0; };
    if (!(inlier_sigma_px >= 0.0) || !(outlier_sigma_px >= 0.0))
      throw Error(ErrorKind::ConfigError, "noise sigmas must be non-negative");
    if (!rate(outlier_rate) || !rate(label_flip_rate))
      throw Error(ErrorKind::ConfigError, "noise rates must lie in [0, 1]");
    if (!(confidence_jitter >= 0.0 && confidence_jitter < 1.0))
      throw Error(ErrorKind::ConfigError, "confidence_jitter must lie in [0, 1)");
    if (!(tau > 0.0)) throw Error(ErrorKind::ConfigError, "tau must be positive");
  }

  static NoiseModel zero() { return {0.0, 0.0, 0.0, 0.0, 0.0, 1.0}; }
  static NoiseModel ablation() { return {}; }

  bool operator==(const NoiseModel&) const = default;
};

/// Named presets: "zero", "default" (the fusion ablation profile), "mild", "heavy".
inline NoiseModel noise_profile(std::string_view name) {
  if (name == "zero") return NoiseModel::zero();
  if (name == "default") return NoiseModel::ablation();
  if (name == "mild") return {1.5, 0.1, 20.0, 0.05, 0.01, 1.0};
  if (name == "heavy") return {5.0, 0.35, 60.0, 0.2, 0.05, 1.0};
  throw Error(ErrorKind::ConfigError, "unknown noise profile '" + std::string(name) + "'");
}

struct SceneConfig {
  int min_objects = 3;
  int max_objects = 8;
  double min_depth = 0.6;  // camera-frame depth of the model centroid, model units
  double max_depth = 1.3;
  double max_occlusion = 0.5;   // largest hidden fraction of any instance's silhouette
  int visibility_stride_px = 4;
  int max_attempts = 1000;      // per instance
  // Same-class instances must project their keypoint centroids at least this
  // far apart, otherwise no pixel-threshold clustering can tell them apart.
  double min_same_class_separation_px = 60.0;

  void validate() const {
    if (min_objects < 0 || max_objects < min_objects)
      throw Error(ErrorKind::ConfigError, "object count range is invalid");
    if (!(min_depth > 0.0) || max_depth < min_depth)
      throw Error(ErrorKind::ConfigError, "depth range is invalid");
    if (!(max_occlusion >= 0.0 && max_occlusion <= 1.0))
      throw Error(ErrorKind::ConfigError, "max_occlusion must lie in [0, 1]");
    if (!(min_same_class_separation_px >= 0.0))
      throw Error(ErrorKind::ConfigError, "min_same_class_separation_px must be non-negative");
    if (visibility_stride_px < 1 || max_attempts < 1)
      throw Error(ErrorKind::ConfigError, "stride and attempts must be positive");
  }

  bool operator==(const SceneConfig&) const = default;
};

/// 608 x 608 pinhole camera used throughout the synthetic experiments.
inline CameraIntrinsics default_intrinsics() { return {600.0, 600.0, 304.0, 304.0, 608, 608}; }

/// Small library of convex objects (boxes and cylinders), ids 1..6.
inline std::vector<ObjectModel> default_model_library(std::uint64_t seed = 7,
                                                      std::size_t samples = kDefaultSurfaceSamples) {
  Rng rng = make_rng(seed, 0);
  std::vector<ObjectModel> models;
  models.push_back(make_object_model(1, "box", sample_box_surface({0.10, 0.07, 0.05}, samples, rng), false));
  models.push_back(make_object_model(2, "carton", sample_box_surface({0.06, 0.06, 0.12}, samples, rng), false));
  models.push_back(make_object_model(3, "can", sample_cylinder_surface(0.035, 0.10, samples, rng), true));
  models.push_back(make_object_model(4, "slab", sample_box_surface({0.12, 0.09, 0.03}, samples, rng), false));
  models.push_back(make_object_model(5, "cube", sample_box_surface({0.07, 0.07, 0.07}, samples, rng), true));
  models.push_back(make_object_model(6, "tube", sample_cylinder_surface(0.025, 0.14, samples, rng), true));
  return models;
}

inline Vec3 surface_centroid(const ObjectModel& m) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : m.surface_points) c += p;
  return c / static_cast<double>(m.surface_points.size());
}

struct Visibility {
  std::vector<int> total;    // samples inside each instance's silhouette
  std::vector<int> visible;  // samples where the instance is frontmost
};

inline Visibility instance_visibility(std::span<const InstanceFootprint> footprints,
                                      const CameraIntrinsics& k, int stride) {
  Visibility v;
  v.total.assign(footprints.size(), 0);
  v.visible.assign(footprints.size(), 0);
  for (std::size_t i = 0; i < footprints.size(); ++i) {
    const auto& f = footprints[i];
    if (!f.visible) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(f.image_lo.x() / stride)));
    const int y0 = std::max(0, static_cast<int>(std::floor(f.image_lo.y() / stride)));
    const int x1 = std::min((k.width - 1) / stride, static_cast<int>(std::ceil(f.image_hi.x() / stride)));
    const int y1 = std::min((k.height - 1) / stride, static_cast<int>(std::ceil(f.image_hi.y() / stride)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const Vec2 uv((x + 0.5) * stride, (y + 0.5) * stride);
        const auto d = f.depth_at(uv, k);
        if (!d) continue;
        ++v.total[i];
        if (frontmost(footprints, uv, k).instance == f.instance) ++v.visible[i];
      }
  }
  return v;
}

namespace detail {

inline bool instance_in_frustum(const ObjectInstance& inst, const ObjectModel& model,
                                const CameraIntrinsics& k) {
  for (const auto& p : model.surface_points)
    if (!(inst.pose.apply(p).z() > kMinDepth)) return false;
  for (const auto& kp : model.keypoints)
    if (!k.contains(project(kp, inst.pose, k))) return false;
  return k.contains(project(surface_centroid(model), inst.pose, k));
}

}  // namespace detail

/// Random scene: instance count uniform in [min_objects, max_objects], each
/// instance a uniformly chosen model at a uniform rotation, its centroid
/// on a uniformly drawn pixel at a uniform depth. A draw is kept only if all
/// keypoints project inside the image, bounding spheres stay disjoint,
/// same-class instances stay apart in the image and no instance ends up more
/// than `max_occlusion` hidden.
inline Scene sample_scene(const SceneConfig& config, std::span<const ObjectModel> models,
                          const CameraIntrinsics& k, std::uint64_t seed) {
  config.validate();
  k.validate();
  if (models.empty()) throw Error(ErrorKind::InvalidArgument, "model library is empty");
  Rng rng = make_rng(seed, 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Scene scene;
  scene.intrinsics = k;
  const int count = std::uniform_int_distribution<int>(config.min_objects, config.max_objects)(rng);
  std::vector<InstanceFootprint> footprints;
  for (int n = 0; n < count; ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < config.max_attempts && !placed; ++attempt) {
      const auto& model = models[std::uniform_int_distribution<std::size_t>(0, models.size() - 1)(rng)];
      const Mat3 r = random_rotation(rng);
      const double u = unit(rng) * k.width, v = unit(rng) * k.height;
      const double depth = config.min_depth + unit(rng) * (config.max_depth - config.min_depth);
      const Vec3 centre = depth * Vec3((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
      ObjectInstance inst{model.id, Pose(r, centre - r * surface_centroid(model))};
      if (!detail::instance_in_frustum(inst, model, k)) continue;

      bool overlaps = false;
      Vec2 kp_centre = Vec2::Zero();
      for (const auto& kp : model.keypoints) kp_centre += project(kp, inst.pose, k);
      kp_centre /= static_cast<double>(model.keypoints.size());
      for (const auto& other : scene.instances) {
        const auto& om = find_model(models, other.model_id);
        const Vec3 oc = other.pose.apply(surface_centroid(om));
        if ((oc - centre).norm() < 0.5 * (om.diameter + model.diameter)) overlaps = true;
        if (other.model_id == model.id) {
          Vec2 oc2 = Vec2::Zero();
          for (const auto& kp : om.keypoints) oc2 += project(kp, other.pose, k);
          oc2 /= static_cast<double>(om.keypoints.size());
          if ((oc2 - kp_centre).norm() < config.min_same_class_separation_px) overlaps = true;
        }
      }
      if (overlaps) continue;

      auto trial = footprints;
      trial.push_back(make_footprint(static_cast<int>(scene.instances.size()), inst, model, k));
      const auto vis = instance_visibility(trial, k, config.visibility_stride_px);
      bool ok = true;
      for (std::size_t i = 0; i < trial.size() && ok; ++i)
        ok = vis.total[i] > 0 &&
             vis.visible[i] >= (1.0 - config.max_occlusion) * static_cast<double>(vis.total[i]);
      if (!ok) continue;
      footprints = std::move(trial);
      scene.instances.push_back(inst);
      placed = true;
    }
    if (!placed)
      throw Error(ErrorKind::SamplingExhausted,
                  "could not place instance " + std::to_string(n) + " within the attempt budget");
  }
  return scene;
}

struct Synthesis {
  PredictionGrid prediction;
  GroundTruthGrid truth;
};

/// Emulates network output for a scene.
///
/// Starting from the rasterized ground truth, every keypoint of every
/// foreground cell is displaced by Gaussian pixel noise (outlier sigma with
/// probability `outlier_rate`, inlier sigma otherwise). Its confidence is
/// exp(-tau |delta|) plus uniform jitter, clamped to [0, 1], with delta in
/// normalized units. With probability `label_flip_rate` a cell's label is
/// replaced by a different object class.
inline Synthesis synthesize_predictions(const Scene& scene, std::span<const ObjectModel> models,
                                        const GridSpec& spec, const CameraIntrinsics& k,
                                        const NoiseModel& noise, std::uint64_t seed) {
  noise.validate();
  Synthesis out;
  out.truth = rasterize_ground_truth(scene, models, spec, k);
  out.prediction = PredictionGrid(spec, out.truth.num_keypoints);
  Rng rng = make_rng(seed, 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> classes;
  for (const auto& m : models) classes.push_back(m.id);
  std::sort(classes.begin(), classes.end());

  for (std::size_t c = 0; c < out.truth.cells.size(); ++c) {
    const auto& g = out.truth.cells[c];
    if (g.class_label == 0) continue;
    auto& cell = out.prediction.cells[c];
    const CellIndex idx = cell_index(c, spec);
    cell.class_label = g.class_label;
    cell.instance = g.instance;
    for (std::size_t i = 0; i < out.truth.num_keypoints; ++i) {
      const bool outlier = unit(rng) < noise.outlier_rate;
      const double sigma = outlier ? noise.outlier_sigma_px : noise.inlier_sigma_px;
      const double nx = gauss(rng), ny = gauss(rng);
      const double jitter = (2.0 * unit(rng) - 1.0) * noise.confidence_jitter;
      const Vec2 predicted = g.keypoints[i] + sigma * Vec2(nx, ny);
      KeypointPrediction kp;
      kp.offset = encode_offset(predicted, idx, spec);
      const Vec2 delta = residual(kp, idx, g.keypoints[i], spec);
      kp.confidence = std::clamp(confidence_target(delta, noise.tau) + jitter, 0.0, 1.0);
      cell.keypoints[i] = kp;
    }
    if (unit(rng) < noise.label_flip_rate && classes.size() > 1) {
      std::vector<int> others;
      for (int cl : classes)
        if (cl != g.class_label) others.push_back(cl);
      cell.class_label = others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];
    }
  }
  return out;
}

}  // namespace segpose
