#pragma once

#include <vector>

#include "segpose/geometry.hpp"

namespace segpose {

struct ObjectInstance {
  int model_id = 1;
  Pose pose;

  bool operator==(const ObjectInstance&) const = default;
};

/// Camera plus posed object instances; the unit of work for simulation and evaluation.
struct Scene {
  CameraIntrinsics intrinsics;
  std::vector<ObjectInstance> instances;

  int image_width() const { return intrinsics.width; }
  int image_height() const { return intrinsics.height; }

  bool operator==(const Scene&) const = default;
};

inline const ObjectModel& find_model(std::span<const ObjectModel> models, int id) {
  for (const auto& m : models)
    if (m.id == id) return m;
  throw Error(ErrorKind::OutOfRange, "unknown model id " + std::to_string(id));
}

}  // namespace segpose
