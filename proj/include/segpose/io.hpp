#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "segpose/evaluation.hpp"
#include "segpose/fusion.hpp"
#include "segpose/geometry.hpp"
#include "segpose/grid.hpp"
#include "segpose/pnp.hpp"
#include "segpose/scene.hpp"

namespace segpose::io {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Schema-checked field access. Errors name the offending path.

inline const json& field(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw Error(ErrorKind::SchemaViolation, path + " must be an object");
  auto it = j.find(key);
  if (it == j.end()) throw Error(ErrorKind::SchemaViolation, "missing required field '" + path + "." + key + "'");
  return *it;
}

inline double as_double(const json& j, const std::string& path) {
  if (!j.is_number()) throw Error(ErrorKind::SchemaViolation, path + " must be a number");
  return j.get<double>();
}

inline int as_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw Error(ErrorKind::SchemaViolation, path + " must be an integer");
  return j.get<int>();
}

inline bool as_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) throw Error(ErrorKind::SchemaViolation, path + " must be a boolean");
  return j.get<bool>();
}

inline std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw Error(ErrorKind::SchemaViolation, path + " must be a string");
  return j.get<std::string>();
}

inline const json& as_array(const json& j, const std::string& path) {
  if (!j.is_array()) throw Error(ErrorKind::SchemaViolation, path + " must be an array");
  return j;
}

inline double get_double(const json& j, const std::string& key, const std::string& path) {
  return as_double(field(j, key, path), path + "." + key);
}
inline int get_int(const json& j, const std::string& key, const std::string& path) {
  return as_int(field(j, key, path), path + "." + key);
}
inline std::string idx_path(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

template <int N>
Eigen::Matrix<double, N, 1> as_vec(const json& j, const std::string& path) {
  as_array(j, path);
  if (j.size() != N)
    throw Error(ErrorKind::SchemaViolation, path + " must have " + std::to_string(N) + " entries");
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v[i] = as_double(j[static_cast<std::size_t>(i)], idx_path(path, static_cast<std::size_t>(i)));
  return v;
}

template <int N>
json vec_json(const Eigen::Matrix<double, N, 1>& v) {
  json a = json::array();
  for (int i = 0; i < N; ++i) a.push_back(v[i]);
  return a;
}

inline void check_version(const json& j, const std::string& path) {
  const int v = get_int(j, "schema_version", path);
  if (v != kSchemaVersion)
    throw Error(ErrorKind::SchemaViolation, path + ".schema_version " + std::to_string(v) + " is not supported");
}

// ---------------------------------------------------------------------------
// Geometry

inline json to_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline CameraIntrinsics intrinsics_from_json(const json& j, const std::string& path = "intrinsics") {
  CameraIntrinsics k{get_double(j, "fx", path), get_double(j, "fy", path),
                     get_double(j, "cx", path), get_double(j, "cy", path),
                     get_int(j, "width", path), get_int(j, "height", path)};
  try {
    k.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::SchemaViolation, path + ": " + e.what());
  }
  return k;
}

inline json to_json(const Pose& p) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r) rot.push_back({p.rotation()(r, 0), p.rotation()(r, 1), p.rotation()(r, 2)});
  return {{"rotation", rot}, {"translation", vec_json<3>(p.translation())}};
}

inline Pose pose_from_json(const json& j, const std::string& path = "pose") {
  const json& rot = as_array(field(j, "rotation", path), path + ".rotation");
  if (rot.size() != 3) throw Error(ErrorKind::SchemaViolation, path + ".rotation must be 3x3");
  Mat3 r;
  for (int i = 0; i < 3; ++i) r.row(i) = as_vec<3>(rot[static_cast<std::size_t>(i)], idx_path(path + ".rotation", static_cast<std::size_t>(i))).transpose();
  const Vec3 t = as_vec<3>(field(j, "translation", path), path + ".translation");
  try {
    return Pose(r, t);
  } catch (const Error& e) {
    throw Error(ErrorKind::SchemaViolation, path + ": " + e.what());
  }
}

inline json points_json(std::span<const Vec3> pts) {
  json a = json::array();
  for (const auto& p : pts) a.push_back(vec_json<3>(p));
  return a;
}

inline std::vector<Vec3> points_from_json(const json& j, const std::string& path) {
  as_array(j, path);
  std::vector<Vec3> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(as_vec<3>(j[i], idx_path(path, i)));
  return out;
}

inline json to_json(const ObjectModel& m) {
  return {{"id", m.id},
          {"name", m.name},
          {"keypoints", points_json(m.keypoints)},
          {"surface_points", points_json(m.surface_points)},
          {"diameter", m.diameter},
          {"symmetric", m.symmetric}};
}

/// Loads a model; the diameter is recomputed and must agree to 1e-6 relative,
/// and the keypoints must be the bounding-box corners of the surface points.
inline ObjectModel model_from_json(const json& j, const std::string& path = "model") {
  ObjectModel m;
  m.id = get_int(j, "id", path);
  m.name = as_string(field(j, "name", path), path + ".name");
  m.keypoints = points_from_json(field(j, "keypoints", path), path + ".keypoints");
  m.surface_points = points_from_json(field(j, "surface_points", path), path + ".surface_points");
  m.diameter = get_double(j, "diameter", path);
  m.symmetric = as_bool(field(j, "symmetric", path), path + ".symmetric");
  if (m.id < 1) throw Error(ErrorKind::SchemaViolation, path + ".id must be >= 1");
  if (m.surface_points.empty()) throw Error(ErrorKind::EmptyModel, path + ".surface_points is empty");
  const double d = point_set_diameter(m.surface_points);
  if (!(m.diameter > 0.0) || std::abs(d - m.diameter) > 1e-6 * d)
    throw Error(ErrorKind::SchemaViolation, path + ".diameter disagrees with the surface points");
  const auto corners = bounding_box_corners(m.surface_points);
  if (m.keypoints.size() != corners.size())
    throw Error(ErrorKind::SchemaViolation, path + ".keypoints must hold the 8 bounding-box corners");
  for (std::size_t i = 0; i < corners.size(); ++i)
    if ((m.keypoints[i] - corners[i]).norm() > 1e-9 * (1.0 + corners[i].norm()))
      throw Error(ErrorKind::SchemaViolation, idx_path(path + ".keypoints", i) + " is not a bounding-box corner");
  return m;
}

inline json models_to_json(std::span<const ObjectModel> models) {
  json a = json::array();
  for (const auto& m : models) a.push_back(to_json(m));
  return {{"schema_version", kSchemaVersion}, {"models", a}};
}

/// Accepts either a library file {schema_version, models:[...]} or a single model object.
inline std::vector<ObjectModel> models_from_json(const json& j) {
  if (j.is_object() && j.contains("models")) {
    check_version(j, "$");
    const json& a = as_array(j["models"], "$.models");
    std::vector<ObjectModel> out;
    for (std::size_t i = 0; i < a.size(); ++i) out.push_back(model_from_json(a[i], idx_path("$.models", i)));
    return out;
  }
  return {model_from_json(j, "$")};
}

// ---------------------------------------------------------------------------
// Scenes

inline json to_json(const Scene& s) {
  json inst = json::array();
  for (const auto& i : s.instances) {
    json p = to_json(i.pose);
    p["model_id"] = i.model_id;
    inst.push_back(p);
  }
  return {{"schema_version", kSchemaVersion}, {"intrinsics", to_json(s.intrinsics)}, {"instances", inst}};
}

inline Scene scene_from_json(const json& j) {
  check_version(j, "$");
  Scene s;
  s.intrinsics = intrinsics_from_json(field(j, "intrinsics", "$"), "$.intrinsics");
  const json& a = as_array(field(j, "instances", "$"), "$.instances");
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::string p = idx_path("$.instances", i);
    s.instances.push_back({get_int(a[i], "model_id", p), pose_from_json(a[i], p)});
  }
  return s;
}

// ---------------------------------------------------------------------------
// Grids

inline json to_json(const GridSpec& g) {
  return {{"S", g.size()}, {"image_w", g.image_width()}, {"image_h", g.image_height()}, {"norm_span", g.norm_span()}};
}

inline GridSpec grid_spec_from_json(const json& j, const std::string& path = "spec") {
  try {
    return GridSpec(get_int(j, "S", path), get_int(j, "image_w", path), get_int(j, "image_h", path),
                    get_double(j, "norm_span", path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::SchemaViolation) throw;
    throw Error(ErrorKind::SchemaViolation, path + ": " + e.what());
  }
}

/// Prediction grid file; only foreground cells are stored.
inline json to_json(const PredictionGrid& g) {
  json cells = json::array();
  for (std::size_t c = 0; c < g.cells.size(); ++c) {
    const auto& cell = g.cells[c];
    if (cell.class_label == 0) continue;
    const CellIndex idx = cell_index(c, g.spec);
    json kps = json::array();
    for (const auto& kp : cell.keypoints)
      kps.push_back({{"dx", kp.offset.x()}, {"dy", kp.offset.y()}, {"conf", kp.confidence}});
    json jc = {{"row", idx.row}, {"col", idx.col}, {"label", cell.class_label},
               {"instance", cell.instance}, {"keypoints", kps}};
    if (!cell.class_scores.empty()) jc["scores"] = cell.class_scores;
    cells.push_back(jc);
  }
  return {{"schema_version", kSchemaVersion}, {"spec", to_json(g.spec)},
          {"num_keypoints", g.num_keypoints}, {"cells", cells}};
}

inline PredictionGrid prediction_grid_from_json(const json& j) {
  check_version(j, "$");
  const GridSpec spec = grid_spec_from_json(field(j, "spec", "$"), "$.spec");
  const int n = get_int(j, "num_keypoints", "$");
  if (n < 1) throw Error(ErrorKind::SchemaViolation, "$.num_keypoints must be >= 1");
  PredictionGrid g(spec, static_cast<std::size_t>(n));
  const json& cells = as_array(field(j, "cells", "$"), "$.cells");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::string p = idx_path("$.cells", i);
    const CellIndex idx{get_int(cells[i], "row", p), get_int(cells[i], "col", p)};
    try {
      check_index(idx, spec);
    } catch (const Error&) {
      throw Error(ErrorKind::SchemaViolation, p + " lies outside the grid");
    }
    auto& cell = g.at(idx);
    cell.class_label = get_int(cells[i], "label", p);
    if (cell.class_label < 1) throw Error(ErrorKind::SchemaViolation, p + ".label must be a foreground class");
    cell.instance = cells[i].contains("instance") ? get_int(cells[i], "instance", p) : -1;
    const json& kps = as_array(field(cells[i], "keypoints", p), p + ".keypoints");
    if (kps.size() != static_cast<std::size_t>(n))
      throw Error(ErrorKind::SchemaViolation, p + ".keypoints must have num_keypoints entries");
    for (std::size_t k = 0; k < kps.size(); ++k) {
      const std::string kp = idx_path(p + ".keypoints", k);
      const double conf = get_double(kps[k], "conf", kp);
      if (!(conf >= 0.0 && conf <= 1.0)) throw Error(ErrorKind::SchemaViolation, kp + ".conf outside [0,1]");
      cell.keypoints[k] = {Vec2(get_double(kps[k], "dx", kp), get_double(kps[k], "dy", kp)), conf};
    }
    if (cells[i].contains("scores")) {
      const json& sc = as_array(cells[i]["scores"], p + ".scores");
      for (std::size_t k = 0; k < sc.size(); ++k) cell.class_scores.push_back(as_double(sc[k], idx_path(p + ".scores", k)));
    }
  }
  return g;
}

inline json to_json(const GroundTruthGrid& g) {
  json cells = json::array();
  for (std::size_t c = 0; c < g.cells.size(); ++c) {
    const auto& cell = g.cells[c];
    if (cell.class_label == 0) continue;
    const CellIndex idx = cell_index(c, g.spec);
    json kps = json::array();
    for (const auto& kp : cell.keypoints) kps.push_back(vec_json<2>(kp));
    cells.push_back({{"row", idx.row}, {"col", idx.col}, {"label", cell.class_label},
                     {"instance", cell.instance}, {"keypoints", kps}});
  }
  return {{"schema_version", kSchemaVersion}, {"spec", to_json(g.spec)},
          {"num_keypoints", g.num_keypoints}, {"skipped_instances", g.skipped_instances},
          {"cells", cells}};
}

inline GroundTruthGrid ground_truth_from_json(const json& j) {
  check_version(j, "$");
  const GridSpec spec = grid_spec_from_json(field(j, "spec", "$"), "$.spec");
  const int n = get_int(j, "num_keypoints", "$");
  if (n < 1) throw Error(ErrorKind::SchemaViolation, "$.num_keypoints must be >= 1");
  GroundTruthGrid g(spec, static_cast<std::size_t>(n));
  if (j.contains("skipped_instances")) {
    const json& sk = as_array(j["skipped_instances"], "$.skipped_instances");
    for (std::size_t i = 0; i < sk.size(); ++i) g.skipped_instances.push_back(as_int(sk[i], idx_path("$.skipped_instances", i)));
  }
  const json& cells = as_array(field(j, "cells", "$"), "$.cells");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::string p = idx_path("$.cells", i);
    const CellIndex idx{get_int(cells[i], "row", p), get_int(cells[i], "col", p)};
    try {
      check_index(idx, spec);
    } catch (const Error&) {
      throw Error(ErrorKind::SchemaViolation, p + " lies outside the grid");
    }
    auto& cell = g.cells[flat_index(idx, spec)];
    cell.class_label = get_int(cells[i], "label", p);
    cell.instance = get_int(cells[i], "instance", p);
    const json& kps = as_array(field(cells[i], "keypoints", p), p + ".keypoints");
    if (kps.size() != static_cast<std::size_t>(n))
      throw Error(ErrorKind::SchemaViolation, p + ".keypoints must have num_keypoints entries");
    for (std::size_t k = 0; k < kps.size(); ++k) cell.keypoints.push_back(as_vec<2>(kps[k], idx_path(p + ".keypoints", k)));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Correspondences and solutions

inline json to_json(const CorrespondenceSet& s) {
  json pairs = json::array();
  for (const auto& p : s.pairs)
    pairs.push_back({{"keypoint", p.keypoint}, {"object", vec_json<3>(p.object_point)},
                     {"image", vec_json<2>(p.image_point)}, {"confidence", p.confidence},
                     {"cell", p.cell}});
  return {{"class", s.class_label}, {"strategy", s.strategy}, {"centroid", vec_json<2>(s.centroid)},
          {"cells", s.cluster_cells}, {"pairs", pairs}};
}

inline CorrespondenceSet correspondence_set_from_json(const json& j, const std::string& path) {
  CorrespondenceSet s;
  s.class_label = get_int(j, "class", path);
  s.strategy = as_string(field(j, "strategy", path), path + ".strategy");
  s.centroid = as_vec<2>(field(j, "centroid", path), path + ".centroid");
  s.cluster_cells = static_cast<std::size_t>(get_int(j, "cells", path));
  const json& pairs = as_array(field(j, "pairs", path), path + ".pairs");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::string p = idx_path(path + ".pairs", i);
    Correspondence c;
    const int kp = get_int(pairs[i], "keypoint", p);
    if (kp < 0) throw Error(ErrorKind::SchemaViolation, p + ".keypoint must be >= 0");
    c.keypoint = static_cast<std::size_t>(kp);
    c.object_point = as_vec<3>(field(pairs[i], "object", p), p + ".object");
    c.image_point = as_vec<2>(field(pairs[i], "image", p), p + ".image");
    c.confidence = get_double(pairs[i], "confidence", p);
    c.cell = pairs[i].contains("cell") ? static_cast<std::size_t>(get_int(pairs[i], "cell", p)) : 0;
    s.pairs.push_back(c);
  }
  return s;
}

struct CorrespondenceFile {
  CameraIntrinsics intrinsics;
  std::vector<CorrespondenceSet> sets;
};

inline json to_json(const CorrespondenceFile& f) {
  json sets = json::array();
  for (const auto& s : f.sets) sets.push_back(to_json(s));
  return {{"schema_version", kSchemaVersion}, {"intrinsics", to_json(f.intrinsics)}, {"sets", sets}};
}

inline CorrespondenceFile correspondence_file_from_json(const json& j) {
  check_version(j, "$");
  CorrespondenceFile f;
  f.intrinsics = intrinsics_from_json(field(j, "intrinsics", "$"), "$.intrinsics");
  const json& sets = as_array(field(j, "sets", "$"), "$.sets");
  for (std::size_t i = 0; i < sets.size(); ++i) f.sets.push_back(correspondence_set_from_json(sets[i], idx_path("$.sets", i)));
  return f;
}

/// Outcome of solving one correspondence set.
struct SolvedSet {
  int class_label = 0;
  std::string strategy;
  Vec2 centroid = Vec2::Zero();
  bool ok = false;
  std::string error;  // error kind when !ok
  PnpSolution solution;
  double elapsed_us = 0.0;  // fuse + solve wall time; not serialized
};

inline json to_json(const SolvedSet& s) {
  json j = {{"class", s.class_label}, {"strategy", s.strategy}, {"centroid", vec_json<2>(s.centroid)},
            {"ok", s.ok}};
  if (s.ok) {
    json inl = json::array();
    for (auto f : s.solution.inliers) inl.push_back(f != 0);
    j["pose"] = to_json(s.solution.pose);
    j["inliers"] = inl;
    j["inlier_count"] = s.solution.inlier_count;
    j["mean_reproj_px"] = s.solution.mean_reproj_px;
    j["iterations"] = s.solution.iterations;
  } else {
    j["error"] = s.error;
  }
  return j;
}

inline SolvedSet solved_set_from_json(const json& j, const std::string& path) {
  SolvedSet s;
  s.class_label = get_int(j, "class", path);
  s.strategy = as_string(field(j, "strategy", path), path + ".strategy");
  s.centroid = as_vec<2>(field(j, "centroid", path), path + ".centroid");
  s.ok = as_bool(field(j, "ok", path), path + ".ok");
  if (!s.ok) {
    s.error = j.contains("error") ? as_string(j["error"], path + ".error") : std::string();
    return s;
  }
  s.solution.pose = pose_from_json(field(j, "pose", path), path + ".pose");
  const json& inl = as_array(field(j, "inliers", path), path + ".inliers");
  for (std::size_t i = 0; i < inl.size(); ++i) s.solution.inliers.push_back(as_bool(inl[i], idx_path(path + ".inliers", i)) ? 1 : 0);
  s.solution.inlier_count = static_cast<std::size_t>(get_int(j, "inlier_count", path));
  s.solution.mean_reproj_px = get_double(j, "mean_reproj_px", path);
  s.solution.iterations = j.contains("iterations") ? get_int(j, "iterations", path) : 0;
  return s;
}

inline json solutions_to_json(std::span<const SolvedSet> sets) {
  json a = json::array();
  for (const auto& s : sets) a.push_back(to_json(s));
  return {{"schema_version", kSchemaVersion}, {"solutions", a}};
}

inline std::vector<SolvedSet> solutions_from_json(const json& j) {
  check_version(j, "$");
  const json& a = as_array(field(j, "solutions", "$"), "$.solutions");
  std::vector<SolvedSet> out;
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(solved_set_from_json(a[i], idx_path("$.solutions", i)));
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation output

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double double_or_inf(const json& j, const std::string& key, const std::string& path) {
  const json& v = field(j, key, path);
  if (v.is_null()) return std::numeric_limits<double>::infinity();
  return as_double(v, path + "." + key);
}

inline json to_json(const EvalRecord& r) {
  return {{"scene", r.scene}, {"instance", r.instance}, {"class", r.class_label},
          {"strategy", r.strategy}, {"detected", r.detected}, {"solved", r.solved},
          {"behind_camera", r.behind_camera}, {"rep_px", finite_or_null(r.rep_px)},
          {"add_units", finite_or_null(r.add_units)},
          {"rotation_error_rad", finite_or_null(r.rotation_error_rad)},
          {"correct_rep5", r.correct_rep5}, {"correct_add01d", r.correct_add01d},
          {"solve_time_us", r.solve_time_us}};
}

inline EvalRecord record_from_json(const json& j, const std::string& path) {
  EvalRecord r;
  r.scene = get_int(j, "scene", path);
  r.instance = get_int(j, "instance", path);
  r.class_label = get_int(j, "class", path);
  r.strategy = as_string(field(j, "strategy", path), path + ".strategy");
  r.detected = as_bool(field(j, "detected", path), path + ".detected");
  r.solved = as_bool(field(j, "solved", path), path + ".solved");
  r.behind_camera = j.contains("behind_camera") && as_bool(j["behind_camera"], path + ".behind_camera");
  r.rep_px = double_or_inf(j, "rep_px", path);
  r.add_units = double_or_inf(j, "add_units", path);
  r.rotation_error_rad = j.contains("rotation_error_rad") ? double_or_inf(j, "rotation_error_rad", path)
                                                          : std::numeric_limits<double>::infinity();
  r.correct_rep5 = as_bool(field(j, "correct_rep5", path), path + ".correct_rep5");
  r.correct_add01d = as_bool(field(j, "correct_add01d", path), path + ".correct_add01d");
  r.solve_time_us = j.contains("solve_time_us") ? get_double(j, "solve_time_us", path) : 0.0;
  return r;
}

inline json records_to_json(std::span<const EvalRecord> records,
                            const std::map<std::string, std::size_t>& false_positives = {}) {
  json a = json::array();
  for (const auto& r : records) a.push_back(to_json(r));
  return {{"schema_version", kSchemaVersion}, {"records", a}, {"false_positives", false_positives}};
}

struct RecordFile {
  std::vector<EvalRecord> records;
  std::map<std::string, std::size_t> false_positives;
};

inline RecordFile records_from_json(const json& j) {
  check_version(j, "$");
  RecordFile f;
  const json& a = as_array(field(j, "records", "$"), "$.records");
  for (std::size_t i = 0; i < a.size(); ++i) f.records.push_back(record_from_json(a[i], idx_path("$.records", i)));
  if (j.contains("false_positives")) {
    const json& fp = j["false_positives"];
    if (!fp.is_object()) throw Error(ErrorKind::SchemaViolation, "$.false_positives must be an object");
    for (auto it = fp.begin(); it != fp.end(); ++it)
      f.false_positives[it.key()] = static_cast<std::size_t>(as_int(it.value(), "$.false_positives." + it.key()));
  }
  return f;
}

inline json to_json(const AccuracyTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"strategy", r.strategy}, {"class", r.class_label}, {"count", r.count},
                    {"rep5_correct", r.rep5_correct}, {"add01d_correct", r.add01d_correct},
                    {"rep5_pct", r.rep5_pct()}, {"add01d_pct", r.add01d_pct()}});
  return {{"schema_version", kSchemaVersion}, {"rows", rows}, {"false_positives", t.false_positives}};
}

inline AccuracyTable table_from_json(const json& j) {
  check_version(j, "$");
  AccuracyTable t;
  const json& rows = as_array(field(j, "rows", "$"), "$.rows");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string p = idx_path("$.rows", i);
    AccuracyRow r;
    r.strategy = as_string(field(rows[i], "strategy", p), p + ".strategy");
    r.class_label = get_int(rows[i], "class", p);
    r.count = static_cast<std::size_t>(get_int(rows[i], "count", p));
    r.rep5_correct = static_cast<std::size_t>(get_int(rows[i], "rep5_correct", p));
    r.add01d_correct = static_cast<std::size_t>(get_int(rows[i], "add01d_correct", p));
    t.rows.push_back(r);
  }
  if (j.contains("false_positives"))
    for (auto it = j["false_positives"].begin(); it != j["false_positives"].end(); ++it)
      t.false_positives[it.key()] = static_cast<std::size_t>(as_int(it.value(), "$.false_positives." + it.key()));
  return t;
}

// ---------------------------------------------------------------------------
// Files

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::SchemaViolation, path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorKind::IoError, "failed writing " + path);
}

inline void write_json_file(const std::string& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace segpose::io
