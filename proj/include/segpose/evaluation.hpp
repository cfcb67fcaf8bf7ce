#pragma once

#include <algorithm>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "segpose/geometry.hpp"
#include "segpose/scene.hpp"

namespace segpose {

inline constexpr double kRepThresholdPx = 5.0;
inline constexpr double kAddDiameterFraction = 0.1;

struct EvalRecord {
  int scene = 0;
  int instance = 0;
  int class_label = 0;
  std::string strategy;
  bool detected = false;      // a cluster was matched to this instance
  bool solved = false;        // PnP produced a pose
  bool behind_camera = false; // metrics could not be computed
  double rep_px = std::numeric_limits<double>::infinity();
  double add_units = std::numeric_limits<double>::infinity();
  double rotation_error_rad = std::numeric_limits<double>::infinity();
  bool correct_rep5 = false;
  bool correct_add01d = false;
  double solve_time_us = 0.0;
};

/// Scores one estimate. Symmetric models use ADD-S and the symmetric REP.
/// Thresholds are strict: rep < 5 px, add < 0.1 * diameter.
inline EvalRecord evaluate_instance(const Pose& est, const Pose& gt, const ObjectModel& model,
                                    const CameraIntrinsics& k) {
  EvalRecord r;
  r.class_label = model.id;
  r.detected = true;
  r.solved = true;
  r.rotation_error_rad = rotation_geodesic(est, gt);
  r.add_units = model.symmetric ? adds_metric(est, gt, model) : add_metric(est, gt, model);
  try {
    r.rep_px = rep_metric(est, gt, model, k, model.symmetric);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::BehindCamera) throw;
    r.behind_camera = true;
    r.rep_px = std::numeric_limits<double>::infinity();
  }
  r.correct_rep5 = r.rep_px < kRepThresholdPx;
  r.correct_add01d = !r.behind_camera && r.add_units < kAddDiameterFraction * model.diameter;
  return r;
}

/// Record for a ground-truth instance that produced no pose.
inline EvalRecord missed_instance(int class_label, bool detected) {
  EvalRecord r;
  r.class_label = class_label;
  r.detected = detected;
  return r;
}

struct Detection {
  int class_label = 0;
  Vec2 centroid = Vec2::Zero();
};

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> matches;  // (detection, instance)
  std::vector<std::size_t> missed_instances;
  std::vector<std::size_t> false_positives;

  // Detection index matched to `instance`, if any.
  std::optional<std::size_t> detection_for(std::size_t instance) const {
    for (const auto& [d, i] : matches)
      if (i == instance) return d;
    return std::nullopt;
  }
};

inline Vec2 projected_keypoint_centroid(const ObjectInstance& inst, const ObjectModel& model,
                                        const CameraIntrinsics& k) {
  Vec2 sum = Vec2::Zero();
  for (const auto& kp : model.keypoints) sum += project(kp, inst.pose, k);
  return sum / static_cast<double>(model.keypoints.size());
}

/// Greedy one-to-one matching within each class, closest pair first
/// (cluster centroid vs. centroid of the instance's projected keypoints).
inline Assignment match_detections(std::span<const Detection> detections, const Scene& scene,
                                   std::span<const ObjectModel> models) {
  std::vector<Vec2> targets;
  std::vector<bool> projectable;
  for (const auto& inst : scene.instances) {
    try {
      targets.push_back(projected_keypoint_centroid(inst, find_model(models, inst.model_id), scene.intrinsics));
      projectable.push_back(true);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::BehindCamera) throw;
      targets.emplace_back(Vec2::Zero());
      projectable.push_back(false);
    }
  }
  std::vector<std::tuple<double, std::size_t, std::size_t>> edges;  // (dist, det, inst)
  for (std::size_t d = 0; d < detections.size(); ++d)
    for (std::size_t i = 0; i < scene.instances.size(); ++i)
      if (projectable[i] && detections[d].class_label == scene.instances[i].model_id)
        edges.emplace_back((detections[d].centroid - targets[i]).norm(), d, i);
  std::sort(edges.begin(), edges.end());
  Assignment a;
  std::vector<bool> det_used(detections.size(), false), inst_used(scene.instances.size(), false);
  for (const auto& [dist, d, i] : edges) {
    if (det_used[d] || inst_used[i]) continue;
    det_used[d] = inst_used[i] = true;
    a.matches.emplace_back(d, i);
  }
  std::sort(a.matches.begin(), a.matches.end(),
            [](const auto& x, const auto& y) { return x.second < y.second; });
  for (std::size_t i = 0; i < inst_used.size(); ++i)
    if (!inst_used[i]) a.missed_instances.push_back(i);
  for (std::size_t d = 0; d < det_used.size(); ++d)
    if (!det_used[d]) a.false_positives.push_back(d);
  return a;
}

struct AccuracyRow {
  std::string strategy;
  int class_label = 0;  // 0 = all classes
  std::size_t count = 0;
  std::size_t rep5_correct = 0;
  std::size_t add01d_correct = 0;

  double rep5_pct() const { return count ? 100.0 * rep5_correct / count : 0.0; }
  double add01d_pct() const { return count ? 100.0 * add01d_correct / count : 0.0; }
};

/// Per-(strategy, class) accuracies plus one all-classes row per strategy.
/// Denominators are ground-truth instances; missed instances count as wrong.
struct AccuracyTable {
  std::vector<AccuracyRow> rows;  // sorted by (strategy, class); class 0 row last per strategy
  std::map<std::string, std::size_t> false_positives;

  const AccuracyRow* find(const std::string& strategy, int class_label = 0) const {
    for (const auto& r : rows)
      if (r.strategy == strategy && r.class_label == class_label) return &r;
    return nullptr;
  }

  // Unweighted mean of the per-class accuracies of one strategy.
  double class_mean_rep5(const std::string& strategy) const {
    double s = 0.0;
    int n = 0;
    for (const auto& r : rows)
      if (r.strategy == strategy && r.class_label != 0) {
        s += r.rep5_pct();
        ++n;
      }
    return n ? s / n : 0.0;
  }

  double class_mean_add01d(const std::string& strategy) const {
    double s = 0.0;
    int n = 0;
    for (const auto& r : rows)
      if (r.strategy == strategy && r.class_label != 0) {
        s += r.add01d_pct();
        ++n;
      }
    return n ? s / n : 0.0;
  }
};

inline AccuracyTable aggregate(std::span<const EvalRecord> records,
                               const std::map<std::string, std::size_t>& false_positives = {}) {
  std::map<std::pair<std::string, int>, AccuracyRow> per_class;
  std::map<std::string, AccuracyRow> overall;
  for (const auto& r : records) {
    for (AccuracyRow* row : {&per_class[{r.strategy, r.class_label}], &overall[r.strategy]}) {
      ++row->count;
      row->rep5_correct += r.correct_rep5 ? 1 : 0;
      row->add01d_correct += r.correct_add01d ? 1 : 0;
    }
  }
  AccuracyTable t;
  for (auto& [strategy, all] : overall) {
    for (auto& [key, row] : per_class) {
      if (key.first != strategy) continue;
      row.strategy = key.first;
      row.class_label = key.second;
      t.rows.push_back(row);
    }
    all.strategy = strategy;
    all.class_label = 0;
    t.rows.push_back(all);
  }
  t.false_positives = false_positives;
  return t;
}

inline std::string format_fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string table_to_csv(const AccuracyTable& t) {
  std::ostringstream os;
  os << "strategy,class,count,rep5_correct,add01d_correct,rep5_pct,add01d_pct\n";
  for (const auto& r : t.rows)
    os << r.strategy << ',' << (r.class_label == 0 ? std::string("all") : std::to_string(r.class_label))
       << ',' << r.count << ',' << r.rep5_correct << ',' << r.add01d_correct << ','
       << format_fixed(r.rep5_pct()) << ',' << format_fixed(r.add01d_pct()) << '\n';
  return os.str();
}

inline std::string records_to_csv(std::span<const EvalRecord> records) {
  std::ostringstream os;
  os << "scene,instance,class,strategy,detected,solved,rep_px,add_units,rotation_error_rad,"
        "correct_rep5,correct_add01d\n";
  auto num = [](double v) {
    if (!std::isfinite(v)) return std::string("inf");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : records)
    os << r.scene << ',' << r.instance << ',' << r.class_label << ',' << r.strategy << ','
       << r.detected << ',' << r.solved << ',' << num(r.rep_px) << ',' << num(r.add_units) << ','
       << num(r.rotation_error_rad) << ',' << r.correct_rep5 << ',' << r.correct_add01d << '\n';
  return os.str();
}

/// Plain-text table: one column pair (REP-5px, ADD-0.1d) per strategy, one row per class.
inline std::string render_report(const AccuracyTable& t, std::span<const ObjectModel> models = {}) {
  std::vector<std::string> strategies;
  std::vector<int> classes;
  for (const auto& r : t.rows) {
    if (std::find(strategies.begin(), strategies.end(), r.strategy) == strategies.end())
      strategies.push_back(r.strategy);
    if (r.class_label != 0 && std::find(classes.begin(), classes.end(), r.class_label) == classes.end())
      classes.push_back(r.class_label);
  }
  std::sort(classes.begin(), classes.end());
  auto name_of = [&](int c) {
    for (const auto& m : models)
      if (m.id == c) return m.name + (m.symmetric ? "*" : "");
    return std::to_string(c);
  };
  auto cell = [](const AccuracyRow* r, bool rep) {
    char buf[32];
    if (!r) return std::string("       -");
    std::snprintf(buf, sizeof buf, "%8.1f", rep ? r->rep5_pct() : r->add01d_pct());
    return std::string(buf);
  };
  std::ostringstream os;
  char head[64];
  std::snprintf(head, sizeof head, "%-12s", "object");
  os << head;
  for (const auto& s : strategies) {
    std::snprintf(head, sizeof head, " | %-17s", s.c_str());
    os << head;
  }
  os << "\n" << std::string(12, ' ');
  for (std::size_t i = 0; i < strategies.size(); ++i) os << " |  REP-5px ADD-0.1d";
  os << "\n" << std::string(12 + 20 * strategies.size(), '-') << "\n";
  auto line = [&](const std::string& label, int c) {
    std::snprintf(head, sizeof head, "%-12s", label.c_str());
    os << head;
    for (const auto& s : strategies) {
      const auto* r = t.find(s, c);
      os << " | " << cell(r, true) << ' ' << cell(r, false);
    }
    os << "\n";
  };
  for (int c : classes) line(name_of(c), c);
  os << std::string(12 + 20 * strategies.size(), '-') << "\n";
  line("all", 0);
  return os.str();
}

}  // namespace segpose
