#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "segpose/evaluation.hpp"
#include "segpose/fusion.hpp"
#include "segpose/io.hpp"
#include "segpose/losses.hpp"
#include "segpose/pnp.hpp"
#include "segpose/simulator.hpp"

namespace segpose {

inline constexpr const char* kArtifactVersion = "1.0.0";

inline EvalRecord evaluate_instance(const PnpSolution& est, const Pose& gt, const ObjectModel& model,
                                    const CameraIntrinsics& k) {
  return evaluate_instance(est.pose, gt, model, k);
}

struct FusionSettings {
  std::vector<FusionStrategy> strategies{FusionStrategy::NoFusion, FusionStrategy::HighestConfidence,
                                         FusionStrategy::BestN, FusionStrategy::Oracle};
  std::size_t best_n = kDefaultBestN;
  double threshold_px = kReferenceClusterThresholdPx;
  std::size_t min_cells = kDefaultMinClusterCells;

  void validate() const {
    if (strategies.empty()) throw Error(ErrorKind::ConfigError, "at least one fusion strategy is required");
    if (best_n < 1) throw Error(ErrorKind::ConfigError, "best_n must be >= 1");
    if (!(threshold_px > 0.0)) throw Error(ErrorKind::ConfigError, "cluster threshold must be positive");
    if (min_cells < 1) throw Error(ErrorKind::ConfigError, "min_cells must be >= 1");
  }
};

struct PipelineConfig {
  GridSpec grid;
  LossConfig loss;
  NoiseModel noise;
  SceneConfig scene;
  CameraIntrinsics camera = default_intrinsics();
  FusionSettings fusion;
  RansacParams ransac;
  std::uint64_t seed = 0;
  int scenes = 100;
  std::uint64_t model_seed = 7;
  std::string output_dir;  // empty: nothing written

  void validate() const {
    try {
      loss.validate();
      noise.validate();
      scene.validate();
      camera.validate();
      fusion.validate();
      ransac.validate();
    } catch (const Error& e) {
      throw Error(ErrorKind::ConfigError, e.message());
    }
    if (scenes < 1) throw Error(ErrorKind::ConfigError, "scenes must be >= 1");
    if (grid.image_width() != camera.width || grid.image_height() != camera.height)
      throw Error(ErrorKind::ConfigError, "grid image size differs from the camera image size");
  }
};

// ---------------------------------------------------------------------------
// Config serialization. Every field is optional on input; missing ones keep defaults.

namespace detail {

template <typename T>
void read_opt(const io::json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  const auto& v = j[key];
  const std::string p = path + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    out = io::as_bool(v, p);
  } else if constexpr (std::is_same_v<T, std::string>) {
    out = io::as_string(v, p);
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    if (!v.is_number_unsigned()) throw Error(ErrorKind::ConfigError, p + " must be a non-negative integer");
    out = v.get<std::uint64_t>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw Error(ErrorKind::ConfigError, p + " must be an integer");
    const auto x = v.get<long long>();
    if constexpr (std::is_unsigned_v<T>)
      if (x < 0) throw Error(ErrorKind::ConfigError, p + " must be non-negative");
    out = static_cast<T>(x);
  } else {
    out = io::as_double(v, p);
  }
}

}  // namespace detail

inline io::json to_json(const PipelineConfig& c) {
  io::json strategies = io::json::array();
  for (auto s : c.fusion.strategies) strategies.push_back(std::string(to_string(s)));
  return {
      {"schema_version", io::kSchemaVersion},
      {"grid", io::to_json(c.grid)},
      {"loss", {{"tau", c.loss.tau}, {"beta", c.loss.beta}, {"gamma_reg", c.loss.gamma_reg},
                {"focal_gamma", c.loss.focal_gamma}, {"class_weights", c.loss.class_weights}}},
      {"noise", {{"inlier_sigma_px", c.noise.inlier_sigma_px}, {"outlier_rate", c.noise.outlier_rate},
                 {"outlier_sigma_px", c.noise.outlier_sigma_px},
                 {"confidence_jitter", c.noise.confidence_jitter},
                 {"label_flip_rate", c.noise.label_flip_rate}, {"tau", c.noise.tau}}},
      {"scene", {{"min_objects", c.scene.min_objects}, {"max_objects", c.scene.max_objects},
                 {"min_depth", c.scene.min_depth}, {"max_depth", c.scene.max_depth},
                 {"max_occlusion", c.scene.max_occlusion},
                 {"visibility_stride_px", c.scene.visibility_stride_px},
                 {"min_same_class_separation_px", c.scene.min_same_class_separation_px},
                 {"max_attempts", c.scene.max_attempts}}},
      {"camera", io::to_json(c.camera)},
      {"fusion", {{"strategies", strategies}, {"best_n", c.fusion.best_n},
                  {"threshold_px", c.fusion.threshold_px}, {"min_cells", c.fusion.min_cells}}},
      {"ransac", {{"max_iterations", c.ransac.max_iterations},
                  {"inlier_threshold_px", c.ransac.inlier_threshold_px},
                  {"min_sample_size", c.ransac.min_sample_size},
                  {"confidence_stop", c.ransac.confidence_stop}, {"seed", c.ransac.seed},
                  {"refine", c.ransac.refine}, {"refine_iterations", c.ransac.refine_iterations}}},
      {"seed", c.seed},
      {"scenes", c.scenes},
      {"model_seed", c.model_seed},
      {"output_dir", c.output_dir},
  };
}

namespace detail {

inline PipelineConfig apply_config(const io::json& j, PipelineConfig base) {
  using detail::read_opt;
  if (!j.is_object()) throw Error(ErrorKind::ConfigError, "config must be a JSON object");
  if (j.contains("schema_version") && io::get_int(j, "schema_version", "$") != io::kSchemaVersion)
    throw Error(ErrorKind::ConfigError, "unsupported config schema_version");
  PipelineConfig c = std::move(base);
  if (j.contains("grid")) {
    const auto& g = j["grid"];
    int s = c.grid.size(), w = c.grid.image_width(), h = c.grid.image_height();
    double span = c.grid.norm_span();
    read_opt(g, "S", s, "$.grid");
    read_opt(g, "image_w", w, "$.grid");
    read_opt(g, "image_h", h, "$.grid");
    read_opt(g, "norm_span", span, "$.grid");
    try {
      c.grid = GridSpec(s, w, h, span);
    } catch (const Error& e) {
      throw Error(ErrorKind::ConfigError, e.message());
    }
  }
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    read_opt(l, "tau", c.loss.tau, "$.loss");
    read_opt(l, "beta", c.loss.beta, "$.loss");
    read_opt(l, "gamma_reg", c.loss.gamma_reg, "$.loss");
    read_opt(l, "focal_gamma", c.loss.focal_gamma, "$.loss");
    if (l.contains("class_weights")) {
      const auto& w = io::as_array(l["class_weights"], "$.loss.class_weights");
      c.loss.class_weights.clear();
      for (std::size_t i = 0; i < w.size(); ++i)
        c.loss.class_weights.push_back(io::as_double(w[i], io::idx_path("$.loss.class_weights", i)));
    }
  }
  if (j.contains("noise")) {
    const auto& n = j["noise"];
    if (n.is_string()) {
      c.noise = noise_profile(n.get<std::string>());
    } else {
      read_opt(n, "inlier_sigma_px", c.noise.inlier_sigma_px, "$.noise");
      read_opt(n, "outlier_rate", c.noise.outlier_rate, "$.noise");
      read_opt(n, "outlier_sigma_px", c.noise.outlier_sigma_px, "$.noise");
      read_opt(n, "confidence_jitter", c.noise.confidence_jitter, "$.noise");
      read_opt(n, "label_flip_rate", c.noise.label_flip_rate, "$.noise");
      read_opt(n, "tau", c.noise.tau, "$.noise");
    }
  }
  if (j.contains("scene")) {
    const auto& s = j["scene"];
    read_opt(s, "min_objects", c.scene.min_objects, "$.scene");
    read_opt(s, "max_objects", c.scene.max_objects, "$.scene");
    read_opt(s, "min_depth", c.scene.min_depth, "$.scene");
    read_opt(s, "max_depth", c.scene.max_depth, "$.scene");
    read_opt(s, "max_occlusion", c.scene.max_occlusion, "$.scene");
    read_opt(s, "visibility_stride_px", c.scene.visibility_stride_px, "$.scene");
    read_opt(s, "min_same_class_separation_px", c.scene.min_same_class_separation_px, "$.scene");
    read_opt(s, "max_attempts", c.scene.max_attempts, "$.scene");
  }
  if (j.contains("camera")) {
    try {
      c.camera = io::intrinsics_from_json(j["camera"], "$.camera");
    } catch (const Error& e) {
      throw Error(ErrorKind::ConfigError, e.message());
    }
  }
  if (j.contains("fusion")) {
    const auto& f = j["fusion"];
    if (f.contains("strategies")) {
      const auto& a = io::as_array(f["strategies"], "$.fusion.strategies");
      c.fusion.strategies.clear();
      for (std::size_t i = 0; i < a.size(); ++i)
        c.fusion.strategies.push_back(parse_strategy(io::as_string(a[i], io::idx_path("$.fusion.strategies", i))));
    }
    read_opt(f, "best_n", c.fusion.best_n, "$.fusion");
    read_opt(f, "threshold_px", c.fusion.threshold_px, "$.fusion");
    read_opt(f, "min_cells", c.fusion.min_cells, "$.fusion");
  }
  if (j.contains("ransac")) {
    const auto& r = j["ransac"];
    read_opt(r, "max_iterations", c.ransac.max_iterations, "$.ransac");
    read_opt(r, "inlier_threshold_px", c.ransac.inlier_threshold_px, "$.ransac");
    read_opt(r, "min_sample_size", c.ransac.min_sample_size, "$.ransac");
    read_opt(r, "confidence_stop", c.ransac.confidence_stop, "$.ransac");
    read_opt(r, "seed", c.ransac.seed, "$.ransac");
    read_opt(r, "refine", c.ransac.refine, "$.ransac");
    read_opt(r, "refine_iterations", c.ransac.refine_iterations, "$.ransac");
  }
  read_opt(j, "seed", c.seed, "$");
  read_opt(j, "scenes", c.scenes, "$");
  read_opt(j, "model_seed", c.model_seed, "$");
  read_opt(j, "output_dir", c.output_dir, "$");
  return c;
}

}  // namespace detail

/// Applies the fields present in `j` on top of `base`. Any malformed field is a ConfigError.
inline PipelineConfig config_from_json(const io::json& j, PipelineConfig base = {}) {
  try {
    return detail::apply_config(j, std::move(base));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::ConfigError) throw;
    throw Error(ErrorKind::ConfigError, e.message());
  }
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash of the canonical serialization (object keys sorted, output paths
/// excluded), so it does not depend on field order in the source file.
inline std::string config_hash(const PipelineConfig& c) {
  io::json j = to_json(c);
  j.erase("output_dir");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

struct RunManifest {
  std::string config_hash;
  std::string version = kArtifactVersion;
  std::map<std::string, std::string> stage_paths;
  std::map<std::string, double> stage_seconds;
};

inline io::json to_json(const RunManifest& m) {
  return {{"schema_version", io::kSchemaVersion}, {"config_hash", m.config_hash},
          {"version", m.version}, {"stage_paths", m.stage_paths}, {"stage_seconds", m.stage_seconds}};
}

// ---------------------------------------------------------------------------
// Stages. Each is usable on its own and is what the CLI subcommands call.

namespace detail {

using Clock = std::chrono::steady_clock;

inline double micros_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
}

inline std::vector<Detection> detections_of(std::span<const Cluster> clusters) {
  std::vector<Detection> d;
  for (const auto& c : clusters) d.push_back({c.class_label, c.centroid()});
  return d;
}

}  // namespace detail

struct FusionOutput {
  io::CorrespondenceFile file;   // sets grouped by strategy, cluster order within a group
  std::vector<double> fuse_us;   // per set
};

/// Clusters the grid and builds one correspondence set per (strategy, cluster).
/// The oracle needs `truth`; clusters it cannot match get an empty set.
inline FusionOutput fuse_grid(const PredictionGrid& grid, std::span<const ObjectModel> models,
                              const CameraIntrinsics& k, const FusionSettings& settings,
                              const Scene* truth = nullptr) {
  settings.validate();
  const bool needs_truth = std::find(settings.strategies.begin(), settings.strategies.end(),
                                     FusionStrategy::Oracle) != settings.strategies.end();
  if (needs_truth && !truth) throw Error(ErrorKind::ConfigError, "oracle fusion needs the ground-truth scene");

  FusionOutput out;
  out.file.intrinsics = k;
  const auto t0 = detail::Clock::now();
  const auto clusters = cluster_cells(grid, settings.threshold_px, settings.min_cells);
  const double cluster_share = clusters.empty() ? 0.0 : detail::micros_since(t0) / clusters.size();

  std::vector<std::vector<Vec2>> oracle_targets(clusters.size());
  if (needs_truth) {
    const auto dets = detail::detections_of(clusters);
    const Assignment a = match_detections(dets, *truth, models);
    for (const auto& [d, i] : a.matches) {
      const auto& inst = truth->instances[i];
      oracle_targets[d] = project_all(find_model(models, inst.model_id).keypoints, inst.pose, k);
    }
  }
  for (auto strategy : settings.strategies)
    for (std::size_t c = 0; c < clusters.size(); ++c) {
      const auto t1 = detail::Clock::now();
      const auto& model = find_model(models, clusters[c].class_label);
      CorrespondenceSet set;
      if (strategy == FusionStrategy::Oracle && oracle_targets[c].empty()) {
        set = detail::start_set(clusters[c], strategy);
      } else {
        set = select(strategy, clusters[c], model.keypoints, settings.best_n, oracle_targets[c]);
      }
      out.file.sets.push_back(std::move(set));
      out.fuse_us.push_back(cluster_share + detail::micros_since(t1));
    }
  return out;
}

/// Solves every set with RANSAC. The seed of a set depends on (ransac seed,
/// stream, cluster position within its strategy group), so all strategies see
/// the same random stream for the same cluster.
inline std::vector<io::SolvedSet> solve_sets(const io::CorrespondenceFile& file, const RansacParams& ransac,
                                             std::uint64_t stream = 0,
                                             std::span<const double> fuse_us = {}) {
  ransac.validate();
  std::vector<io::SolvedSet> out;
  std::map<std::string, std::uint64_t> position;
  for (std::size_t i = 0; i < file.sets.size(); ++i) {
    const auto& set = file.sets[i];
    io::SolvedSet s;
    s.class_label = set.class_label;
    s.strategy = set.strategy;
    s.centroid = set.centroid;
    RansacParams p = ransac;
    p.seed = derive_seed(derive_seed(ransac.seed, stream), position[set.strategy]++);
    const auto t0 = detail::Clock::now();
    try {
      s.solution = ransac_pnp(set, file.intrinsics, p);
      s.ok = true;
    } catch (const Error& e) {
      switch (e.kind()) {
        case ErrorKind::TooFew:
        case ErrorKind::Degenerate:
        case ErrorKind::NoConsensus:
        case ErrorKind::CheiralityFailure:
        case ErrorKind::NonFinite:
          s.error = std::string(to_string(e.kind()));
          break;
        default:
          throw;
      }
    }
    s.elapsed_us = detail::micros_since(t0) + (i < fuse_us.size() ? fuse_us[i] : 0.0);
    out.push_back(std::move(s));
  }
  return out;
}

struct SceneEvaluation {
  std::vector<EvalRecord> records;  // strategy-major, instance order within
  std::map<std::string, std::size_t> false_positives;
};

/// Matches each strategy's solved sets to the scene instances and scores them.
/// Unmatched or unsolved instances are recorded as incorrect.
inline SceneEvaluation evaluate_solutions(std::span<const io::SolvedSet> solutions, const Scene& scene,
                                          std::span<const ObjectModel> models, int scene_index = 0) {
  std::vector<std::string> strategies;
  for (const auto& s : solutions)
    if (std::find(strategies.begin(), strategies.end(), s.strategy) == strategies.end())
      strategies.push_back(s.strategy);
  SceneEvaluation ev;
  for (const auto& strategy : strategies) {
    std::vector<const io::SolvedSet*> group;
    std::vector<Detection> dets;
    for (const auto& s : solutions)
      if (s.strategy == strategy) {
        group.push_back(&s);
        dets.push_back({s.class_label, s.centroid});
      }
    const Assignment a = match_detections(dets, scene, models);
    ev.false_positives[strategy] += a.false_positives.size();
    for (std::size_t i = 0; i < scene.instances.size(); ++i) {
      const auto& inst = scene.instances[i];
      const auto d = a.detection_for(i);
      EvalRecord r;
      if (d && group[*d]->ok) {
        r = evaluate_instance(group[*d]->solution, inst.pose, find_model(models, inst.model_id),
                              scene.intrinsics);
        r.solve_time_us = group[*d]->elapsed_us;
      } else {
        r = missed_instance(inst.model_id, d.has_value());
        if (d) r.solve_time_us = group[*d]->elapsed_us;
      }
      r.scene = scene_index;
      r.instance = static_cast<int>(i);
      r.strategy = strategy;
      ev.records.push_back(std::move(r));
    }
  }
  return ev;
}

// ---------------------------------------------------------------------------
// End to end

struct PipelineResult {
  std::vector<EvalRecord> records;
  AccuracyTable table;
  RunManifest manifest;
};

inline std::uint64_t scene_seed(std::uint64_t seed, int index) {
  return derive_seed(seed, 2 * static_cast<std::uint64_t>(index));
}
inline std::uint64_t synthesis_seed(std::uint64_t seed, int index) {
  return derive_seed(seed, 2 * static_cast<std::uint64_t>(index) + 1);
}

namespace detail {

template <typename F>
auto staged(const char* stage, int scene, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("stage '") + stage + "', scene " + std::to_string(scene) + ": " +
                              e.message());
  }
}

}  // namespace detail

/// simulate -> synthesize -> fuse -> solve -> evaluate over `config.scenes`
/// scenes. Scene i uses independent streams derived from (seed, i). When
/// `output_dir` is set, records, the table and the manifest are written there.
inline PipelineResult run_pipeline(const PipelineConfig& config, std::span<const ObjectModel> models) {
  config.validate();
  PipelineResult result;
  result.manifest.config_hash = config_hash(config);
  auto& secs = result.manifest.stage_seconds;
  for (const char* s : {"simulate", "synthesize", "fuse_solve", "evaluate"}) secs[s] = 0.0;
  std::map<std::string, std::size_t> false_positives;
  for (auto s : config.fusion.strategies) false_positives[std::string(to_string(s))] = 0;

  for (int i = 0; i < config.scenes; ++i) {
    auto t = detail::Clock::now();
    const Scene scene = detail::staged("simulate", i, [&] {
      return sample_scene(config.scene, models, config.camera, scene_seed(config.seed, i));
    });
    secs["simulate"] += detail::micros_since(t) * 1e-6;

    t = detail::Clock::now();
    const Synthesis syn = detail::staged("synthesize", i, [&] {
      return synthesize_predictions(scene, models, config.grid, config.camera, config.noise,
                                    synthesis_seed(config.seed, i));
    });
    secs["synthesize"] += detail::micros_since(t) * 1e-6;

    t = detail::Clock::now();
    const auto solved = detail::staged("fuse_solve", i, [&] {
      const FusionOutput fused = fuse_grid(syn.prediction, models, config.camera, config.fusion, &scene);
      return solve_sets(fused.file, config.ransac, static_cast<std::uint64_t>(i), fused.fuse_us);
    });
    secs["fuse_solve"] += detail::micros_since(t) * 1e-6;

    t = detail::Clock::now();
    const auto ev = detail::staged("evaluate", i, [&] { return evaluate_solutions(solved, scene, models, i); });
    for (const auto& [k, v] : ev.false_positives) false_positives[k] += v;
    result.records.insert(result.records.end(), ev.records.begin(), ev.records.end());
    secs["evaluate"] += detail::micros_since(t) * 1e-6;
  }
  result.table = aggregate(result.records, false_positives);

  if (!config.output_dir.empty()) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(config.output_dir, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + config.output_dir);
    const fs::path dir(config.output_dir);
    auto& paths = result.manifest.stage_paths;
    paths["config"] = (dir / "config.json").string();
    paths["records"] = (dir / "records.csv").string();
    paths["table_csv"] = (dir / "table.csv").string();
    paths["table_json"] = (dir / "table.json").string();
    paths["manifest"] = (dir / "manifest.json").string();
    io::write_json_file(paths["config"], to_json(config));
    io::write_text_file(paths["records"], records_to_csv(result.records));
    io::write_text_file(paths["table_csv"], table_to_csv(result.table));
    io::write_json_file(paths["table_json"], io::to_json(result.table));
    io::write_json_file(paths["manifest"], to_json(result.manifest));
  }
  return result;
}

inline PipelineResult run_pipeline(const PipelineConfig& config) {
  const auto models = default_model_library(config.model_seed);
  return run_pipeline(config, models);
}

// ---------------------------------------------------------------------------
// Timing summary for the fuse + solve budget

struct TimingSummary {
  std::size_t objects = 0;
  double mean_us = 0.0;
  double median_us = 0.0;
  double p95_us = 0.0;
  double max_us = 0.0;
};

/// Over records of detected instances (the ones that went through fuse + solve).
inline TimingSummary summarize_times(std::span<const EvalRecord> records, const std::string& strategy = {}) {
  std::vector<double> t;
  for (const auto& r : records)
    if (r.detected && (strategy.empty() || r.strategy == strategy)) t.push_back(r.solve_time_us);
  TimingSummary s;
  s.objects = t.size();
  if (t.empty()) return s;
  std::sort(t.begin(), t.end());
  double sum = 0.0;
  for (double x : t) sum += x;
  s.mean_us = sum / static_cast<double>(t.size());
  s.median_us = t[t.size() / 2];
  s.p95_us = t[std::min(t.size() - 1, static_cast<std::size_t>(0.95 * static_cast<double>(t.size())))];
  s.max_us = t.back();
  return s;
}

// ---------------------------------------------------------------------------
// Randomized gradient checks

enum class GradTerm { Position, Confidence, Focal, FocalProbs };

inline GradTerm parse_grad_term(std::string_view name) {
  if (name == "pos") return GradTerm::Position;
  if (name == "conf") return GradTerm::Confidence;
  if (name == "focal") return GradTerm::Focal;
  if (name == "focal-probs") return GradTerm::FocalProbs;
  throw Error(ErrorKind::ConfigError,
              "unknown loss term '" + std::string(name) + "' (pos, conf, focal, focal-probs)");
}

/// One random configuration: a small noisy scene at grid size `grid_size`,
/// random tau, random class weights and (for the focal term) random logits
/// and focusing exponent. Probes within a few steps of an L1 kink are skipped.
inline GradCheckReport random_gradcheck(GradTerm term, std::uint64_t seed, int grid_size = 19,
                                        const GradCheckOptions& base = {}) {
  Rng rng = make_rng(seed, 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto models = default_model_library(7, 120);
  SceneConfig sc;
  sc.min_objects = 1;
  sc.max_objects = 3;
  const CameraIntrinsics k = default_intrinsics();
  const GridSpec spec(grid_size, k.width, k.height);
  const Scene scene = sample_scene(sc, models, k, derive_seed(seed, 1));
  NoiseModel noise = NoiseModel::ablation();
  noise.label_flip_rate = 0.0;
  noise.tau = 0.5 + 1.5 * unit(rng);
  const Synthesis syn = synthesize_predictions(scene, models, spec, k, noise, derive_seed(seed, 2));
  std::vector<double> weights(models.size() + 1);
  for (auto& w : weights) w = 0.2 + 1.8 * unit(rng);
  const double tau = 0.5 + 1.5 * unit(rng);
  const double h = base.step;
  GradCheckOptions opt = base;

  switch (term) {
    case GradTerm::Position: {
      PredictionGrid g = syn.prediction;
      const Eigen::VectorXd x0 = pack_offsets(g);
      const Eigen::VectorXd target = pack_offsets(perfect_predictions(syn.truth));
      opt.exclude = [&](Eigen::Index i) { return std::abs(x0[i] - target[i]) < 10.0 * h; };
      DifferentiableFn f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
        unpack_offsets(x, g);
        LossTerm t = loss_pos(g, syn.truth, weights);
        if (grad) *grad = t.gradient;
        return t.value;
      };
      return grad_check(f, x0, opt);
    }
    case GradTerm::Confidence: {
      PredictionGrid g = syn.prediction;
      // Spread confidences away from the targets so most probes are smooth.
      for (auto& cell : g.cells)
        for (auto& kp : cell.keypoints) kp.confidence = unit(rng);
      const Eigen::VectorXd x0 = pack_confidences(g);
      std::vector<double> targets(static_cast<std::size_t>(x0.size()), -1.0);
      for (std::size_t c = 0; c < g.cells.size(); ++c) {
        const auto& gt = syn.truth.cells[c];
        if (gt.class_label == 0) continue;
        for (std::size_t j = 0; j < g.num_keypoints; ++j)
          targets[c * g.num_keypoints + j] =
              confidence_target(residual(g.cells[c].keypoints[j], cell_index(c, spec), gt.keypoints[j], spec), tau);
      }
      opt.exclude = [&](Eigen::Index i) {
        const double t = targets[static_cast<std::size_t>(i)];
        return t >= 0.0 && std::abs(x0[i] - t) < 10.0 * h;
      };
      DifferentiableFn f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
        unpack_confidences(x, g);
        LossTerm t = loss_conf(g, syn.truth, tau, weights);
        if (grad) *grad = t.gradient;
        return t.value;
      };
      return grad_check(f, x0, opt);
    }
    case GradTerm::Focal:
    case GradTerm::FocalProbs: {
      const auto classes = static_cast<Eigen::Index>(weights.size());
      const auto rows = static_cast<Eigen::Index>(syn.truth.cells.size());
      std::vector<int> labels;
      for (const auto& c : syn.truth.cells) labels.push_back(c.class_label);
      const double gamma = 4.0 * unit(rng);
      std::normal_distribution<double> gauss(0.0, 2.0);
      Eigen::VectorXd x0(rows * classes);
      for (Eigen::Index i = 0; i < x0.size(); ++i) x0[i] = gauss(rng);
      if (term == GradTerm::FocalProbs) {
        // Gradient wrt the probabilities themselves, probed off the simplex. Rows are
        // normalized uniforms so no probability sits within a step of zero.
        std::uniform_real_distribution<double> mass(0.05, 1.0);
        Eigen::VectorXd y0(rows * classes);
        for (Eigen::Index r = 0; r < rows; ++r) {
          double total = 0.0;
          for (Eigen::Index j = 0; j < classes; ++j) total += y0[r * classes + j] = mass(rng);
          y0.segment(r * classes, classes) /= total;
        }
        DifferentiableFn f = [&](const Eigen::VectorXd& y, Eigen::VectorXd* grad) {
          const Eigen::MatrixXd probs =
              Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                  y.data(), rows, classes);
          LossTerm t = focal_loss_unchecked(probs, labels, weights, gamma);
          if (grad) *grad = t.gradient;
          return t.value;
        };
        return grad_check(f, y0, opt);
      }
      DifferentiableFn f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
        const Eigen::MatrixXd scores =
            Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                x.data(), rows, classes);
        LossTerm t = focal_loss_logits(scores, labels, weights, gamma);
        if (grad) *grad = t.gradient;
        return t.value;
      };
      return grad_check(f, x0, opt);
    }
  }
  throw Error(ErrorKind::InvalidArgument, "bad loss term");
}

}  // namespace segpose
