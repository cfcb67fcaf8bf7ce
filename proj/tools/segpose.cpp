// segpose command-line tool. Each subcommand is a thin wrapper over the
// library stage of the same name.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "segpose/segpose.hpp"

namespace fs = std::filesystem;
using namespace segpose;
using io::json;

namespace {

struct Common {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<int> scenes;
  std::string noise_profile;
  std::optional<int> grid_size;
  std::string models_file;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_file, "JSON config file; flags override it");
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--scenes", c.scenes, "number of scenes");
  app->add_option("--noise-profile", c.noise_profile, "zero, default, mild or heavy");
  app->add_option("--grid-size", c.grid_size, "cells per side (S)");
  app->add_option("--models", c.models_file, "model library JSON (default: built-in library)");
}

PipelineConfig load_config(const Common& c) {
  PipelineConfig cfg;
  if (!c.config_file.empty()) {
    json j;
    try {
      j = io::read_json_file(c.config_file);
    } catch (const Error& e) {
      throw Error(ErrorKind::ConfigError, e.message());
    }
    cfg = config_from_json(j);
  }
  if (c.seed) cfg.seed = *c.seed;
  if (c.scenes) cfg.scenes = *c.scenes;
  if (!c.noise_profile.empty()) cfg.noise = noise_profile(c.noise_profile);
  if (c.grid_size) {
    try {
      cfg.grid = GridSpec(*c.grid_size, cfg.camera.width, cfg.camera.height, cfg.grid.norm_span());
    } catch (const Error& e) {
      throw Error(ErrorKind::ConfigError, e.message());
    }
  }
  cfg.validate();
  return cfg;
}

std::vector<ObjectModel> load_models(const Common& c, const PipelineConfig& cfg) {
  if (c.models_file.empty()) return default_model_library(cfg.model_seed);
  return io::models_from_json(io::read_json_file(c.models_file));
}

std::string numbered(const fs::path& dir, const char* stem, int i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04d.json", stem, i);
  return (dir / buf).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir);
}

json timing_json(const TimingSummary& t) {
  return {{"objects", t.objects}, {"mean_us", t.mean_us}, {"median_us", t.median_us},
          {"p95_us", t.p95_us}, {"max_us", t.max_us}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segmentation-driven 6D pose: synthetic pipeline tools"};
  app.require_subcommand(1);
  Common common;

  // simulate
  auto* sim = app.add_subcommand("simulate", "sample scenes and write scene, grid and truth JSON");
  add_common(sim, common);
  std::string sim_out = "sim";
  sim->add_option("--out", sim_out, "output directory");

  // synth
  auto* syn = app.add_subcommand("synth", "synthesize predictions for one scene file");
  add_common(syn, common);
  std::string syn_scene, syn_grid = "grid.json", syn_truth = "truth.json";
  syn->add_option("--scene", syn_scene, "scene JSON")->required();
  syn->add_option("--grid-out", syn_grid, "prediction grid output");
  syn->add_option("--truth-out", syn_truth, "ground-truth grid output");

  // fuse
  auto* fuse = app.add_subcommand("fuse", "cluster a prediction grid and select correspondences");
  add_common(fuse, common);
  std::string fuse_grid_in, fuse_scene, fuse_out = "correspondences.json";
  std::vector<std::string> fuse_strategies;
  std::optional<std::size_t> fuse_n, fuse_min_cells;
  std::optional<double> fuse_threshold;
  fuse->add_option("--grid", fuse_grid_in, "prediction grid JSON")->required();
  fuse->add_option("--scene", fuse_scene, "ground-truth scene JSON (needed by oracle)");
  fuse->add_option("--strategy", fuse_strategies, "nf, hc, bn, oracle (repeatable)");
  fuse->add_option("--n", fuse_n, "candidates per keypoint for bn");
  fuse->add_option("--threshold", fuse_threshold, "cluster link distance, pixels");
  fuse->add_option("--min-cells", fuse_min_cells, "smallest cluster kept");
  fuse->add_option("--out", fuse_out, "correspondence JSON output");

  // solve
  auto* solve = app.add_subcommand("solve", "RANSAC PnP on every correspondence set");
  add_common(solve, common);
  std::string solve_in, solve_out = "solutions.json";
  std::uint64_t solve_stream = 0;
  solve->add_option("--correspondences", solve_in, "correspondence JSON")->required();
  solve->add_option("--stream", solve_stream, "random stream (scene index in a run)");
  solve->add_option("--out", solve_out, "solutions JSON output");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "score solutions against a scene");
  add_common(eval, common);
  std::string eval_solutions, eval_scene, eval_csv, eval_json, eval_records;
  int eval_index = 0;
  eval->add_option("--solutions", eval_solutions, "solutions JSON")->required();
  eval->add_option("--scene", eval_scene, "ground-truth scene JSON")->required();
  eval->add_option("--scene-index", eval_index, "scene id written into records");
  eval->add_option("--csv", eval_csv, "accuracy table CSV output (default stdout)");
  eval->add_option("--json", eval_json, "accuracy table JSON output");
  eval->add_option("--records", eval_records, "per-instance records JSON output");

  // run
  auto* run = app.add_subcommand("run", "end-to-end simulate, synthesize, fuse, solve, evaluate");
  add_common(run, common);
  std::string run_out;
  run->add_option("--out", run_out, "output directory for CSV, JSON and manifest");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of a loss gradient");
  std::string gc_term = "pos";
  std::uint64_t gc_seed = 0;
  int gc_size = 19;
  double gc_step = 1e-6, gc_tol = 1e-4;
  gc->add_option("--term", gc_term, "pos, conf, focal or focal-probs");
  gc->add_option("--seed", gc_seed, "configuration seed");
  gc->add_option("--grid-size", gc_size, "cells per side");
  gc->add_option("--step", gc_step, "central difference step");
  gc->add_option("--tolerance", gc_tol, "max relative error");

  // bench
  auto* bench = app.add_subcommand("bench", "time fuse + solve per object");
  add_common(bench, common);

  // report
  auto* rep = app.add_subcommand("report", "render an accuracy table JSON as text");
  add_common(rep, common);
  std::string rep_table;
  rep->add_option("--table", rep_table, "accuracy table JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*sim) {
      const PipelineConfig cfg = load_config(common);
      const auto models = load_models(common, cfg);
      ensure_dir(sim_out);
      const fs::path dir(sim_out);
      io::write_json_file((dir / "models.json").string(), io::models_to_json(models));
      for (int i = 0; i < cfg.scenes; ++i) {
        const Scene scene = sample_scene(cfg.scene, models, cfg.camera, scene_seed(cfg.seed, i));
        const Synthesis s = synthesize_predictions(scene, models, cfg.grid, cfg.camera, cfg.noise,
                                                   synthesis_seed(cfg.seed, i));
        io::write_json_file(numbered(dir, "scene", i), io::to_json(scene));
        io::write_json_file(numbered(dir, "grid", i), io::to_json(s.prediction));
        io::write_json_file(numbered(dir, "truth", i), io::to_json(s.truth));
      }
      std::cout << "wrote " << cfg.scenes << " scenes to " << sim_out << "\n";
    } else if (*syn) {
      const PipelineConfig cfg = load_config(common);
      const auto models = load_models(common, cfg);
      const Scene scene = io::scene_from_json(io::read_json_file(syn_scene));
      const Synthesis s = synthesize_predictions(scene, models, cfg.grid, scene.intrinsics, cfg.noise,
                                                 synthesis_seed(cfg.seed, 0));
      io::write_json_file(syn_grid, io::to_json(s.prediction));
      io::write_json_file(syn_truth, io::to_json(s.truth));
    } else if (*fuse) {
      PipelineConfig cfg = load_config(common);
      const auto models = load_models(common, cfg);
      if (!fuse_strategies.empty()) {
        cfg.fusion.strategies.clear();
        for (const auto& s : fuse_strategies) cfg.fusion.strategies.push_back(parse_strategy(s));
      }
      if (fuse_n) cfg.fusion.best_n = *fuse_n;
      if (fuse_threshold) cfg.fusion.threshold_px = *fuse_threshold;
      if (fuse_min_cells) cfg.fusion.min_cells = *fuse_min_cells;
      const PredictionGrid grid = io::prediction_grid_from_json(io::read_json_file(fuse_grid_in));
      std::optional<Scene> scene;
      if (!fuse_scene.empty()) scene = io::scene_from_json(io::read_json_file(fuse_scene));
      const CameraIntrinsics k = scene ? scene->intrinsics : cfg.camera;
      const FusionOutput out = fuse_grid(grid, models, k, cfg.fusion, scene ? &*scene : nullptr);
      io::write_json_file(fuse_out, io::to_json(out.file));
    } else if (*solve) {
      const PipelineConfig cfg = load_config(common);
      const auto file = io::correspondence_file_from_json(io::read_json_file(solve_in));
      const auto solved = solve_sets(file, cfg.ransac, solve_stream);
      io::write_json_file(solve_out, io::solutions_to_json(solved));
    } else if (*eval) {
      const PipelineConfig cfg = load_config(common);
      const auto models = load_models(common, cfg);
      const auto solved = io::solutions_from_json(io::read_json_file(eval_solutions));
      const Scene scene = io::scene_from_json(io::read_json_file(eval_scene));
      const SceneEvaluation ev = evaluate_solutions(solved, scene, models, eval_index);
      const AccuracyTable table = aggregate(ev.records, ev.false_positives);
      if (!eval_records.empty()) io::write_json_file(eval_records, io::records_to_json(ev.records, ev.false_positives));
      if (!eval_json.empty()) io::write_json_file(eval_json, io::to_json(table));
      if (eval_csv.empty()) std::cout << table_to_csv(table);
      else io::write_text_file(eval_csv, table_to_csv(table));
    } else if (*run) {
      PipelineConfig cfg = load_config(common);
      if (!run_out.empty()) cfg.output_dir = run_out;
      const auto models = load_models(common, cfg);
      const PipelineResult r = run_pipeline(cfg, models);
      std::cout << render_report(r.table, models);
      std::cout << "config " << r.manifest.config_hash << ", " << r.records.size() << " records\n";
    } else if (*gc) {
      GradCheckOptions opt;
      opt.step = gc_step;
      opt.tolerance = gc_tol;
      const GradCheckReport r = random_gradcheck(parse_grad_term(gc_term), gc_seed, gc_size, opt);
      std::cout << json{{"term", gc_term}, {"loss", r.loss}, {"max_rel_err", r.max_rel_err},
                        {"worst_coordinate", r.worst_coordinate}, {"checked", r.checked},
                        {"passed", r.passed}}.dump(2)
                << "\n";
      return r.passed ? 0 : 4;
    } else if (*bench) {
      const PipelineConfig cfg = load_config(common);
      const auto models = load_models(common, cfg);
      const PipelineResult r = run_pipeline(cfg, models);
      json out = {{"grid_size", cfg.grid.size()}, {"all", timing_json(summarize_times(r.records))}};
      for (auto s : cfg.fusion.strategies) {
        const std::string name(to_string(s));
        out[name] = timing_json(summarize_times(r.records, name));
      }
      std::cout << out.dump(2) << "\n";
    } else if (*rep) {
      const PipelineConfig cfg = load_config(common);
      const auto models = load_models(common, cfg);
      const AccuracyTable t = io::table_from_json(io::read_json_file(rep_table));
      std::cout << render_report(t, models);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
