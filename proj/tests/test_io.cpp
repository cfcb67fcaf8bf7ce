#include <bit>
#include <cstring>
#include <filesystem>
#include <limits>

#include <gtest/gtest.h>

#include "segpose/io.hpp"
#include "segpose/simulator.hpp"

using namespace segpose;
using io::json;

namespace {

const CameraIntrinsics K = default_intrinsics();
const std::vector<ObjectModel>& library() {
  static const auto m = default_model_library(7, 60);
  return m;
}

// Serialize to text and parse back, as a file round trip would.
json through_text(const json& j) { return json::parse(j.dump(2)); }

void expect_schema_error(const std::function<void()>& f, const std::string& needle) {
  try {
    f();
    FAIL() << "no exception";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SchemaViolation);
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

}  // namespace

TEST(Io, RandomDoublesRoundTripBitExact) {
  Rng rng(1);
  std::uniform_int_distribution<std::uint64_t> bits;
  int checked = 0;
  while (checked < 100000) {
    const double v = std::bit_cast<double>(bits(rng));
    if (!std::isfinite(v)) continue;
    const double back = json::parse(json(v).dump()).get<double>();
    ASSERT_EQ(std::bit_cast<std::uint64_t>(back), std::bit_cast<std::uint64_t>(v)) << json(v).dump();
    ++checked;
  }
}

TEST(Io, IntrinsicsAndPose) {
  EXPECT_EQ(io::intrinsics_from_json(through_text(io::to_json(K))), K);
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const Pose p(random_rotation(rng), Vec3::Random());
    const Pose q = io::pose_from_json(through_text(io::to_json(p)));
    EXPECT_EQ(q.rotation(), p.rotation());
    EXPECT_EQ(q.translation(), p.translation());
  }
  json bad = io::to_json(Pose::identity());
  bad["rotation"][0][0] = 2.0;
  EXPECT_THROW(io::pose_from_json(bad), Error);
}

TEST(Io, ModelsAndScene) {
  const auto models = io::models_from_json(through_text(io::models_to_json(library())));
  ASSERT_EQ(models.size(), library().size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    EXPECT_EQ(models[i].id, library()[i].id);
    EXPECT_EQ(models[i].name, library()[i].name);
    EXPECT_EQ(models[i].symmetric, library()[i].symmetric);
    EXPECT_EQ(models[i].diameter, library()[i].diameter);
    EXPECT_EQ(models[i].surface_points, library()[i].surface_points);
    EXPECT_EQ(models[i].keypoints, library()[i].keypoints);
  }
  const Scene s = sample_scene(SceneConfig{}, library(), K, 3);
  EXPECT_EQ(io::scene_from_json(through_text(io::to_json(s))), s);
}

TEST(Io, GridsRoundTrip) {
  const Scene s = sample_scene(SceneConfig{}, library(), K, 4);
  const auto syn = synthesize_predictions(s, library(), GridSpec(38, 608, 608), K, NoiseModel::ablation(), 4);
  EXPECT_EQ(io::prediction_grid_from_json(through_text(io::to_json(syn.prediction))), syn.prediction);
  EXPECT_EQ(io::ground_truth_from_json(through_text(io::to_json(syn.truth))), syn.truth);
}

TEST(Io, CorrespondencesSolutionsRecordsTables) {
  io::CorrespondenceFile f;
  f.intrinsics = K;
  CorrespondenceSet set;
  set.class_label = 3;
  set.strategy = "bn";
  set.centroid = Vec2(1.25, 7.0 / 3.0);
  set.cluster_cells = 4;
  for (std::size_t k = 0; k < 8; ++k)
    set.pairs.push_back({k, Vec3(0.1 * k, -0.2, 1.0 / 3.0), Vec2(k * 1.1, 2.0), 0.3 + 0.01 * k, 40 + k});
  f.sets = {set, set};
  f.sets[1].strategy = "oracle";
  const auto g = io::correspondence_file_from_json(through_text(io::to_json(f)));
  EXPECT_EQ(g.intrinsics, K);
  ASSERT_EQ(g.sets.size(), 2u);
  EXPECT_EQ(g.sets[0], f.sets[0]);
  EXPECT_EQ(g.sets[1], f.sets[1]);

  io::SolvedSet solved;
  solved.class_label = 3;
  solved.strategy = "hc";
  solved.ok = true;
  solved.solution.pose = Pose(rotation_exp(Vec3(0.1, 0.2, 0.3)), Vec3(0.01, 0.02, 1.0));
  solved.solution.inliers = {1, 0, 1};
  solved.solution.inlier_count = 2;
  solved.solution.mean_reproj_px = 0.123;
  io::SolvedSet failed;
  failed.strategy = "nf";
  failed.error = "NoConsensus";
  const std::vector<io::SolvedSet> sols{solved, failed};
  const auto back = io::solutions_from_json(through_text(io::solutions_to_json(sols)));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].solution.pose.rotation(), solved.solution.pose.rotation());
  EXPECT_EQ(back[0].solution.inliers, solved.solution.inliers);
  EXPECT_EQ(back[0].solution.mean_reproj_px, 0.123);
  EXPECT_FALSE(back[1].ok);
  EXPECT_EQ(back[1].error, "NoConsensus");

  EvalRecord hit;
  hit.scene = 2;
  hit.instance = 1;
  hit.class_label = 5;
  hit.strategy = "bn";
  hit.detected = hit.solved = true;
  hit.rep_px = 1.0 / 7.0;
  hit.add_units = 0.003;
  hit.rotation_error_rad = 1e-3;
  hit.correct_rep5 = hit.correct_add01d = true;
  hit.solve_time_us = 812.5;
  EvalRecord miss;
  miss.strategy = "nf";
  miss.class_label = 2;
  const std::vector<EvalRecord> recs{hit, miss};
  const auto rf = io::records_from_json(through_text(io::records_to_json(recs, {{"nf", 3}})));
  ASSERT_EQ(rf.records.size(), 2u);
  EXPECT_EQ(rf.records[0].rep_px, hit.rep_px);
  EXPECT_EQ(rf.records[0].solve_time_us, hit.solve_time_us);
  EXPECT_TRUE(std::isinf(rf.records[1].rep_px));
  EXPECT_FALSE(rf.records[1].correct_rep5);
  EXPECT_EQ(rf.false_positives.at("nf"), 3u);

  const auto table = aggregate(recs, {{"nf", 3}});
  const auto t2 = io::table_from_json(through_text(io::to_json(table)));
  ASSERT_EQ(t2.rows.size(), table.rows.size());
  for (std::size_t i = 0; i < t2.rows.size(); ++i) {
    EXPECT_EQ(t2.rows[i].strategy, table.rows[i].strategy);
    EXPECT_EQ(t2.rows[i].count, table.rows[i].count);
    EXPECT_EQ(t2.rows[i].rep5_correct, table.rows[i].rep5_correct);
  }
  EXPECT_EQ(t2.false_positives, table.false_positives);
}

TEST(Io, MissingFieldsNameThePath) {
  json k = io::to_json(K);
  k.erase("fy");
  expect_schema_error([&] { io::intrinsics_from_json(k, "$.intrinsics"); }, "$.intrinsics.fy");

  const Scene s = sample_scene(SceneConfig{}, library(), K, 5);
  const auto syn = synthesize_predictions(s, library(), GridSpec(19, 608, 608), K, NoiseModel::ablation(), 5);
  json g = io::to_json(syn.prediction);
  g["cells"][1]["keypoints"][2].erase("conf");
  expect_schema_error([&] { io::prediction_grid_from_json(g); }, "$.cells[1].keypoints[2].conf");

  json v = io::to_json(syn.prediction);
  v.erase("schema_version");
  expect_schema_error([&] { io::prediction_grid_from_json(v); }, "schema_version");
  v["schema_version"] = 99;
  expect_schema_error([&] { io::prediction_grid_from_json(v); }, "not supported");

  json sc = io::to_json(s);
  sc["instances"][0].erase("translation");
  expect_schema_error([&] { io::scene_from_json(sc); }, "$.instances[0].translation");

  json t = io::to_json(syn.prediction);
  t["cells"][0]["row"] = "three";
  expect_schema_error([&] { io::prediction_grid_from_json(t); }, "$.cells[0].row");
}

TEST(Io, Files) {
  const auto dir = std::filesystem::temp_directory_path() / "segpose_io_test";
  std::filesystem::create_directories(dir);
  const std::string p = (dir / "x.json").string();
  io::write_json_file(p, io::to_json(K));
  EXPECT_EQ(io::intrinsics_from_json(io::read_json_file(p)), K);
  io::write_text_file(p, "{ not json");
  expect_schema_error([&] { io::read_json_file(p); }, "x.json");
  try {
    io::read_json_file((dir / "absent.json").string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::IoError);
  }
  std::filesystem::remove_all(dir);
}
