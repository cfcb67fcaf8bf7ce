#include <set>

#include <gtest/gtest.h>

#include "segpose/grid.hpp"
#include "segpose/random.hpp"

using namespace segpose;

namespace {

CameraIntrinsics cam() { return {600.0, 600.0, 304.0, 304.0, 608, 608}; }

ObjectModel cube(int id, double half, std::uint64_t seed = 1) {
  Rng rng(seed);
  return make_object_model(id, "cube", sample_box_surface(Vec3::Constant(2 * half), 400, rng), false);
}

// Counts sub-samples of cell (row, col) inside the square |u-c|,|v-c| <= r.
int subsamples_in_square(const GridSpec& spec, int row, int col, double r) {
  int n = 0;
  const double cw = spec.cell_width();
  for (int sy = 0; sy < 4; ++sy)
    for (int sx = 0; sx < 4; ++sx) {
      const double u = col * cw + (sx + 0.5) * cw / 4, v = row * cw + (sy + 0.5) * cw / 4;
      if (std::abs(u - 304.0) <= r && std::abs(v - 304.0) <= r) ++n;
    }
  return n;
}

}  // namespace

TEST(GridSpec, Validation) {
  EXPECT_THROW(GridSpec(1, 608, 608), Error);
  EXPECT_THROW(GridSpec(7, 608, 608), Error);
  EXPECT_THROW(GridSpec(76, 608, 608, 0.0), Error);
  EXPECT_NO_THROW(GridSpec(76, 608, 608));
  EXPECT_NO_THROW(GridSpec(19, 608, 608));
}

TEST(CellCenter, Examples) {
  const GridSpec s(2, 608, 608);
  EXPECT_EQ(cell_center({0, 0}, s), Vec2(152, 152));
  EXPECT_EQ(cell_center({1, 1}, s), Vec2(456, 456));
  EXPECT_THROW(cell_center({2, 0}, s), Error);
  EXPECT_THROW(cell_center({0, -1}, s), Error);
}

TEST(CellCenter, AllDistinctAndInside) {
  const GridSpec s(76, 608, 608);
  std::set<std::pair<double, double>> seen;
  for (int r = 0; r < 76; ++r)
    for (int c = 0; c < 76; ++c) {
      const Vec2 p = cell_center({r, c}, s);
      EXPECT_TRUE(cam().contains(p));
      seen.insert({p.x(), p.y()});
    }
  EXPECT_EQ(seen.size(), 76u * 76u);
}

TEST(Offsets, EncodeExample) {
  const GridSpec s(76, 608, 608);
  const CellIndex idx{10, 20};
  EXPECT_EQ(encode_offset(cell_center(idx, s), idx, s), Vec2(0, 0));
  const Vec2 h = encode_offset(cell_center(idx, s) + Vec2(60.8, 0), idx, s);
  EXPECT_NEAR(h.x(), 1.0, 1e-12);
  EXPECT_EQ(h.y(), 0.0);
}

TEST(Offsets, RoundTrip) {
  const GridSpec s(76, 608, 608);
  Rng rng(9);
  std::uniform_real_distribution<double> u(-2000.0, 2000.0);
  std::uniform_int_distribution<int> cell(0, 75);
  for (int i = 0; i < 1000; ++i) {
    const Vec2 g(u(rng), u(rng));
    const CellIndex idx{cell(rng), cell(rng)};
    EXPECT_LT((decode_offset(encode_offset(g, idx, s), idx, s) - g).norm(), 1e-9);
  }
}

TEST(Offsets, NormSpanRescalesLinearly) {
  const GridSpec a(19, 608, 608, 10.0), b(19, 608, 608, 25.0);
  const CellIndex idx{3, 7};
  const Vec2 g(123.4, 456.7);
  EXPECT_LT((encode_offset(g, idx, b) - 2.5 * encode_offset(g, idx, a)).norm(), 1e-12);
  EXPECT_LT((decode_offset(encode_offset(g, idx, b), idx, b) - g).norm(), 1e-9);
}

TEST(Residual, Examples) {
  const GridSpec s(19, 608, 608);
  const CellIndex idx{4, 4};
  const Vec2 c = cell_center(idx, s);
  EXPECT_EQ(residual({encode_offset(c, idx, s), 1.0}, idx, c, s), Vec2(0, 0));
  EXPECT_EQ(residual({Vec2(1, 0), 1.0}, idx, c, s), Vec2(1, 0));
  // |delta| in normalized units = pixel error * span / width.
  Rng rng(10);
  for (int i = 0; i < 100; ++i) {
    const Vec2 g = c + 100.0 * Vec2::Random();
    const Vec2 pred = g + 20.0 * Vec2::Random();
    const Vec2 d = residual({encode_offset(pred, idx, s), 1.0}, idx, g, s);
    EXPECT_NEAR(d.norm(), (pred - g).norm() * 10.0 / 608.0, 1e-12);
  }
}

TEST(Rasterize, EmptySceneIsBackground) {
  Scene scene{cam(), {}};
  const auto models = std::vector<ObjectModel>{cube(1, 0.1)};
  const auto gt = rasterize_ground_truth(scene, models, GridSpec(19, 608, 608), cam());
  for (const auto& c : gt.cells) {
    EXPECT_EQ(c.class_label, 0);
    EXPECT_EQ(c.instance, -1);
  }
}

TEST(Rasterize, CenteredCubeCoversFourCells) {
  // Half-size 0.1 at depth 0.7: front face spans 600*0.1/0.6 = 100 px around
  // the principal point, which is the grid corner shared by cells (1,1)..(2,2).
  const auto models = std::vector<ObjectModel>{cube(1, 0.1)};
  const Pose pose(Mat3::Identity(), Vec3(0, 0, 0.7));
  Scene scene{cam(), {{1, pose}}};
  const GridSpec s(4, 608, 608);
  double r = 0.0;
  for (const auto& kp : models[0].keypoints) {
    const Vec2 uv = project(kp, pose, cam());
    r = std::max({r, std::abs(uv.x() - 304.0), std::abs(uv.y() - 304.0)});
  }
  EXPECT_NEAR(r, 100.0, 1e-9);
  const auto gt = rasterize_ground_truth(scene, models, s, cam());
  const auto expected_kp = project_all(models[0].keypoints, pose, cam());
  int labeled = 0;
  for (int row = 0; row < 4; ++row)
    for (int col = 0; col < 4; ++col) {
      const auto& c = gt.at({row, col});
      const bool inside = subsamples_in_square(s, row, col, r) > 8;
      EXPECT_EQ(c.class_label != 0, inside) << row << "," << col;
      if (c.class_label) {
        ++labeled;
        EXPECT_EQ(c.keypoints, expected_kp);
      }
    }
  EXPECT_EQ(labeled, 4);
  EXPECT_EQ(gt.at({1, 1}).class_label, 1);
  EXPECT_EQ(gt.at({2, 2}).class_label, 1);
}

TEST(Rasterize, NearerObjectWinsContestedCells) {
  // Both cubes face-on and centred on the optical axis, so each silhouette is
  // its front face: near (half 0.05, depth 1) r = 30/0.95, far (half 0.2, depth 2) r = 120/1.8.
  const auto models = std::vector<ObjectModel>{cube(1, 0.05, 2), cube(2, 0.2, 3)};
  Scene scene{cam(), {{2, Pose(Mat3::Identity(), Vec3(0, 0, 2))}, {1, Pose(Mat3::Identity(), Vec3(0, 0, 1))}}};
  const GridSpec s(16, 608, 608);
  const double r_near = 600 * 0.05 / 0.95, r_far = 600 * 0.2 / 1.8;
  const auto gt = rasterize_ground_truth(scene, models, s, cam());
  const double cw = s.cell_width();
  int contested = 0;
  for (int row = 0; row < 16; ++row)
    for (int col = 0; col < 16; ++col) {
      int votes[3] = {0, 0, 0};  // background, far, near
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) {
          const double du = std::abs(col * cw + (sx + 0.5) * cw / 4 - 304.0);
          const double dv = std::abs(row * cw + (sy + 0.5) * cw / 4 - 304.0);
          if (du <= r_near && dv <= r_near) ++votes[2];
          else if (du <= r_far && dv <= r_far) ++votes[1];
          else ++votes[0];
        }
      int expect = 0;
      if (votes[2] >= votes[1] && votes[2] >= votes[0] && votes[2] > 0) expect = 1;
      else if (votes[1] >= votes[0] && votes[1] > 0) expect = 2;
      if (votes[1] > 0 && votes[2] > 0) ++contested;
      EXPECT_EQ(gt.at({row, col}).class_label, expect) << row << "," << col;
    }
  EXPECT_GT(contested, 0);
}

TEST(Rasterize, KeypointsAndOcclusionConsistency) {
  Rng rng(11);
  const auto models = std::vector<ObjectModel>{cube(1, 0.05, 4), cube(2, 0.04, 5)};
  const GridSpec s(38, 608, 608);
  for (int trial = 0; trial < 10; ++trial) {
    Scene scene{cam(), {}};
    for (int i = 0; i < 4; ++i) {
      std::uniform_real_distribution<double> u(-0.15, 0.15), z(0.6, 1.2);
      scene.instances.push_back({1 + i % 2, Pose(random_rotation(rng), Vec3(u(rng), u(rng), z(rng)))});
    }
    const auto gt = rasterize_ground_truth(scene, models, s, cam());
    const auto fps = make_footprints(scene, models);
    for (std::size_t c = 0; c < gt.cells.size(); ++c) {
      const auto& cell = gt.cells[c];
      if (cell.class_label == 0) continue;
      const auto& inst = scene.instances[static_cast<std::size_t>(cell.instance)];
      EXPECT_EQ(cell.class_label, inst.model_id);
      EXPECT_EQ(cell.keypoints, project_all(find_model(models, inst.model_id).keypoints, inst.pose, cam()));
    }
    // Brute-force z-buffer: every sub-sample goes to the nearest covering
    // instance; the cell label must be the majority owner.
    const double cw = s.cell_width();
    for (std::size_t c = 0; c < gt.cells.size(); ++c) {
      const CellIndex idx = cell_index(c, s);
      std::vector<int> votes(scene.instances.size() + 1, 0);
      std::vector<double> near(scene.instances.size() + 1, 1e300);
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) {
          const Vec2 uv(idx.col * cw + (sx + 0.5) * cw / 4, idx.row * cw + (sy + 0.5) * cw / 4);
          int owner = -1;
          double best = 1e300;
          for (const auto& f : fps)
            if (auto d = f.depth_at(uv, cam()); d && *d < best) {
              best = *d;
              owner = f.instance;
            }
          ++votes[static_cast<std::size_t>(owner + 1)];
          near[static_cast<std::size_t>(owner + 1)] = std::min(near[static_cast<std::size_t>(owner + 1)], best);
        }
      std::size_t win = 0;
      for (std::size_t v = 1; v < votes.size(); ++v)
        if (votes[v] > votes[win] || (votes[v] == votes[win] && votes[v] > 0 && near[v] < near[win])) win = v;
      EXPECT_EQ(gt.cells[c].instance, static_cast<int>(win) - 1) << "cell " << c;
    }
    EXPECT_EQ(gt, rasterize_ground_truth(scene, models, s, cam()));
  }
}

TEST(Rasterize, BehindCameraInstanceSkipped) {
  const auto models = std::vector<ObjectModel>{cube(1, 0.05)};
  Scene scene{cam(), {{1, Pose(Mat3::Identity(), Vec3(0, 0, -1))}}};
  const auto gt = rasterize_ground_truth(scene, models, GridSpec(19, 608, 608), cam());
  ASSERT_EQ(gt.skipped_instances.size(), 1u);
  for (const auto& c : gt.cells) EXPECT_EQ(c.class_label, 0);
}

TEST(PerfectPredictions, DecodeToGroundTruth) {
  const auto models = std::vector<ObjectModel>{cube(1, 0.08)};
  Scene scene{cam(), {{1, Pose(rotation_exp(Vec3(0.4, 0.2, 0.1)), Vec3(0.05, -0.02, 0.9))}}};
  const GridSpec s(19, 608, 608);
  const auto gt = rasterize_ground_truth(scene, models, s, cam());
  const auto pred = perfect_predictions(gt);
  EXPECT_NO_THROW(pred.validate());
  for (std::size_t c = 0; c < gt.cells.size(); ++c) {
    if (gt.cells[c].class_label == 0) continue;
    for (std::size_t k = 0; k < 8; ++k) {
      const Vec2 d = decode_prediction(cell_index(c, s), pred.cells[c].keypoints[k], s);
      EXPECT_LT((d - gt.cells[c].keypoints[k]).norm(), 1e-9);
    }
  }
}
