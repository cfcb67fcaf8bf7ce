#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "segpose/simulator.hpp"

using namespace segpose;

namespace {

const CameraIntrinsics K = default_intrinsics();
const std::vector<ObjectModel>& library() {
  static const auto m = default_model_library(7, 120);
  return m;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) r[idx[i]] = static_cast<double>(i);
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

void expect_in_frustum(const Scene& s) {
  for (const auto& inst : s.instances) {
    const auto& m = find_model(library(), inst.model_id);
    EXPECT_TRUE(K.contains(project(surface_centroid(m), inst.pose, K)));
    for (const auto& p : m.surface_points) EXPECT_GT(inst.pose.apply(p).z(), 0.0);
  }
}

}  // namespace

TEST(Noise, ValidationAndProfiles) {
  EXPECT_NO_THROW(NoiseModel::ablation().validate());
  EXPECT_EQ(noise_profile("default"), NoiseModel::ablation());
  EXPECT_EQ(noise_profile("zero"), NoiseModel::zero());
  const NoiseModel d = NoiseModel::ablation();
  EXPECT_EQ(d.inlier_sigma_px, 3.0);
  EXPECT_EQ(d.outlier_rate, 0.2);
  EXPECT_EQ(d.outlier_sigma_px, 40.0);
  EXPECT_EQ(d.confidence_jitter, 0.1);
  EXPECT_EQ(d.label_flip_rate, 0.02);
  EXPECT_EQ(d.tau, 1.0);
  NoiseModel bad = d;
  bad.outlier_rate = 1.5;
  EXPECT_THROW(bad.validate(), Error);
  bad = d;
  bad.confidence_jitter = 1.0;
  EXPECT_THROW(bad.validate(), Error);
  bad = d;
  bad.inlier_sigma_px = -1.0;
  EXPECT_THROW(bad.validate(), Error);
  try {
    noise_profile("loud");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConfigError);
  }
}

TEST(Scene, SingleInstance) {
  SceneConfig c;
  c.min_objects = c.max_objects = 1;
  const std::vector<ObjectModel> one{library()[2]};
  const Scene s = sample_scene(c, one, K, 5);
  ASSERT_EQ(s.instances.size(), 1u);
  EXPECT_EQ(s.instances[0].model_id, 3);
  expect_in_frustum(s);
}

TEST(Scene, Deterministic) {
  const Scene a = sample_scene(SceneConfig{}, library(), K, 77);
  const Scene b = sample_scene(SceneConfig{}, library(), K, 77);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, sample_scene(SceneConfig{}, library(), K, 78));
}

TEST(Scene, CountsCoverRangeAndStayInFrustum) {
  std::set<std::size_t> counts;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Scene s = sample_scene(SceneConfig{}, library(), K, seed);
    EXPECT_GE(s.instances.size(), 3u);
    EXPECT_LE(s.instances.size(), 8u);
    counts.insert(s.instances.size());
    expect_in_frustum(s);
  }
  EXPECT_EQ(counts, (std::set<std::size_t>{3, 4, 5, 6, 7, 8}));
}

TEST(Scene, ErrorsAndExhaustion) {
  EXPECT_THROW(sample_scene(SceneConfig{}, {}, K, 0), Error);
  SceneConfig bad;
  bad.min_objects = 5;
  bad.max_objects = 2;
  EXPECT_THROW(sample_scene(bad, library(), K, 0), Error);
  SceneConfig crowded;
  crowded.min_objects = crowded.max_objects = 200;
  crowded.max_attempts = 20;
  try {
    sample_scene(crowded, library(), K, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SamplingExhausted);
  }
}

TEST(Synthesis, ZeroNoiseIsExact) {
  const Scene s = sample_scene(SceneConfig{}, library(), K, 3);
  const GridSpec spec(38, 608, 608);
  const auto syn = synthesize_predictions(s, library(), spec, K, NoiseModel::zero(), 3);
  for (std::size_t c = 0; c < syn.truth.cells.size(); ++c) {
    const auto& g = syn.truth.cells[c];
    const auto& p = syn.prediction.cells[c];
    EXPECT_EQ(p.class_label, g.class_label);
    if (!g.class_label) continue;
    for (std::size_t k = 0; k < g.keypoints.size(); ++k) {
      EXPECT_LT((decode_prediction(cell_index(c, spec), p.keypoints[k], spec) - g.keypoints[k]).norm(), 1e-9);
      EXPECT_NEAR(p.keypoints[k].confidence, 1.0, 1e-12);
    }
  }
}

TEST(Synthesis, InlierSigmaMatchesSampleStd) {
  NoiseModel n = NoiseModel::zero();
  n.inlier_sigma_px = 3.0;
  const GridSpec spec(76, 608, 608);
  std::vector<double> comps;
  for (std::uint64_t seed = 0; comps.size() < 20000; ++seed) {
    const Scene s = sample_scene(SceneConfig{}, library(), K, seed);
    const auto syn = synthesize_predictions(s, library(), spec, K, n, seed);
    for (std::size_t c = 0; c < syn.truth.cells.size(); ++c) {
      const auto& g = syn.truth.cells[c];
      if (!g.class_label) continue;
      for (std::size_t k = 0; k < g.keypoints.size(); ++k) {
        const Vec2 e = decode_prediction(cell_index(c, spec), syn.prediction.cells[c].keypoints[k], spec) -
                       g.keypoints[k];
        comps.push_back(e.x());
        comps.push_back(e.y());
      }
    }
  }
  double mean = 0.0, var = 0.0;
  for (double x : comps) mean += x;
  mean /= static_cast<double>(comps.size());
  for (double x : comps) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(comps.size() - 1));
  EXPECT_NEAR(sd, 3.0, 0.05 * 3.0);
}

TEST(Synthesis, ConfidenceRanksOppositeToError) {
  NoiseModel n = NoiseModel::zero();
  n.inlier_sigma_px = 4.0;
  n.outlier_rate = 0.3;
  n.outlier_sigma_px = 30.0;
  const GridSpec spec(19, 608, 608);
  const Scene s = sample_scene(SceneConfig{}, library(), K, 9);
  const auto syn = synthesize_predictions(s, library(), spec, K, n, 9);
  int cells = 0;
  for (std::size_t c = 0; c < syn.truth.cells.size(); ++c) {
    const auto& g = syn.truth.cells[c];
    if (!g.class_label) continue;
    std::vector<double> err, conf;
    for (std::size_t k = 0; k < g.keypoints.size(); ++k) {
      const auto& kp = syn.prediction.cells[c].keypoints[k];
      err.push_back((decode_prediction(cell_index(c, spec), kp, spec) - g.keypoints[k]).norm());
      conf.push_back(kp.confidence);
    }
    EXPECT_NEAR(spearman(err, conf), -1.0, 1e-12);
    ++cells;
  }
  EXPECT_GT(cells, 0);
}

TEST(Synthesis, ConfidenceIsTargetOfResidual) {
  // Jitter-free confidences are exactly exp(-tau |delta|); their mean sits above
  // exp(-tau * mean |delta|) by convexity.
  NoiseModel n = NoiseModel::zero();
  n.inlier_sigma_px = 20.0;
  n.tau = 2.0;
  const GridSpec spec(38, 608, 608);
  double sum_conf = 0.0, sum_norm = 0.0, sum_target = 0.0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene s = sample_scene(SceneConfig{}, library(), K, seed);
    const auto syn = synthesize_predictions(s, library(), spec, K, n, seed);
    for (std::size_t c = 0; c < syn.truth.cells.size(); ++c) {
      const auto& g = syn.truth.cells[c];
      if (!g.class_label) continue;
      for (std::size_t k = 0; k < g.keypoints.size(); ++k) {
        const auto& kp = syn.prediction.cells[c].keypoints[k];
        const double d = residual(kp, cell_index(c, spec), g.keypoints[k], spec).norm();
        sum_conf += kp.confidence;
        sum_norm += d;
        sum_target += std::exp(-n.tau * d);
        ++count;
      }
    }
  }
  EXPECT_NEAR(sum_conf, sum_target, 1e-9 * sum_target);
  EXPECT_GT(sum_conf / count, std::exp(-n.tau * sum_norm / count));
}

TEST(Synthesis, LabelFlipsGoToOtherClasses) {
  NoiseModel n = NoiseModel::zero();
  n.label_flip_rate = 1.0;
  const GridSpec spec(38, 608, 608);
  const Scene s = sample_scene(SceneConfig{}, library(), K, 4);
  const auto syn = synthesize_predictions(s, library(), spec, K, n, 4);
  for (std::size_t c = 0; c < syn.truth.cells.size(); ++c) {
    const int g = syn.truth.cells[c].class_label, p = syn.prediction.cells[c].class_label;
    if (!g) {
      EXPECT_EQ(p, 0);
      continue;
    }
    EXPECT_NE(p, g);
    EXPECT_GE(p, 1);
    EXPECT_LE(p, 6);
  }

  n.label_flip_rate = 0.1;
  std::size_t fg = 0, flipped = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene sc = sample_scene(SceneConfig{}, library(), K, seed);
    const auto sy = synthesize_predictions(sc, library(), spec, K, n, seed);
    for (std::size_t c = 0; c < sy.truth.cells.size(); ++c) {
      if (!sy.truth.cells[c].class_label) continue;
      ++fg;
      flipped += sy.prediction.cells[c].class_label != sy.truth.cells[c].class_label;
    }
  }
  const double rate = static_cast<double>(flipped) / static_cast<double>(fg);
  const double se = std::sqrt(0.1 * 0.9 / static_cast<double>(fg));
  EXPECT_NEAR(rate, 0.1, 4.0 * se);
}

TEST(Synthesis, DeterministicPerSeed) {
  const Scene s = sample_scene(SceneConfig{}, library(), K, 12);
  const GridSpec spec(19, 608, 608);
  const auto a = synthesize_predictions(s, library(), spec, K, NoiseModel::ablation(), 5);
  const auto b = synthesize_predictions(s, library(), spec, K, NoiseModel::ablation(), 5);
  const auto c = synthesize_predictions(s, library(), spec, K, NoiseModel::ablation(), 6);
  EXPECT_EQ(a.prediction, b.prediction);
  EXPECT_FALSE(a.prediction == c.prediction);
}

TEST(Scene, SameClassInstancesSeparated) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Scene s = sample_scene(SceneConfig{}, library(), K, seed);
    for (std::size_t i = 0; i < s.instances.size(); ++i)
      for (std::size_t j = i + 1; j < s.instances.size(); ++j) {
        if (s.instances[i].model_id != s.instances[j].model_id) continue;
        const auto& m = find_model(library(), s.instances[i].model_id);
        Vec2 a = Vec2::Zero(), b = Vec2::Zero();
        for (const auto& kp : m.keypoints) {
          a += project(kp, s.instances[i].pose, K) / 8.0;
          b += project(kp, s.instances[j].pose, K) / 8.0;
        }
        EXPECT_GE((a - b).norm(), 60.0);
      }
  }
}
