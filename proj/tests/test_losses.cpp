#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "segpose/losses.hpp"
#include "segpose/pipeline.hpp"

using namespace segpose;

namespace {

// 2x2 grid, one keypoint, only cell (0,0) in the foreground with class 1.
struct Tiny {
  GridSpec spec{2, 608, 608};
  PredictionGrid grid{spec, 1};
  GroundTruthGrid gt{spec, 1};

  Tiny(const Vec2& delta, double conf) {
    const Vec2 g(100.0, 200.0);
    gt.cells[0].class_label = 1;
    gt.cells[0].instance = 0;
    gt.cells[0].keypoints = {g};
    grid.cells[0].class_label = 1;
    grid.cells[0].keypoints[0] = {encode_offset(g, {0, 0}, spec) + delta, conf};
  }
};

struct Noisy {
  std::vector<ObjectModel> models = default_model_library(7, 120);
  GridSpec spec{19, 608, 608};
  Synthesis syn;

  explicit Noisy(std::uint64_t seed) {
    SceneConfig sc;
    sc.min_objects = 2;
    sc.max_objects = 3;
    const Scene scene = sample_scene(sc, models, default_intrinsics(), seed);
    syn = synthesize_predictions(scene, models, spec, default_intrinsics(), NoiseModel::ablation(), seed + 1);
  }
};

}  // namespace

TEST(MedianFrequency, Examples) {
  EXPECT_EQ(median_frequency_weights({100.0, 100.0, 100.0}), (std::vector<double>{1, 1, 1}));
  const auto w = median_frequency_weights({900.0, 90.0, 10.0});
  EXPECT_NEAR(w[0], 0.1, 1e-12);
  EXPECT_NEAR(w[1], 1.0, 1e-12);
  EXPECT_NEAR(w[2], 9.0, 1e-12);
}

TEST(MedianFrequency, ZeroCountsExcludedAndAllZeroThrows) {
  // Non-zero freqs 0.8, 0.2 -> median 0.5.
  const auto w = median_frequency_weights({80.0, 0.0, 20.0});
  EXPECT_NEAR(w[0], 0.5 / 0.8, 1e-12);
  EXPECT_EQ(w[1], 0.0);
  EXPECT_NEAR(w[2], 0.5 / 0.2, 1e-12);
  try {
    median_frequency_weights({0.0, 0.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::AllZero);
  }
}

TEST(MedianFrequency, DominantBackgroundBelowOne) {
  Rng rng(1);
  std::uniform_real_distribution<double> u(1.0, 100.0);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> c{5000.0, u(rng), u(rng), u(rng), u(rng)};
    EXPECT_LT(median_frequency_weights(c)[0], 1.0);
  }
}

TEST(Focal, ScalarExamples) {
  Eigen::MatrixXd p(1, 2);
  p << 0.5, 0.5;
  const std::vector<int> y{1};
  EXPECT_NEAR(focal_loss(p, y, {}, 2.0).value, 0.25 * std::log(2.0), 1e-15);
  EXPECT_NEAR(focal_loss(p, y, {}, 2.0).value, 0.17329, 1e-5);
  p << 0.0, 1.0;
  EXPECT_EQ(focal_loss(p, y, {}, 2.0).value, 0.0);
}

TEST(Focal, GammaZeroIsWeightedCrossEntropy) {
  Rng rng(2);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Eigen::MatrixXd p(50, 4);
  std::vector<int> y;
  for (int r = 0; r < 50; ++r) {
    for (int j = 0; j < 4; ++j) p(r, j) = u(rng);
    p.row(r) /= p.row(r).sum();
    y.push_back(r % 4);
  }
  const std::vector<double> w{0.3, 1.2, 2.0, 0.7};
  double ce = 0.0;
  for (int r = 0; r < 50; ++r) ce -= w[static_cast<std::size_t>(y[r])] * std::log(p(r, y[r]));
  EXPECT_NEAR(focal_loss(p, y, w, 0.0).value, ce, 1e-12 * ce);
}

TEST(Focal, SimplexCheckAndDegenerateFlag) {
  Eigen::MatrixXd p(1, 2);
  p << 0.6, 0.6;
  const std::vector<int> y{0};
  EXPECT_THROW(focal_loss(p, y, {}, 2.0), Error);
  p << 0.0, 1.0;
  const LossTerm t = focal_loss(p, y, {}, 2.0);
  EXPECT_TRUE(t.degenerate);
  EXPECT_TRUE(std::isfinite(t.value));
  EXPECT_NEAR(t.value, -std::log(1e-12), 1e-6);
}

TEST(Position, Examples) {
  Tiny perfect(Vec2::Zero(), 1.0);
  EXPECT_EQ(loss_pos(perfect.grid, perfect.gt, {}).value, 0.0);
  Tiny t(Vec2(0.3, -0.4), 1.0);
  const LossTerm l = loss_pos(t.grid, t.gt, {});
  EXPECT_NEAR(l.value, 0.7, 1e-12);
  EXPECT_EQ(l.gradient[0], 1.0);
  EXPECT_EQ(l.gradient[1], -1.0);
  // Background cells contribute neither value nor gradient.
  t.grid.cells[3].keypoints[0].offset = Vec2(5, 5);
  EXPECT_NEAR(loss_pos(t.grid, t.gt, {}).value, 0.7, 1e-12);
}

TEST(Position, MatchesBruteForceSum) {
  Noisy n(3);
  const std::vector<double> w{0.5, 1.0, 2.0, 0.3, 1.5, 0.8, 1.1};
  double sum = 0.0;
  const auto& s = n.syn.prediction.spec;
  for (std::size_t c = 0; c < n.syn.truth.cells.size(); ++c) {
    const auto& g = n.syn.truth.cells[c];
    if (!g.class_label) continue;
    const Vec2 ctr = cell_center(cell_index(c, s), s);
    for (std::size_t k = 0; k < 8; ++k) {
      const Vec2 h = n.syn.prediction.cells[c].keypoints[k].offset;
      const Vec2 d = ctr.cwiseProduct(s.scale()) + h - g.keypoints[k].cwiseProduct(s.scale());
      sum += w[static_cast<std::size_t>(g.class_label)] * (std::abs(d.x()) + std::abs(d.y()));
    }
  }
  EXPECT_NEAR(loss_pos(n.syn.prediction, n.syn.truth, w).value, sum, 1e-10 * sum);
}

TEST(Confidence, Examples) {
  Tiny zero(Vec2::Zero(), 1.0);
  EXPECT_EQ(loss_conf(zero.grid, zero.gt, 1.0, {}).value, 0.0);
  Tiny unit(Vec2(0.6, 0.8), 0.0);  // |delta| = 1
  EXPECT_NEAR(loss_conf(unit.grid, unit.gt, 1.0, {}).value, std::exp(-1.0), 1e-15);
  Tiny at_target(Vec2(0.6, 0.8), std::exp(-2.0));
  EXPECT_NEAR(loss_conf(at_target.grid, at_target.gt, 2.0, {}).value, 0.0, 1e-16);
}

TEST(Confidence, TargetRangeAndMonotone) {
  double prev = 2.0;
  for (double r = 0.0; r < 20.0; r += 0.1) {
    const double t = confidence_target(Vec2(r, 0.0), 1.5);
    EXPECT_GT(t, 0.0);
    EXPECT_LE(t, 1.0);
    EXPECT_LT(t, prev);
    prev = t;
  }
}

TEST(Confidence, GradientIgnoresOffsets) {
  // Target is detached: the offsets' effect on the target is not in the gradient.
  Tiny t(Vec2(0.3, 0.1), 0.2);
  const LossTerm l = loss_conf(t.grid, t.gt, 1.0, {});
  EXPECT_EQ(l.gradient.size(), 4);
  EXPECT_EQ(l.gradient[0], -1.0);
}

TEST(Total, ComponentsAndInvariants) {
  Noisy n(5);
  LossConfig cfg;
  cfg.beta = 0.7;
  cfg.gamma_reg = 1.3;
  cfg.class_weights = {0.2, 1.0, 1.4, 0.6, 2.0, 0.9, 1.1};
  const LossReport r = loss_total(n.syn.prediction, n.syn.truth, cfg);
  const double pos = loss_pos(n.syn.prediction, n.syn.truth, cfg.class_weights).value;
  const double conf = loss_conf(n.syn.prediction, n.syn.truth, cfg.tau, cfg.class_weights).value;
  const double seg = loss_seg(n.syn.prediction, n.syn.truth, cfg).value;
  EXPECT_NEAR(r.reg, cfg.beta * pos + cfg.gamma_reg * conf, 1e-12 * r.reg);
  EXPECT_NEAR(r.total, seg + r.reg, 1e-12 * r.total);
  EXPECT_GE(r.seg, 0.0);
  EXPECT_GE(r.pos, 0.0);
  EXPECT_GE(r.conf, 0.0);

  LossConfig off = cfg;
  off.beta = 0.0;
  off.gamma_reg = 0.0;
  const LossReport s = loss_total(n.syn.prediction, n.syn.truth, off);
  EXPECT_EQ(s.total, s.seg);
}

TEST(Total, PerfectGridIsZero) {
  Noisy n(6);
  const PredictionGrid perfect = perfect_predictions(n.syn.truth);
  const LossReport r = loss_total(perfect, n.syn.truth, LossConfig{});
  EXPECT_EQ(r.total, 0.0);
  EXPECT_FALSE(r.degenerate);
}

TEST(Total, WeightScalingIsLinear) {
  Noisy n(7);
  LossConfig a;
  a.class_weights = {0.5, 1.0, 1.5, 0.7, 2.0, 0.9, 1.3};
  LossConfig b = a;
  for (auto& w : b.class_weights) w *= 3.0;
  const LossReport ra = loss_total(n.syn.prediction, n.syn.truth, a);
  const LossReport rb = loss_total(n.syn.prediction, n.syn.truth, b);
  EXPECT_NEAR(rb.seg, 3.0 * ra.seg, 1e-12 * rb.seg);
  EXPECT_NEAR(rb.pos, 3.0 * ra.pos, 1e-12 * rb.pos);
  EXPECT_NEAR(rb.conf, 3.0 * ra.conf, 1e-12 * rb.conf);
}

TEST(Total, SpecMismatchThrows) {
  Noisy n(8);
  GroundTruthGrid other(GridSpec(38, 608, 608), 8);
  try {
    loss_pos(n.syn.prediction, other, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SpecMismatch);
  }
}

TEST(GradCheck, LinearFunctionIsExact) {
  const Eigen::VectorXd a = Eigen::VectorXd::LinSpaced(20, -3.0, 5.0);
  DifferentiableFn f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) *g = a;
    return a.dot(x);
  };
  const auto r = grad_check(f, Eigen::VectorXd::Constant(20, 0.5));
  EXPECT_LE(r.max_rel_err, 1e-8);
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.checked, 20);
}

TEST(GradCheck, DetectsWrongGradient) {
  DifferentiableFn f = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) *g = 2.0 * x, (*g)[2] *= 1.01;
    return x.squaredNorm();
  };
  const auto r = grad_check(f, Eigen::VectorXd::Constant(5, 1.0));
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.worst_coordinate, 2);
}

TEST(GradCheck, NonFiniteThrows) {
  DifferentiableFn f = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) *g = Eigen::VectorXd::Zero(x.size());
    return x[0] > 1.0 ? std::nan("") : 0.0;
  };
  try {
    grad_check(f, Eigen::VectorXd::Constant(1, 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFinite);
  }
}

TEST(GradCheck, PositionFarFromKink) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    GradCheckOptions opt;
    opt.tolerance = 1e-6;
    const auto r = random_gradcheck(GradTerm::Position, seed, 19, opt);
    EXPECT_LT(r.max_rel_err, 1e-6) << seed;
    EXPECT_GT(r.checked, 0);
  }
}

TEST(GradCheck, ConfidenceAndFocal) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EXPECT_LT(random_gradcheck(GradTerm::Confidence, seed).max_rel_err, 1e-4) << seed;
    EXPECT_LT(random_gradcheck(GradTerm::Focal, seed).max_rel_err, 1e-4) << seed;
    EXPECT_LT(random_gradcheck(GradTerm::FocalProbs, seed).max_rel_err, 1e-4) << seed;
  }
}
