#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <span>
#include <vector>

#include "segpose/grid.hpp"

namespace segpose {

struct LossConfig {
  double tau = 1.0;          // confidence modulating factor, normalized units^-1
  double beta = 1.0;         // weight of the position term
  double gamma_reg = 1.0;    // weight of the confidence term
  double focal_gamma = 2.0;  // focusing exponent
  std::vector<double> class_weights;  // K+1 entries; empty means all ones

  void validate() const {
    if (!(tau > 0.0)) throw Error(ErrorKind::InvalidArgument, "tau must be positive");
    if (!(beta >= 0.0) || !(gamma_reg >= 0.0))
      throw Error(ErrorKind::InvalidArgument, "beta and gamma_reg must be non-negative");
    if (!(focal_gamma >= 0.0)) throw Error(ErrorKind::InvalidArgument, "focal_gamma must be >= 0");
    for (double w : class_weights)
      if (!(w > 0.0)) throw Error(ErrorKind::InvalidArgument, "class weights must be positive");
  }
};

/// A scalar loss together with its gradient wrt the inputs it was asked about.
struct LossTerm {
  double value = 0.0;
  Eigen::VectorXd gradient;
  bool degenerate = false;  // a probability was clamped away from zero
};

/// Offsets are laid out as ((cell * N + keypoint) * 2 + axis); confidences as
/// (cell * N + keypoint); class scores as (cell * (K+1) + class).
struct LossReport {
  double total = 0.0;
  double seg = 0.0;
  double pos = 0.0;
  double conf = 0.0;
  double reg = 0.0;
  Eigen::VectorXd grad_offsets;
  Eigen::VectorXd grad_confidences;
  Eigen::VectorXd grad_class_scores;
  bool degenerate = false;
};

inline constexpr double kMinProbability = 1e-12;

// Median-frequency class balancing. Zero-count classes get weight 0 and do
// not take part in the median.
inline std::vector<double> median_frequency_weights(std::span<const double> counts) {
  double total = 0.0;
  for (double c : counts) {
    if (!(c >= 0.0)) throw Error(ErrorKind::InvalidArgument, "class counts must be non-negative");
    total += c;
  }
  if (!(total > 0.0)) throw Error(ErrorKind::AllZero, "all class counts are zero");
  std::vector<double> freqs;
  for (double c : counts)
    if (c > 0.0) freqs.push_back(c / total);
  std::sort(freqs.begin(), freqs.end());
  const std::size_t m = freqs.size();
  const double median = m % 2 ? freqs[m / 2] : 0.5 * (freqs[m / 2 - 1] + freqs[m / 2]);
  std::vector<double> weights;
  weights.reserve(counts.size());
  for (double c : counts) weights.push_back(c > 0.0 ? median / (c / total) : 0.0);
  return weights;
}

inline std::vector<double> median_frequency_weights(const std::vector<double>& counts) {
  return median_frequency_weights(std::span<const double>(counts));
}

namespace detail {

inline double class_weight(std::span<const double> weights, int label) {
  if (weights.empty()) return 1.0;
  if (label < 0 || static_cast<std::size_t>(label) >= weights.size())
    throw Error(ErrorKind::OutOfRange, "class label has no weight");
  return weights[static_cast<std::size_t>(label)];
}

inline void check_shared_spec(const PredictionGrid& grid, const GroundTruthGrid& gt) {
  if (!(grid.spec == gt.spec) || grid.num_keypoints != gt.num_keypoints ||
      grid.cells.size() != gt.cells.size())
    throw Error(ErrorKind::SpecMismatch, "prediction and ground-truth grids differ in layout");
}

inline double l1_sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Focal term and its derivative wrt p_label, no input validation.
inline void focal_term(double p, double w, double gamma, double& value, double& dvalue,
                       bool& degenerate) {
  if (p <= kMinProbability) {
    p = kMinProbability;
    degenerate = true;
  }
  if (p >= 1.0) {
    value = 0.0;
    dvalue = gamma == 0.0 ? -w : 0.0;
    return;
  }
  const double q = 1.0 - p;
  const double lp = std::log(p);
  const double mod = std::pow(q, gamma);
  value = -w * mod * lp;
  dvalue = w * ((gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0) * lp) - mod / p);
}

}  // namespace detail

/// Confidence target exp(-tau * |delta|_2); lies in (0, 1].
inline double confidence_target(const Vec2& delta, double tau) {
  return std::exp(-tau * delta.norm());
}

/// Focal loss summed over cells: -w_y (1 - p_y)^gamma log p_y.
///
/// `probs` holds one probability row per cell. Rows must lie on the simplex
/// (sum within 1e-9 of one). Probabilities <= 1e-12 are clamped and flagged.
/// The gradient has the shape of `probs` flattened row-major.
inline LossTerm focal_loss_unchecked(const Eigen::MatrixXd& probs, std::span<const int> labels,
                                     std::span<const double> weights, double focal_gamma) {
  LossTerm out;
  out.gradient = Eigen::VectorXd::Zero(probs.size());
  const Eigen::Index classes = probs.cols();
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= classes) throw Error(ErrorKind::OutOfRange, "label outside class range");
    double v = 0.0, dv = 0.0;
    detail::focal_term(probs(r, y), detail::class_weight(weights, y), focal_gamma, v, dv,
                       out.degenerate);
    out.value += v;
    out.gradient[r * classes + y] = dv;
  }
  return out;
}

inline LossTerm focal_loss(const Eigen::MatrixXd& probs, std::span<const int> labels,
                           std::span<const double> weights, double focal_gamma) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size())
    throw Error(ErrorKind::SpecMismatch, "one label per probability row required");
  if (!(focal_gamma >= 0.0)) throw Error(ErrorKind::InvalidArgument, "focal_gamma must be >= 0");
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    if ((probs.row(r).array() < 0.0).any() || std::abs(probs.row(r).sum() - 1.0) > 1e-9)
      throw Error(ErrorKind::InvalidArgument, "class probabilities are not on the simplex");
  }
  return focal_loss_unchecked(probs, labels, weights, focal_gamma);
}

inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores) {
  Eigen::MatrixXd p(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const Eigen::RowVectorXd e = (scores.row(r).array() - scores.row(r).maxCoeff()).exp();
    p.row(r) = e / e.sum();
  }
  return p;
}

/// Focal loss on raw class scores (softmax applied per row); gradient wrt scores.
inline LossTerm focal_loss_logits(const Eigen::MatrixXd& scores, std::span<const int> labels,
                                  std::span<const double> weights, double focal_gamma) {
  const Eigen::MatrixXd p = softmax_rows(scores);
  LossTerm term = focal_loss_unchecked(p, labels, weights, focal_gamma);
  const Eigen::Index classes = scores.cols();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(scores.size());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    const double dy = term.gradient[r * classes + y];
    for (Eigen::Index j = 0; j < classes; ++j)
      g[r * classes + j] = dy * p(r, y) * ((j == y ? 1.0 : 0.0) - p(r, j));
  }
  term.gradient = std::move(g);
  return term;
}

/// Position term: sum over ground-truth foreground cells and keypoints of
/// w_class * |delta|_1, with delta in normalized units. Gradient wrt offsets.
inline LossTerm loss_pos(const PredictionGrid& grid, const GroundTruthGrid& gt,
                         std::span<const double> weights) {
  detail::check_shared_spec(grid, gt);
  const std::size_t n = grid.num_keypoints;
  LossTerm out;
  out.gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.cells.size() * n * 2));
  for (std::size_t c = 0; c < gt.cells.size(); ++c) {
    const auto& g = gt.cells[c];
    if (g.class_label == 0) continue;
    const double w = detail::class_weight(weights, g.class_label);
    const CellIndex idx = cell_index(c, grid.spec);
    for (std::size_t k = 0; k < n; ++k) {
      const Vec2 d = residual(grid.cells[c].keypoints[k], idx, g.keypoints[k], grid.spec);
      out.value += w * d.lpNorm<1>();
      const auto base = static_cast<Eigen::Index>((c * n + k) * 2);
      out.gradient[base] = w * detail::l1_sign(d.x());
      out.gradient[base + 1] = w * detail::l1_sign(d.y());
    }
  }
  return out;
}

/// Confidence term: sum of w_class * |s - exp(-tau |delta|_2)| over foreground
/// cells. The target is held constant, so the gradient is wrt confidences only.
inline LossTerm loss_conf(const PredictionGrid& grid, const GroundTruthGrid& gt, double tau,
                          std::span<const double> weights) {
  detail::check_shared_spec(grid, gt);
  if (!(tau > 0.0)) throw Error(ErrorKind::InvalidArgument, "tau must be positive");
  const std::size_t n = grid.num_keypoints;
  LossTerm out;
  out.gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.cells.size() * n));
  for (std::size_t c = 0; c < gt.cells.size(); ++c) {
    const auto& g = gt.cells[c];
    if (g.class_label == 0) continue;
    const double w = detail::class_weight(weights, g.class_label);
    const CellIndex idx = cell_index(c, grid.spec);
    for (std::size_t k = 0; k < n; ++k) {
      const auto& kp = grid.cells[c].keypoints[k];
      const double target = confidence_target(residual(kp, idx, g.keypoints[k], grid.spec), tau);
      const double diff = kp.confidence - target;
      out.value += w * std::abs(diff);
      out.gradient[static_cast<Eigen::Index>(c * n + k)] = w * detail::l1_sign(diff);
    }
  }
  return out;
}

/// Segmentation term for a whole grid. Uses the cells' class scores when every
/// cell carries K+1 of them; otherwise falls back to one-hot probabilities of
/// the predicted labels (mismatches clamp to 1e-12 and set `degenerate`).
inline LossTerm loss_seg(const PredictionGrid& grid, const GroundTruthGrid& gt,
                         const LossConfig& config) {
  detail::check_shared_spec(grid, gt);
  int max_label = 0;
  for (const auto& c : gt.cells) max_label = std::max(max_label, c.class_label);
  for (const auto& c : grid.cells) max_label = std::max(max_label, c.class_label);
  Eigen::Index classes = config.class_weights.empty()
                             ? max_label + 1
                             : static_cast<Eigen::Index>(config.class_weights.size());
  const bool have_scores = std::all_of(grid.cells.begin(), grid.cells.end(), [&](const auto& c) {
    return !c.class_scores.empty();
  });
  if (have_scores) classes = static_cast<Eigen::Index>(grid.cells.front().class_scores.size());
  const auto rows = static_cast<Eigen::Index>(grid.cells.size());
  std::vector<int> labels;
  labels.reserve(grid.cells.size());
  for (const auto& c : gt.cells) labels.push_back(c.class_label);
  if (have_scores) {
    Eigen::MatrixXd scores(rows, classes);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto& s = grid.cells[static_cast<std::size_t>(r)].class_scores;
      if (static_cast<Eigen::Index>(s.size()) != classes)
        throw Error(ErrorKind::SpecMismatch, "inconsistent class score length");
      for (Eigen::Index j = 0; j < classes; ++j) scores(r, j) = s[static_cast<std::size_t>(j)];
    }
    return focal_loss_logits(scores, labels, config.class_weights, config.focal_gamma);
  }
  Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(rows, classes);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const int l = grid.cells[static_cast<std::size_t>(r)].class_label;
    if (l < 0 || l >= classes) throw Error(ErrorKind::OutOfRange, "predicted label out of range");
    probs(r, l) = 1.0;
  }
  LossTerm t = focal_loss_unchecked(probs, labels, config.class_weights, config.focal_gamma);
  t.gradient.resize(0);  // no differentiable inputs
  return t;
}

/// Full objective: seg + beta * pos + gamma_reg * conf.
inline LossReport loss_total(const PredictionGrid& grid, const GroundTruthGrid& gt,
                             const LossConfig& config) {
  config.validate();
  const LossTerm seg = loss_seg(grid, gt, config);
  const LossTerm pos = loss_pos(grid, gt, config.class_weights);
  const LossTerm conf = loss_conf(grid, gt, config.tau, config.class_weights);
  LossReport r;
  r.seg = seg.value;
  r.pos = pos.value;
  r.conf = conf.value;
  r.reg = config.beta * r.pos + config.gamma_reg * r.conf;
  r.total = r.seg + r.reg;
  r.grad_offsets = config.beta * pos.gradient;
  r.grad_confidences = config.gamma_reg * conf.gradient;
  r.grad_class_scores = seg.gradient;
  r.degenerate = seg.degenerate;
  return r;
}

// ---------------------------------------------------------------------------
// Parameter packing for gradient checks

inline Eigen::VectorXd pack_offsets(const PredictionGrid& grid) {
  const std::size_t n = grid.num_keypoints;
  Eigen::VectorXd v(static_cast<Eigen::Index>(grid.cells.size() * n * 2));
  for (std::size_t c = 0; c < grid.cells.size(); ++c)
    for (std::size_t k = 0; k < n; ++k) {
      const auto base = static_cast<Eigen::Index>((c * n + k) * 2);
      v[base] = grid.cells[c].keypoints[k].offset.x();
      v[base + 1] = grid.cells[c].keypoints[k].offset.y();
    }
  return v;
}

inline void unpack_offsets(const Eigen::VectorXd& v, PredictionGrid& grid) {
  const std::size_t n = grid.num_keypoints;
  for (std::size_t c = 0; c < grid.cells.size(); ++c)
    for (std::size_t k = 0; k < n; ++k) {
      const auto base = static_cast<Eigen::Index>((c * n + k) * 2);
      grid.cells[c].keypoints[k].offset = Vec2(v[base], v[base + 1]);
    }
}

inline Eigen::VectorXd pack_confidences(const PredictionGrid& grid) {
  const std::size_t n = grid.num_keypoints;
  Eigen::VectorXd v(static_cast<Eigen::Index>(grid.cells.size() * n));
  for (std::size_t c = 0; c < grid.cells.size(); ++c)
    for (std::size_t k = 0; k < n; ++k)
      v[static_cast<Eigen::Index>(c * n + k)] = grid.cells[c].keypoints[k].confidence;
  return v;
}

// No range check: finite-difference probes may step just outside [0, 1].
inline void unpack_confidences(const Eigen::VectorXd& v, PredictionGrid& grid) {
  const std::size_t n = grid.num_keypoints;
  for (std::size_t c = 0; c < grid.cells.size(); ++c)
    for (std::size_t k = 0; k < n; ++k)
      grid.cells[c].keypoints[k].confidence = v[static_cast<Eigen::Index>(c * n + k)];
}

// ---------------------------------------------------------------------------
// Finite-difference verification

/// Scalar function with optional analytic gradient output.
using DifferentiableFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

struct GradCheckOptions {
  double step = 1e-6;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so exact zeros compare cleanly.
  double scale_floor = 1e-8;
  // Multiple of machine epsilon * |loss| treated as finite-difference noise; 0 disables.
  double roundoff_ulps = 4.0;
  // Coordinates for which this returns true are not probed (e.g. near an L1 kink).
  std::function<bool(Eigen::Index)> exclude;
};

struct GradCheckReport {
  double loss = 0.0;
  double max_rel_err = 0.0;
  Eigen::Index worst_coordinate = -1;
  Eigen::Index checked = 0;
  bool passed = true;
};

/// Compares the analytic gradient with central differences on every coordinate.
inline GradCheckReport grad_check(const DifferentiableFn& f, const Eigen::VectorXd& params,
                                  const GradCheckOptions& options = {}) {
  if (!(options.step > 0.0)) throw Error(ErrorKind::InvalidArgument, "step must be positive");
  GradCheckReport report;
  Eigen::VectorXd analytic;
  report.loss = f(params, &analytic);
  if (!std::isfinite(report.loss)) throw Error(ErrorKind::NonFinite, "loss is not finite at the base point");
  if (analytic.size() != params.size())
    throw Error(ErrorKind::SpecMismatch, "gradient size does not match parameter count");
  Eigen::VectorXd probe = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    if (options.exclude && options.exclude(i)) continue;
    probe[i] = params[i] + options.step;
    const double up = f(probe, nullptr);
    probe[i] = params[i] - options.step;
    const double down = f(probe, nullptr);
    probe[i] = params[i];
    if (!std::isfinite(up) || !std::isfinite(down))
      throw Error(ErrorKind::NonFinite, "loss is not finite at a probe point");
    const double numeric = (up - down) / (2.0 * options.step);
    // Rounding in the two loss evaluations bounds how small a difference is resolvable.
    const double noise = options.roundoff_ulps * std::numeric_limits<double>::epsilon() *
                         (std::abs(up) + std::abs(down)) / (2.0 * options.step);
    const double denom = std::max(
        {std::abs(analytic[i]), std::abs(numeric), options.scale_floor, noise / options.tolerance});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    ++report.checked;
    if (report.worst_coordinate < 0 || rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_coordinate = i;
    }
  }
  report.passed = report.max_rel_err < options.tolerance;
  return report;
}

}  // namespace segpose
