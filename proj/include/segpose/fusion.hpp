#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "segpose/grid.hpp"

namespace segpose {

struct Candidate {
  Vec2 point = Vec2::Zero();  // decoded prediction, pixels
  double confidence = 0.0;
  std::size_t cell = 0;       // row-major cell index

  bool operator==(const Candidate&) const = default;
};

/// Foreground cells attributed to one object instance.
struct Cluster {
  int class_label = 0;
  std::vector<std::size_t> cells;       // ascending row-major indices
  std::vector<Vec2> cell_positions;     // centroid of each cell's decoded keypoints
  std::vector<std::vector<Candidate>> candidates;  // [keypoint][member], member order = cells

  Vec2 centroid() const {
    Vec2 sum = Vec2::Zero();
    for (const auto& p : cell_positions) sum += p;
    return cell_positions.empty() ? sum : Vec2(sum / static_cast<double>(cell_positions.size()));
  }
};

struct Correspondence {
  std::size_t keypoint = 0;
  Vec3 object_point = Vec3::Zero();
  Vec2 image_point = Vec2::Zero();
  double confidence = 0.0;
  std::size_t cell = 0;

  bool operator==(const Correspondence&) const = default;
};

struct CorrespondenceSet {
  int class_label = 0;
  std::string strategy;
  Vec2 centroid = Vec2::Zero();  // cluster centroid, used for detection matching
  std::size_t cluster_cells = 0;
  std::vector<Correspondence> pairs;

  bool operator==(const CorrespondenceSet&) const = default;
};

enum class FusionStrategy { NoFusion, HighestConfidence, BestN, Oracle };

inline std::string_view to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::NoFusion: return "nf";
    case FusionStrategy::HighestConfidence: return "hc";
    case FusionStrategy::BestN: return "bn";
    case FusionStrategy::Oracle: return "oracle";
  }
  return "?";
}

inline FusionStrategy parse_strategy(std::string_view name) {
  if (name == "nf") return FusionStrategy::NoFusion;
  if (name == "hc") return FusionStrategy::HighestConfidence;
  if (name == "bn") return FusionStrategy::BestN;
  if (name == "oracle") return FusionStrategy::Oracle;
  throw Error(ErrorKind::ConfigError, "unknown fusion strategy '" + std::string(name) + "'");
}

inline constexpr double kReferenceImageWidth = 608.0;
inline constexpr double kReferenceClusterThresholdPx = 30.0;
inline constexpr std::size_t kDefaultMinClusterCells = 2;
inline constexpr std::size_t kDefaultBestN = 10;

/// 30 px at a 608 px wide image, scaled linearly with width.
inline double default_cluster_threshold(int image_width) {
  return kReferenceClusterThresholdPx * image_width / kReferenceImageWidth;
}

namespace detail {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n), rank_(n, 0) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<int> rank_;
};

}  // namespace detail

inline Vec2 cell_keypoint_centroid(const PredictionGrid& grid, std::size_t cell) {
  const CellIndex idx = cell_index(cell, grid.spec);
  Vec2 sum = Vec2::Zero();
  for (const auto& kp : grid.cells[cell].keypoints) sum += decode_prediction(idx, kp, grid.spec);
  return sum / static_cast<double>(grid.num_keypoints);
}

/// Single-linkage clustering of foreground cells, per class.
///
/// A cell is represented by the centroid of its decoded keypoints; two cells
/// of the same class are linked when those centroids lie within
/// `threshold_px`. Clusters smaller than `min_cells` are dropped. Output is
/// ordered by (class, lowest member index).
inline std::vector<Cluster> cluster_cells(const PredictionGrid& grid, double threshold_px,
                                          std::size_t min_cells = kDefaultMinClusterCells) {
  if (!(threshold_px > 0.0)) throw Error(ErrorKind::InvalidArgument, "threshold must be positive");
  std::vector<std::size_t> fg;
  std::vector<Vec2> pos;
  for (std::size_t c = 0; c < grid.cells.size(); ++c) {
    if (grid.cells[c].class_label == 0) continue;
    fg.push_back(c);
    pos.push_back(cell_keypoint_centroid(grid, c));
  }
  const double t2 = threshold_px * threshold_px;
  detail::DisjointSets sets(fg.size());
  for (std::size_t a = 0; a < fg.size(); ++a) {
    const int la = grid.cells[fg[a]].class_label;
    for (std::size_t b = a + 1; b < fg.size(); ++b)
      if (grid.cells[fg[b]].class_label == la && (pos[a] - pos[b]).squaredNorm() <= t2)
        sets.unite(a, b);
  }
  // Roots in order of first appearance keep output in ascending lowest-member order.
  std::vector<std::size_t> root_slot(fg.size(), static_cast<std::size_t>(-1));
  std::vector<Cluster> clusters;
  for (std::size_t a = 0; a < fg.size(); ++a) {
    const std::size_t r = sets.find(a);
    if (root_slot[r] == static_cast<std::size_t>(-1)) {
      root_slot[r] = clusters.size();
      Cluster cl;
      cl.class_label = grid.cells[fg[a]].class_label;
      cl.candidates.resize(grid.num_keypoints);
      clusters.push_back(std::move(cl));
    }
    Cluster& cl = clusters[root_slot[r]];
    cl.cells.push_back(fg[a]);
    cl.cell_positions.push_back(pos[a]);
    const CellIndex idx = cell_index(fg[a], grid.spec);
    for (std::size_t k = 0; k < grid.num_keypoints; ++k) {
      const auto& kp = grid.cells[fg[a]].keypoints[k];
      cl.candidates[k].push_back({decode_prediction(idx, kp, grid.spec), kp.confidence, fg[a]});
    }
  }
  std::erase_if(clusters, [&](const Cluster& c) { return c.cells.size() < min_cells; });
  std::stable_sort(clusters.begin(), clusters.end(), [](const Cluster& a, const Cluster& b) {
    return a.class_label < b.class_label;
  });
  return clusters;
}

namespace detail {

inline void check_cluster(const Cluster& cluster, std::span<const Vec3> keypoints) {
  if (cluster.cells.empty()) throw Error(ErrorKind::EmptyCluster, "cluster has no cells");
  if (keypoints.size() != cluster.candidates.size())
    throw Error(ErrorKind::SpecMismatch, "model keypoint count differs from prediction count");
}

inline CorrespondenceSet start_set(const Cluster& cluster, FusionStrategy s) {
  CorrespondenceSet out;
  out.class_label = cluster.class_label;
  out.strategy = std::string(to_string(s));
  out.centroid = cluster.centroid();
  out.cluster_cells = cluster.cells.size();
  return out;
}

inline Correspondence make_pair(std::size_t k, std::span<const Vec3> keypoints, const Candidate& c) {
  return {k, keypoints[k], c.point, c.confidence, c.cell};
}

}  // namespace detail

/// No fusion: all N predictions of the member cell nearest the cluster centroid.
inline CorrespondenceSet select_no_fusion(const Cluster& cluster, std::span<const Vec3> keypoints) {
  detail::check_cluster(cluster, keypoints);
  const Vec2 center = cluster.centroid();
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < cluster.cells.size(); ++m) {
    const double d = (cluster.cell_positions[m] - center).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = m;
    }
  }
  auto out = detail::start_set(cluster, FusionStrategy::NoFusion);
  for (std::size_t k = 0; k < keypoints.size(); ++k)
    out.pairs.push_back(detail::make_pair(k, keypoints, cluster.candidates[k][best]));
  return out;
}

/// For each keypoint, the candidate with the highest confidence.
inline CorrespondenceSet select_highest_confidence(const Cluster& cluster,
                                                   std::span<const Vec3> keypoints) {
  detail::check_cluster(cluster, keypoints);
  auto out = detail::start_set(cluster, FusionStrategy::HighestConfidence);
  for (std::size_t k = 0; k < keypoints.size(); ++k) {
    const auto& cands = cluster.candidates[k];
    std::size_t best = 0;
    for (std::size_t m = 1; m < cands.size(); ++m)
      if (cands[m].confidence > cands[best].confidence) best = m;
    out.pairs.push_back(detail::make_pair(k, keypoints, cands[best]));
  }
  return out;
}

/// For each keypoint, up to n candidates in descending confidence order.
inline CorrespondenceSet select_best_n(const Cluster& cluster, std::span<const Vec3> keypoints,
                                       std::size_t n = kDefaultBestN) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "n must be >= 1");
  detail::check_cluster(cluster, keypoints);
  auto out = detail::start_set(cluster, FusionStrategy::BestN);
  std::vector<std::size_t> order;
  for (std::size_t k = 0; k < keypoints.size(); ++k) {
    const auto& cands = cluster.candidates[k];
    order.resize(cands.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return cands[a].confidence > cands[b].confidence;
    });
    const std::size_t take = std::min(n, cands.size());
    for (std::size_t j = 0; j < take; ++j)
      out.pairs.push_back(detail::make_pair(k, keypoints, cands[order[j]]));
  }
  return out;
}

/// For each keypoint, the candidate closest to the true projection.
inline CorrespondenceSet select_oracle(const Cluster& cluster, std::span<const Vec3> keypoints,
                                       std::span<const Vec2> gt_keypoints) {
  detail::check_cluster(cluster, keypoints);
  if (gt_keypoints.size() != keypoints.size())
    throw Error(ErrorKind::SpecMismatch, "ground-truth keypoint count mismatch");
  auto out = detail::start_set(cluster, FusionStrategy::Oracle);
  for (std::size_t k = 0; k < keypoints.size(); ++k) {
    const auto& cands = cluster.candidates[k];
    std::size_t best = 0;
    double best_d = (cands[0].point - gt_keypoints[k]).squaredNorm();
    for (std::size_t m = 1; m < cands.size(); ++m) {
      const double d = (cands[m].point - gt_keypoints[k]).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = m;
      }
    }
    out.pairs.push_back(detail::make_pair(k, keypoints, cands[best]));
  }
  return out;
}

/// Dispatches on strategy; the oracle needs `gt_keypoints`.
inline CorrespondenceSet select(FusionStrategy strategy, const Cluster& cluster,
                                std::span<const Vec3> keypoints, std::size_t n = kDefaultBestN,
                                std::span<const Vec2> gt_keypoints = {}) {
  switch (strategy) {
    case FusionStrategy::NoFusion: return select_no_fusion(cluster, keypoints);
    case FusionStrategy::HighestConfidence: return select_highest_confidence(cluster, keypoints);
    case FusionStrategy::BestN: return select_best_n(cluster, keypoints, n);
    case FusionStrategy::Oracle: return select_oracle(cluster, keypoints, gt_keypoints);
  }
  throw Error(ErrorKind::InvalidArgument, "bad strategy");
}

}  // namespace segpose
