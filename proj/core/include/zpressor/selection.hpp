#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "zpressor/geometry.hpp"

namespace zp {

enum class Strategy { kFps, kOverlap, kKMeansPose, kKMeansFeature };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& name);

// Split of k views into ordered anchors and, per anchor, the support views
// fused into it. clusters[i] belongs to anchors[i].
struct AnchorPartition {
  int k = 0;
  std::vector<int> anchors;
  std::vector<std::vector<int>> clusters;
  Strategy strategy = Strategy::kFps;

  std::size_t n() const noexcept { return anchors.size(); }
  // Throws InvalidInput unless anchors and supports tile {0..k-1} disjointly.
  void validate() const;
};

nlohmann::json to_json(const AnchorPartition& p);

// First FPS anchor: an explicit view index, or a seed for a uniform draw.
struct FpsStart {
  std::optional<int> index;
  std::uint64_t seed = 0;

  static FpsStart fixed(int i) { return {i, 0}; }
  static FpsStart seeded(std::uint64_t s) { return {std::nullopt, s}; }
};

// Greedy max-min selection over camera-center distances. Ties go to the
// lowest index. Returned in selection order.
std::vector<int> select_anchors_fps(const DistanceMatrix& distances, int n,
                                    FpsStart first);

// Greedy lowest-average-overlap selection, seeded by the view with the lowest
// mean overlap to all others.
std::vector<int> select_anchors_overlap(const OverlapMatrix& overlaps, int n);

inline constexpr int kDefaultKMeansIterations = 50;

// K-means on camera centers; each cluster's anchor is its member nearest the
// centroid.
AnchorPartition select_anchors_kmeans(std::span<const Eigen::Vector3d> positions,
                                      int n, std::uint64_t seed,
                                      int max_iter = kDefaultKMeansIterations);

// Same contract as select_anchors_kmeans in embedding space.
AnchorPartition select_anchors_feature(std::span<const std::vector<float>> embeddings,
                                       int n, std::uint64_t seed,
                                       int max_iter = kDefaultKMeansIterations);

// Assigns every non-anchor view to its nearest anchor (ties to the earlier
// anchor in the list).
AnchorPartition assign_supports(const DistanceMatrix& distances,
                                std::span<const int> anchors,
                                Strategy strategy = Strategy::kFps);

// Result of a plain Lloyd run, exposed for tests.
struct KMeansResult {
  std::vector<int> assignment;
  std::vector<std::vector<double>> centroids;
  int iterations = 0;
  bool converged = false;
};

KMeansResult kmeans(std::span<const std::vector<double>> points, int n,
                    std::uint64_t seed, int max_iter);

}  // namespace zp
