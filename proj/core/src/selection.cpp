#include "zpressor/selection.hpp"

#include <algorithm>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "zpressor/error.hpp"

namespace zp {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kFps: return "fps";
    case Strategy::kOverlap: return "overlap";
    case Strategy::kKMeansPose: return "kmeans_pose";
    case Strategy::kKMeansFeature: return "kmeans_feature";
  }
  return "fps";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "fps") return Strategy::kFps;
  if (name == "overlap") return Strategy::kOverlap;
  if (name == "kmeans_pose") return Strategy::kKMeansPose;
  if (name == "kmeans_feature") return Strategy::kKMeansFeature;
  throw ConfigError("unknown selection strategy '" + name + "'");
}

void AnchorPartition::validate() const {
  if (k < 1) throw InvalidInput("partition: k must be >= 1");
  if (anchors.empty() || static_cast<int>(anchors.size()) > k) {
    throw InvalidInput("partition: need 1 <= N <= k anchors");
  }
  if (clusters.size() != anchors.size()) {
    throw InvalidInput("partition: one cluster per anchor required");
  }
  std::vector<int> seen(static_cast<std::size_t>(k), 0);
  auto mark = [&](int v) {
    if (v < 0 || v >= k) throw InvalidInput("partition: index out of range");
    if (seen[static_cast<std::size_t>(v)]++) {
      throw InvalidInput("partition: view " + std::to_string(v) + " used twice");
    }
  };
  for (int a : anchors) mark(a);
  for (const auto& c : clusters) {
    for (int s : c) mark(s);
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw InvalidInput("partition: some view is neither anchor nor support");
  }
}

nlohmann::json to_json(const AnchorPartition& p) {
  return {{"anchors", p.anchors}, {"clusters", p.clusters}, {"strategy", to_string(p.strategy)}};
}

namespace {

void check_count(int n, std::size_t k) {
  if (n < 1 || static_cast<std::size_t>(n) > k) {
    throw InvalidInput("anchor count " + std::to_string(n) + " outside [1, " +
                       std::to_string(k) + "]");
  }
}

}  // namespace

std::vector<int> select_anchors_fps(const DistanceMatrix& distances, int n,
                                    FpsStart first) {
  const std::size_t k = distances.size();
  check_count(n, k);
  int start;
  if (first.index) {
    start = *first.index;
    if (start < 0 || static_cast<std::size_t>(start) >= k) {
      throw InvalidInput("fps: first index out of range");
    }
  } else {
    std::mt19937_64 rng(first.seed);
    start = static_cast<int>(
        std::uniform_int_distribution<std::size_t>(0, k - 1)(rng));
  }
  std::vector<int> chosen{start};
  std::vector<bool> taken(k, false);
  taken[static_cast<std::size_t>(start)] = true;
  std::vector<double> min_dist(k);
  for (std::size_t j = 0; j < k; ++j) min_dist[j] = distances(j, static_cast<std::size_t>(start));
  while (static_cast<int>(chosen.size()) < n) {
    int best = -1;
    double best_d = -1;
    for (std::size_t j = 0; j < k; ++j) {
      if (!taken[j] && min_dist[j] > best_d) {
        best_d = min_dist[j];
        best = static_cast<int>(j);
      }
    }
    chosen.push_back(best);
    taken[static_cast<std::size_t>(best)] = true;
    for (std::size_t j = 0; j < k; ++j) {
      min_dist[j] = std::min(min_dist[j], distances(j, static_cast<std::size_t>(best)));
    }
  }
  return chosen;
}

std::vector<int> select_anchors_overlap(const OverlapMatrix& overlaps, int n) {
  const std::size_t k = overlaps.size();
  check_count(n, k);
  std::vector<bool> taken(k, false);
  std::vector<int> chosen;
  // Seed: lowest mean overlap to all other views.
  int first = 0;
  double first_score = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j != i) s += overlaps(i, j);
    }
    s = k > 1 ? s / static_cast<double>(k - 1) : 0.0;
    if (s < first_score) {
      first_score = s;
      first = static_cast<int>(i);
    }
  }
  chosen.push_back(first);
  taken[static_cast<std::size_t>(first)] = true;
  while (static_cast<int>(chosen.size()) < n) {
    int best = -1;
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) {
      if (taken[i]) continue;
      double s = 0;
      for (int c : chosen) s += overlaps(i, static_cast<std::size_t>(c));
      s /= static_cast<double>(chosen.size());
      if (s < best_score) {
        best_score = s;
        best = static_cast<int>(i);
      }
    }
    chosen.push_back(best);
    taken[static_cast<std::size_t>(best)] = true;
  }
  return chosen;
}

AnchorPartition assign_supports(const DistanceMatrix& distances,
                                std::span<const int> anchors, Strategy strategy) {
  const std::size_t k = distances.size();
  if (anchors.empty()) throw InvalidInput("assign_supports: no anchors");
  std::vector<int> role(k, -1);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const int a = anchors[i];
    if (a < 0 || static_cast<std::size_t>(a) >= k) {
      throw InvalidInput("assign_supports: anchor index out of range");
    }
    if (role[static_cast<std::size_t>(a)] != -1) {
      throw InvalidInput("assign_supports: duplicate anchor " + std::to_string(a));
    }
    role[static_cast<std::size_t>(a)] = static_cast<int>(i);
  }
  AnchorPartition p;
  p.k = static_cast<int>(k);
  p.anchors.assign(anchors.begin(), anchors.end());
  p.clusters.resize(anchors.size());
  p.strategy = strategy;
  for (std::size_t j = 0; j < k; ++j) {
    if (role[j] != -1) continue;
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      const double d = distances(j, static_cast<std::size_t>(anchors[i]));
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    p.clusters[best].push_back(static_cast<int>(j));
  }
  return p;
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

int nearest_centroid(const std::vector<double>& x,
                     const std::vector<std::vector<double>>& centroids) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = sq_dist(x, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

// Moves the point farthest from its centroid (taken from a cluster with >= 2
// members) into each empty cluster.
void repair_empty(std::span<const std::vector<double>> points, std::vector<int>& assign,
                  std::vector<std::vector<double>>& centroids) {
  const std::size_t n = centroids.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::vector<int> counts(n, 0);
    for (int a : assign) ++counts[static_cast<std::size_t>(a)];
    if (counts[c] > 0) continue;
    int far = -1;
    double far_d = -1;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto owner = static_cast<std::size_t>(assign[i]);
      if (counts[owner] < 2) continue;
      const double d = sq_dist(points[i], centroids[owner]);
      if (d > far_d) {
        far_d = d;
        far = static_cast<int>(i);
      }
    }
    if (far < 0) continue;
    assign[static_cast<std::size_t>(far)] = static_cast<int>(c);
    centroids[c] = points[static_cast<std::size_t>(far)];
  }
}

void update_centroids(std::span<const std::vector<double>> points,
                      const std::vector<int>& assign,
                      std::vector<std::vector<double>>& centroids) {
  const std::size_t dim = points[0].size();
  std::vector<std::vector<double>> sums(centroids.size(), std::vector<double>(dim, 0.0));
  std::vector<int> counts(centroids.size(), 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto c = static_cast<std::size_t>(assign[i]);
    ++counts[c];
    for (std::size_t d = 0; d < dim; ++d) sums[c][d] += points[i][d];
  }
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t d = 0; d < dim; ++d) centroids[c][d] = sums[c][d] / counts[c];
  }
}

}  // namespace

KMeansResult kmeans(std::span<const std::vector<double>> points, int n,
                    std::uint64_t seed, int max_iter) {
  const std::size_t k = points.size();
  check_count(n, k);
  if (max_iter < 1) throw InvalidInput("kmeans: max_iter must be >= 1");
  for (const auto& p : points) {
    if (p.size() != points[0].size() || p.empty()) {
      throw InvalidInput("kmeans: points must share a positive dimension");
    }
  }
  std::mt19937_64 rng(seed);
  // k-means++ seeding.
  std::vector<int> seeds;
  seeds.push_back(static_cast<int>(std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)));
  std::vector<double> d2(k);
  while (static_cast<int>(seeds.size()) < n) {
    double total = 0;
    for (std::size_t i = 0; i < k; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int s : seeds) best = std::min(best, sq_dist(points[i], points[static_cast<std::size_t>(s)]));
      d2[i] = best;
      total += best;
    }
    int pick = -1;
    if (total > 0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (std::size_t i = 0; i < k; ++i) {
        if (d2[i] <= 0) continue;
        pick = static_cast<int>(i);
        if (r < d2[i]) break;
        r -= d2[i];
      }
    } else {
      for (std::size_t i = 0; i < k; ++i) {
        if (std::find(seeds.begin(), seeds.end(), static_cast<int>(i)) == seeds.end()) {
          pick = static_cast<int>(i);
          break;
        }
      }
    }
    seeds.push_back(pick);
  }

  KMeansResult res;
  for (int s : seeds) res.centroids.push_back(points[static_cast<std::size_t>(s)]);
  res.assignment.assign(k, -1);
  for (int it = 0; it < max_iter; ++it) {
    std::vector<int> next(k);
    for (std::size_t i = 0; i < k; ++i) next[i] = nearest_centroid(points[i], res.centroids);
    repair_empty(points, next, res.centroids);
    res.iterations = it + 1;
    if (next == res.assignment) {
      res.converged = true;
      break;
    }
    res.assignment = std::move(next);
    update_centroids(points, res.assignment, res.centroids);
  }
  repair_empty(points, res.assignment, res.centroids);
  return res;
}

namespace {

AnchorPartition partition_from_kmeans(std::span<const std::vector<double>> points,
                                      const KMeansResult& km, Strategy strategy) {
  AnchorPartition p;
  p.k = static_cast<int>(points.size());
  p.strategy = strategy;
  const std::size_t n = km.centroids.size();
  p.anchors.assign(n, -1);
  p.clusters.assign(n, {});
  for (std::size_t c = 0; c < n; ++c) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (km.assignment[i] != static_cast<int>(c)) continue;
      const double d = sq_dist(points[i], km.centroids[c]);
      if (d < best) {
        best = d;
        p.anchors[c] = static_cast<int>(i);
      }
    }
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto c = static_cast<std::size_t>(km.assignment[i]);
    if (p.anchors[c] != static_cast<int>(i)) p.clusters[c].push_back(static_cast<int>(i));
  }
  p.validate();
  return p;
}

}  // namespace

AnchorPartition select_anchors_kmeans(std::span<const Eigen::Vector3d> positions,
                                      int n, std::uint64_t seed, int max_iter) {
  std::vector<std::vector<double>> pts;
  for (const auto& p : positions) pts.push_back({p.x(), p.y(), p.z()});
  check_count(n, pts.size());
  const auto km = kmeans(pts, n, seed, max_iter);
  return partition_from_kmeans(pts, km, Strategy::kKMeansPose);
}

AnchorPartition select_anchors_feature(std::span<const std::vector<float>> embeddings,
                                       int n, std::uint64_t seed, int max_iter) {
  std::vector<std::vector<double>> pts;
  for (const auto& e : embeddings) pts.emplace_back(e.begin(), e.end());
  check_count(n, pts.size());
  const auto km = kmeans(pts, n, seed, max_iter);
  return partition_from_kmeans(pts, km, Strategy::kKMeansFeature);
}

}  // namespace zp
