#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

namespace zp {

// Pinhole camera. `rotation` maps world to camera coordinates
// (x right, y down, z forward); `center` is the camera position in world
// units. Pixel (u, v) = (fx * x / z + cx, fy * y / z + cy).
struct CameraPose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 1, height = 1;

  // Throws InvalidInput when an invariant is violated.
  void validate() const;
  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
    return rotation * (world - center);
  }
};

// Symmetric n x n matrix stored row-major.
template <class Tag>
class SquareMatrix {
 public:
  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t n) : n_(n), values_(n * n, 0.0) {}

  std::size_t size() const noexcept { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values_[i * n_ + j]; }
  std::span<const double> values() const { return values_; }

 private:
  std::size_t n_ = 0;
  std::vector<double> values_;
};

struct DistanceTag {};
struct OverlapTag {};
// Euclidean distances between camera centers.
using DistanceMatrix = SquareMatrix<DistanceTag>;
// Symmetric view-overlap scores in [0, 1], unit diagonal.
using OverlapMatrix = SquareMatrix<OverlapTag>;

DistanceMatrix pairwise_distances(std::span<const CameraPose> poses);
DistanceMatrix pairwise_distances(std::span<const Eigen::Vector3d> points);

struct Projection {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  double depth = 0;
  // False when the point is behind the camera or on its center plane.
  bool valid = false;
};

inline constexpr double kMinProjectDepth = 1e-9;

Projection project_point(const CameraPose& pose, const Eigen::Vector3d& point);
// Inverse of project_point at a given z-depth.
Eigen::Vector3d unproject(const CameraPose& pose, const Eigen::Vector2d& pixel,
                          double depth);
// World-space direction (not normalized, camera z = 1) of the ray through pixel.
Eigen::Vector3d pixel_ray(const CameraPose& pose, const Eigen::Vector2d& pixel);
bool in_image(const CameraPose& pose, const Eigen::Vector2d& pixel);

inline constexpr int kDefaultOverlapGrid = 16;
inline const std::vector<double> kDefaultOverlapDepths = {0.5, 1.0, 2.0, 4.0};

// Fraction of a grid x grid ray lattice from `from` for which some sampled
// depth lands in front of `to` and inside its image.
double directed_overlap(const CameraPose& from, const CameraPose& to, int grid,
                        std::span<const double> depths);
// min(directed_overlap(a, b), directed_overlap(b, a)).
double view_overlap(const CameraPose& a, const CameraPose& b,
                    int grid = kDefaultOverlapGrid,
                    std::span<const double> depths = kDefaultOverlapDepths);
OverlapMatrix overlap_matrix(std::span<const CameraPose> poses,
                             int grid = kDefaultOverlapGrid,
                             std::span<const double> depths = kDefaultOverlapDepths);

// Builds an orthonormal world-to-camera rotation looking from `eye` toward
// `target`, with world -y as up.
Eigen::Matrix3d look_at_rotation(const Eigen::Vector3d& eye,
                                 const Eigen::Vector3d& target);

// Pose file: JSON array of {rotation: [9, row-major], center: [3], fx, fy,
// cx, cy, width, height}.
std::vector<CameraPose> poses_from_json(const nlohmann::json& j);
nlohmann::json poses_to_json(std::span<const CameraPose> poses);
// Parses pose file text; diagnostics name the line or the offending field.
std::vector<CameraPose> parse_poses(const std::string& text);
std::vector<CameraPose> load_poses(const std::filesystem::path& path);

}  // namespace zp
