#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "zpressor/geometry.hpp"
#include "zpressor/tensor.hpp"
#include "zpressor/zpressor.hpp"

namespace zp {

// One 3-D Gaussian: covariance = R diag(scale^2) R^T.
struct GaussianPrimitive {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d scale = Eigen::Vector3d::Constant(0.1);
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  double opacity = 1.0;
  Eigen::Vector3d color = Eigen::Vector3d::Constant(0.5);

  void validate() const;
};

struct Bounds {
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(-1);
  Eigen::Vector3d hi = Eigen::Vector3d::Constant(1);

  bool contains(const Eigen::Vector3d& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
};

struct SceneSpec {
  std::vector<GaussianPrimitive> blobs;
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  Bounds bounds;
};

// H x W x 3 image, values in [0, 1], row-major with interleaved channels.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0.f) {}

  float& at(int y, int x, int ch) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + ch];
  }
  float at(int y, int x, int ch) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + ch];
  }
  // [H * W, 3]
  Tensor tensor() const;
  static Image from_tensor(const Tensor& t, int height, int width);
};

struct SceneOptions {
  Bounds bounds;
  double min_scale = 0.12;
  double max_scale = 0.35;
  double min_opacity = 0.7;
  Eigen::Vector3d background = Eigen::Vector3d::Constant(0.1);
};

SceneSpec make_scene(int n_blobs, std::uint64_t seed, const SceneOptions& options = {});

enum class TrajectoryKind { kArc, kLine };

TrajectoryKind parse_trajectory_kind(const std::string& name);
std::string to_string(TrajectoryKind kind);

struct CameraRig {
  double radius = 3.5;     // distance from look_at (arc) or to the line
  double elevation = 0.8;  // camera height above look_at
  int image_size = 32;
  double fov_degrees = 60.0;
};

// k cameras spread over `baseline` (radians of arc, or world units of line),
// all aimed at look_at.
std::vector<CameraPose> make_trajectory(TrajectoryKind kind, int k, double baseline,
                                        const Eigen::Vector3d& look_at,
                                        const CameraRig& rig = {});
// Camera of `rig` at arc angle `theta` (radians, 0 = trajectory midpoint).
CameraPose arc_camera(double theta, const Eigen::Vector3d& look_at, const CameraRig& rig);
CameraPose line_camera(double offset, const Eigen::Vector3d& look_at, const CameraRig& rig);

// Packs to the [P, 14] layout consumed by the splatting kernels.
Tensor64 pack(std::span<const GaussianPrimitive> prims);
std::vector<GaussianPrimitive> unpack(const Tensor64& packed);

Image render(std::span<const GaussianPrimitive> prims, const CameraPose& pose, int height,
             int width, const Eigen::Vector3d& background = Eigen::Vector3d::Zero());

// Frozen random-projection patch encoder bound to one (patch, channels, seed).
class Encoder {
 public:
  Encoder(int patch, int channels, std::uint64_t seed);
  ViewFeature operator()(const Image& image) const;
  int patch() const noexcept { return patch_; }
  int channels() const noexcept { return channels_; }

 private:
  int patch_;
  int channels_;
  std::vector<float> projection_;  // [channels, patch * patch * 3]
};

// Frozen random-projection patch encoder: each non-overlapping patch x patch x 3
// block is mapped linearly (no bias) to `channels` features.
ViewFeature encode_view(const Image& image, int patch, int channels,
                        std::uint64_t encoder_seed);

inline constexpr double kPsnrCap = 99.0;

// 10 log10(1 / MSE), capped at 99 dB when MSE < 1e-10.
double psnr(const Image& a, const Image& b);

// Binary PPM (P6), 8-bit.
void write_ppm(const std::filesystem::path& path, const Image& image);

}  // namespace zp
