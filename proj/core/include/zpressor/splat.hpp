#pragma once

#include <vector>

#include <Eigen/Core>

#include "zpressor/autograd.hpp"
#include "zpressor/geometry.hpp"
#include "zpressor/tensor.hpp"

// Forward/backward software splatting over packed primitives. Each primitive
// row holds 14 values:
//   [0..2] mean, [3..5] scale, [6..9] quaternion (w, x, y, z),
//   [10] opacity, [11..13] color.
// Pixel (x, y) is sampled at integer coordinates; images are [H * W, 3].
namespace zp::splat {

inline constexpr std::size_t kStride = 14;
inline constexpr double kNearPlane = 1e-2;
inline constexpr double kCovarianceFloor = 1e-8;

struct Target {
  CameraPose pose;
  int height = 0;
  int width = 0;
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
};

// Screen-space footprint of one primitive.
struct Footprint {
  double u = 0, v = 0;
  double conic_a = 0, conic_b = 0, conic_c = 0;  // inverse 2-D covariance
  double depth = 0;
  double opacity = 0;
  double color[3] = {0, 0, 0};
  std::size_t index = 0;
};

// Projected, culled, depth-sorted footprints (ties by primitive index).
std::vector<Footprint> prepare(const Tensor64& prims, const CameraPose& pose);

Tensor64 render(const Tensor64& prims, const Target& target);
// d(loss)/d(prims) given d(loss)/d(image).
Tensor64 render_backward(const Tensor64& prims, const Target& target,
                         const Tensor64& grad_image);

// Transmittance before each composited primitive at one pixel, front to back.
std::vector<double> transmittance_trace(const Tensor64& prims, const Target& target,
                                        int x, int y);

template <class T>
ad::Var<T> render(ad::Var<T> prims, const Target& target);

}  // namespace zp::splat
