#include "zpressor/splat.hpp"

#include <algorithm>
#include <cmath>

#include "dual.hpp"
#include "zpressor/error.hpp"

namespace zp::splat {
namespace {

using detail::Dual;
using detail::value_of;

constexpr int kGeomInputs = 10;  // mean, scale, quaternion
using GeomDual = Dual<kGeomInputs>;

template <class S>
struct Screen {
  S u, v, a, b, c;
  double depth = 0;
  bool visible = false;
};

// Mean, covariance and conic of one primitive in `pose`'s image plane.
template <class S>
Screen<S> project(const S* g, const CameraPose& pose) {
  using std::sqrt;
  Screen<S> out{};
  const Eigen::Matrix3d& r = pose.rotation;
  S d[3] = {g[0] - pose.center.x(), g[1] - pose.center.y(), g[2] - pose.center.z()};
  S pc[3];
  for (int i = 0; i < 3; ++i) pc[i] = r(i, 0) * d[0] + r(i, 1) * d[1] + r(i, 2) * d[2];
  out.depth = value_of(pc[2]);
  if (!(out.depth > kNearPlane)) return out;

  const S inv_z = 1.0 / pc[2];
  out.u = pose.fx * pc[0] * inv_z + pose.cx;
  out.v = pose.fy * pc[1] * inv_z + pose.cy;

  // Rotation from the normalized quaternion.
  S qn = sqrt(g[6] * g[6] + g[7] * g[7] + g[8] * g[8] + g[9] * g[9]);
  if (value_of(qn) < 1e-12) return out;
  const S w = g[6] / qn, x = g[7] / qn, y = g[8] / qn, z = g[9] / qn;
  S rq[3][3] = {
      {1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)},
      {2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)},
      {2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)}};
  // M = R_cam * R_q * diag(scale); camera-space covariance = M M^T.
  S m[3][3];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      S acc = r(i, 0) * rq[0][j] + r(i, 1) * rq[1][j] + r(i, 2) * rq[2][j];
      m[i][j] = acc * g[3 + j];
    }
  }
  // Local affine Jacobian of the perspective projection.
  const S j00 = pose.fx * inv_z;
  const S j02 = -pose.fx * pc[0] * inv_z * inv_z;
  const S j11 = pose.fy * inv_z;
  const S j12 = -pose.fy * pc[1] * inv_z * inv_z;
  S t0[3], t1[3];  // rows of J * M
  for (int j = 0; j < 3; ++j) {
    t0[j] = j00 * m[0][j] + j02 * m[2][j];
    t1[j] = j11 * m[1][j] + j12 * m[2][j];
  }
  S cxx = t0[0] * t0[0] + t0[1] * t0[1] + t0[2] * t0[2];
  S cxy = t0[0] * t1[0] + t0[1] * t1[1] + t0[2] * t1[2];
  S cyy = t1[0] * t1[0] + t1[1] * t1[1] + t1[2] * t1[2];
  if (value_of(cxx) < kCovarianceFloor) cxx = S(kCovarianceFloor);
  if (value_of(cyy) < kCovarianceFloor) cyy = S(kCovarianceFloor);
  const S det = cxx * cyy - cxy * cxy;
  if (!(value_of(det) > 0)) return out;
  out.a = cyy / det;
  out.b = -cxy / det;
  out.c = cxx / det;
  out.visible = true;
  return out;
}

Footprint to_footprint(const Screen<double>& s, const double* g, std::size_t index) {
  Footprint f;
  f.u = s.u;
  f.v = s.v;
  f.conic_a = s.a;
  f.conic_b = s.b;
  f.conic_c = s.c;
  f.depth = s.depth;
  f.opacity = g[10];
  for (int k = 0; k < 3; ++k) f.color[k] = g[11 + k];
  f.index = index;
  return f;
}

void check_prims(const Tensor64& prims) {
  if (prims.rank() != 2 || prims.cols() != kStride) {
    throw ShapeError("splat: primitives must be [P, 14], got " + shape_str(prims.shape()));
  }
}

void check_target(const Target& t) {
  if (t.height < 1 || t.width < 1) throw InvalidInput("splat: image size must be >= 1");
}

inline double gaussian_power(const Footprint& f, double dx, double dy) {
  return std::min(0.0, -0.5 * (f.conic_a * dx * dx + f.conic_c * dy * dy) -
                           f.conic_b * dx * dy);
}

}  // namespace

std::vector<Footprint> prepare(const Tensor64& prims, const CameraPose& pose) {
  check_prims(prims);
  std::vector<Footprint> out;
  out.reserve(prims.rows());
  for (std::size_t i = 0; i < prims.rows(); ++i) {
    const double* g = prims.data() + i * kStride;
    const Screen<double> s = project<double>(g, pose);
    if (s.visible) out.push_back(to_footprint(s, g, i));
  }
  std::stable_sort(out.begin(), out.end(), [](const Footprint& a, const Footprint& b) {
    return a.depth < b.depth;
  });
  return out;
}

Tensor64 render(const Tensor64& prims, const Target& target) {
  check_target(target);
  const auto fps = prepare(prims, target.pose);
  Tensor64 image({static_cast<std::size_t>(target.height) * target.width, 3});
  for (int y = 0; y < target.height; ++y) {
    for (int x = 0; x < target.width; ++x) {
      double trans = 1.0;
      double c[3] = {0, 0, 0};
      for (const auto& f : fps) {
        const double alpha = f.opacity * std::exp(gaussian_power(f, x - f.u, y - f.v));
        for (int k = 0; k < 3; ++k) c[k] += trans * alpha * f.color[k];
        trans *= 1.0 - alpha;
      }
      double* px = image.data() + (static_cast<std::size_t>(y) * target.width + x) * 3;
      for (int k = 0; k < 3; ++k) {
        px[k] = std::clamp(c[k] + trans * target.background[k], 0.0, 1.0);
      }
    }
  }
  return image;
}

std::vector<double> transmittance_trace(const Tensor64& prims, const Target& target,
                                        int x, int y) {
  const auto fps = prepare(prims, target.pose);
  std::vector<double> trace;
  double trans = 1.0;
  for (const auto& f : fps) {
    trace.push_back(trans);
    trans *= 1.0 - f.opacity * std::exp(gaussian_power(f, x - f.u, y - f.v));
  }
  trace.push_back(trans);
  return trace;
}

Tensor64 render_backward(const Tensor64& prims, const Target& target,
                         const Tensor64& grad_image) {
  check_target(target);
  check_prims(prims);
  const std::size_t npix = static_cast<std::size_t>(target.height) * target.width;
  if (grad_image.numel() != npix * 3) {
    throw ShapeError("splat: image gradient " + shape_str(grad_image.shape()) +
                     " does not match target size");
  }
  const auto fps = prepare(prims, target.pose);
  const std::size_t m = fps.size();
  // Per-footprint gradients: u, v, conic a, b, c, opacity, color[3].
  std::vector<std::array<double, 9>> gs(m, std::array<double, 9>{});
  std::vector<double> alpha(m), trans(m), gpow(m);
  for (int y = 0; y < target.height; ++y) {
    for (int x = 0; x < target.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * target.width + x;
      double dl[3];
      bool any = false;
      for (int k = 0; k < 3; ++k) {
        dl[k] = grad_image[p * 3 + k];
        any = any || dl[k] != 0.0;
      }
      if (!any) continue;
      double t = 1.0;
      double c[3] = {0, 0, 0};
      for (std::size_t i = 0; i < m; ++i) {
        const auto& f = fps[i];
        gpow[i] = std::exp(gaussian_power(f, x - f.u, y - f.v));
        alpha[i] = f.opacity * gpow[i];
        trans[i] = t;
        for (int k = 0; k < 3; ++k) c[k] += t * alpha[i] * f.color[k];
        t *= 1.0 - alpha[i];
      }
      // The output clamp passes no gradient where it saturates.
      for (int k = 0; k < 3; ++k) {
        const double raw = c[k] + t * target.background[k];
        if (raw < 0.0 || raw > 1.0) dl[k] = 0.0;
      }
      double behind[3] = {target.background[0], target.background[1],
                          target.background[2]};
      for (std::size_t i = m; i-- > 0;) {
        const auto& f = fps[i];
        double dalpha = 0;
        for (int k = 0; k < 3; ++k) {
          gs[i][6 + k] += dl[k] * trans[i] * alpha[i];
          dalpha += dl[k] * trans[i] * (f.color[k] - behind[k]);
          behind[k] = alpha[i] * f.color[k] + (1.0 - alpha[i]) * behind[k];
        }
        gs[i][5] += dalpha * gpow[i];
        const double dpower = dalpha * f.opacity * gpow[i];
        const double power_raw = -0.5 * (f.conic_a * (x - f.u) * (x - f.u) +
                                         f.conic_c * (y - f.v) * (y - f.v)) -
                                 f.conic_b * (x - f.u) * (y - f.v);
        if (power_raw > 0) continue;
        const double dx = x - f.u, dy = y - f.v;
        gs[i][0] += dpower * (f.conic_a * dx + f.conic_b * dy);
        gs[i][1] += dpower * (f.conic_b * dx + f.conic_c * dy);
        gs[i][2] += dpower * (-0.5 * dx * dx);
        gs[i][3] += dpower * (-dx * dy);
        gs[i][4] += dpower * (-0.5 * dy * dy);
      }
    }
  }

  Tensor64 grad(prims.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t idx = fps[i].index;
    const double* g = prims.data() + idx * kStride;
    double* out = grad.data() + idx * kStride;
    GeomDual in[kGeomInputs];
    for (int j = 0; j < kGeomInputs; ++j) in[j] = GeomDual::variable(g[j], j);
    const Screen<GeomDual> s = project<GeomDual>(in, target.pose);
    const GeomDual* screen[5] = {&s.u, &s.v, &s.a, &s.b, &s.c};
    for (int k = 0; k < 5; ++k) {
      for (int j = 0; j < kGeomInputs; ++j) out[j] += gs[i][k] * screen[k]->d[j];
    }
    out[10] += gs[i][5];
    for (int k = 0; k < 3; ++k) out[11 + k] += gs[i][6 + k];
  }
  return grad;
}

template <class T>
ad::Var<T> render(ad::Var<T> prims, const Target& target) {
  Tensor64 p = prims.value().template cast<double>();
  BasicTensor<T> image = render(p, target).template cast<T>();
  return prims.tape().record(std::move(image), {prims},
                             [prims, target](const BasicTensor<T>& gy) {
    const Tensor64 p = prims.value().template cast<double>();
    const Tensor64 g = render_backward(p, target, gy.template cast<double>());
    prims.tape().accumulate(prims, g.template cast<T>());
  });
}

template ad::Var<float> render(ad::Var<float>, const Target&);
template ad::Var<double> render(ad::Var<double>, const Target&);

}  // namespace zp::splat
