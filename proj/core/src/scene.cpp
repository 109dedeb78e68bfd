#include "zpressor/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "zpressor/error.hpp"
#include "zpressor/splat.hpp"

namespace zp {

void GaussianPrimitive::validate() const {
  if (!(scale.array() > 0).all()) throw InvalidInput("gaussian: scale must be positive");
  if (std::abs(rotation.norm() - 1.0) > 1e-6) {
    throw InvalidInput("gaussian: rotation quaternion must be unit length");
  }
  if (opacity < 0 || opacity > 1) throw InvalidInput("gaussian: opacity outside [0,1]");
  if (!(color.array() >= 0).all() || !(color.array() <= 1).all()) {
    throw InvalidInput("gaussian: color outside [0,1]");
  }
}

Tensor Image::tensor() const {
  return Tensor({static_cast<std::size_t>(height) * width, 3},
                std::span<const float>(pixels));
}

Image Image::from_tensor(const Tensor& t, int height, int width) {
  if (t.numel() != static_cast<std::size_t>(height) * width * 3) {
    throw ShapeError("image: tensor " + shape_str(t.shape()) + " is not " +
                     std::to_string(height) + "x" + std::to_string(width) + "x3");
  }
  Image img(height, width);
  std::copy(t.data(), t.data() + t.numel(), img.pixels.begin());
  return img;
}

SceneSpec make_scene(int n_blobs, std::uint64_t seed, const SceneOptions& options) {
  if (n_blobs < 1) throw InvalidInput("make_scene: need at least one blob");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  SceneSpec scene;
  scene.bounds = options.bounds;
  scene.background = options.background;
  const Eigen::Vector3d extent = options.bounds.hi - options.bounds.lo;
  for (int i = 0; i < n_blobs; ++i) {
    GaussianPrimitive g;
    for (int a = 0; a < 3; ++a) {
      // Keep means a max-scale margin inside the box.
      const double margin = std::min(options.max_scale, 0.25 * extent[a]);
      g.mean[a] = options.bounds.lo[a] + margin + unit(rng) * (extent[a] - 2 * margin);
    }
    for (int a = 0; a < 3; ++a) {
      g.scale[a] = options.min_scale + unit(rng) * (options.max_scale - options.min_scale);
    }
    Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
    if (q.norm() < 1e-9) q = Eigen::Quaterniond::Identity();
    g.rotation = q.normalized();
    g.opacity = options.min_opacity + unit(rng) * (1.0 - options.min_opacity);
    for (int c = 0; c < 3; ++c) g.color[c] = unit(rng);
    scene.blobs.push_back(g);
  }
  return scene;
}

TrajectoryKind parse_trajectory_kind(const std::string& name) {
  if (name == "arc") return TrajectoryKind::kArc;
  if (name == "line") return TrajectoryKind::kLine;
  throw ConfigError("unknown trajectory kind '" + name + "'");
}

std::string to_string(TrajectoryKind kind) {
  return kind == TrajectoryKind::kArc ? "arc" : "line";
}

namespace {

CameraPose camera_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& look_at,
                     const CameraRig& rig) {
  CameraPose p;
  p.center = eye;
  p.rotation = look_at_rotation(eye, look_at);
  p.width = rig.image_size;
  p.height = rig.image_size;
  const double half = std::tan(rig.fov_degrees * std::numbers::pi / 360.0);
  p.fx = p.fy = 0.5 * rig.image_size / half;
  p.cx = p.cy = 0.5 * rig.image_size;
  return p;
}

}  // namespace

CameraPose arc_camera(double theta, const Eigen::Vector3d& look_at, const CameraRig& rig) {
  const Eigen::Vector3d eye =
      look_at + Eigen::Vector3d(rig.radius * std::sin(theta), -rig.elevation,
                                -rig.radius * std::cos(theta));
  return camera_at(eye, look_at, rig);
}

CameraPose line_camera(double offset, const Eigen::Vector3d& look_at, const CameraRig& rig) {
  const Eigen::Vector3d eye = look_at + Eigen::Vector3d(offset, -rig.elevation, -rig.radius);
  return camera_at(eye, look_at, rig);
}

std::vector<CameraPose> make_trajectory(TrajectoryKind kind, int k, double baseline,
                                        const Eigen::Vector3d& look_at,
                                        const CameraRig& rig) {
  if (k < 1) throw InvalidInput("make_trajectory: k must be >= 1");
  if (!(baseline > 0)) throw InvalidInput("make_trajectory: baseline must be positive");
  std::vector<CameraPose> poses;
  for (int i = 0; i < k; ++i) {
    const double t = k == 1 ? 0.0 : baseline * (static_cast<double>(i) / (k - 1) - 0.5);
    poses.push_back(kind == TrajectoryKind::kArc ? arc_camera(t, look_at, rig)
                                                 : line_camera(t, look_at, rig));
  }
  return poses;
}

Tensor64 pack(std::span<const GaussianPrimitive> prims) {
  Tensor64 out({prims.size(), splat::kStride});
  for (std::size_t i = 0; i < prims.size(); ++i) {
    const auto& g = prims[i];
    double* row = out.data() + i * splat::kStride;
    for (int a = 0; a < 3; ++a) {
      row[a] = g.mean[a];
      row[3 + a] = g.scale[a];
      row[11 + a] = g.color[a];
    }
    row[6] = g.rotation.w();
    row[7] = g.rotation.x();
    row[8] = g.rotation.y();
    row[9] = g.rotation.z();
    row[10] = g.opacity;
  }
  return out;
}

std::vector<GaussianPrimitive> unpack(const Tensor64& packed) {
  if (packed.rank() != 2 || packed.cols() != splat::kStride) {
    throw ShapeError("unpack: expected [P, 14], got " + shape_str(packed.shape()));
  }
  std::vector<GaussianPrimitive> out(packed.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* row = packed.data() + i * splat::kStride;
    auto& g = out[i];
    g.mean = {row[0], row[1], row[2]};
    g.scale = {row[3], row[4], row[5]};
    g.rotation = Eigen::Quaterniond(row[6], row[7], row[8], row[9]).normalized();
    g.opacity = row[10];
    g.color = {row[11], row[12], row[13]};
  }
  return out;
}

Image render(std::span<const GaussianPrimitive> prims, const CameraPose& pose, int height,
             int width, const Eigen::Vector3d& background) {
  if (height < 1 || width < 1) throw InvalidInput("render: image size must be >= 1");
  const Tensor64 img = splat::render(pack(prims), {pose, height, width, background});
  Image out(height, width);
  for (std::size_t i = 0; i < img.numel(); ++i) out.pixels[i] = static_cast<float>(img[i]);
  return out;
}

Encoder::Encoder(int patch, int channels, std::uint64_t seed)
    : patch_(patch), channels_(channels) {
  if (patch < 1) throw ConfigError("encoder: patch must be >= 1");
  if (channels < 3) throw ConfigError("encoder: channels must be >= 3");
  const std::size_t fan_in = static_cast<std::size_t>(patch) * patch * 3;
  projection_.resize(static_cast<std::size_t>(channels) * fan_in);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  for (auto& w : projection_) w = static_cast<float>(normal(rng));
}

ViewFeature Encoder::operator()(const Image& image) const {
  if (image.height % patch_ != 0 || image.width % patch_ != 0) {
    throw ConfigError("encode_view: patch " + std::to_string(patch_) +
                      " does not divide image " + std::to_string(image.height) + "x" +
                      std::to_string(image.width));
  }
  const std::size_t fan_in = static_cast<std::size_t>(patch_) * patch_ * 3;
  const auto c = static_cast<std::size_t>(channels_);
  ViewFeature f;
  f.rows = image.height / patch_;
  f.cols = image.width / patch_;
  f.channels = channels_;
  f.data = Tensor({f.tokens(), c});
  std::vector<float> block(fan_in);
  for (int r = 0; r < f.rows; ++r) {
    for (int col = 0; col < f.cols; ++col) {
      std::size_t at = 0;
      for (int dy = 0; dy < patch_; ++dy) {
        for (int dx = 0; dx < patch_; ++dx) {
          for (int ch = 0; ch < 3; ++ch) {
            block[at++] = image.at(r * patch_ + dy, col * patch_ + dx, ch);
          }
        }
      }
      float* out = f.data.data() + (static_cast<std::size_t>(r) * f.cols + col) * c;
      for (std::size_t o = 0; o < c; ++o) {
        const float* w = projection_.data() + o * fan_in;
        float acc = 0;
        for (std::size_t i = 0; i < fan_in; ++i) acc += w[i] * block[i];
        out[o] = acc;
      }
    }
  }
  return f;
}

ViewFeature encode_view(const Image& image, int patch, int channels,
                        std::uint64_t encoder_seed) {
  if (patch < 1 || image.height % patch != 0 || image.width % patch != 0) {
    throw ConfigError("encode_view: patch " + std::to_string(patch) +
                      " does not divide image " + std::to_string(image.height) + "x" +
                      std::to_string(image.width));
  }
  return Encoder(patch, channels, encoder_seed)(image);
}

double psnr(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width || a.pixels.size() != b.pixels.size()) {
    throw ShapeError("psnr: image sizes differ");
  }
  double acc = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    acc += d * d;
  }
  const double mse = a.pixels.empty() ? 0.0 : acc / static_cast<double>(a.pixels.size());
  if (mse < 1e-10) return kPsnrCap;
  return 10.0 * std::log10(1.0 / mse);
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("ppm: cannot open " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  for (float v : image.pixels) {
    const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
    out.put(static_cast<char>(byte));
  }
}

}  // namespace zp
