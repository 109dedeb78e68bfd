#include "zpressor/geometry.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "zpressor/error.hpp"

namespace zp {

void CameraPose::validate() const {
  const Eigen::Matrix3d err = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
  if (err.cwiseAbs().maxCoeff() > 1e-6) {
    throw InvalidInput("camera rotation is not orthonormal");
  }
  if (std::abs(rotation.determinant() - 1.0) > 1e-6) {
    throw InvalidInput("camera rotation determinant is not +1");
  }
  if (!center.allFinite()) throw InvalidInput("camera center is not finite");
  if (!(fx > 0) || !(fy > 0)) throw InvalidInput("focal lengths must be positive");
  if (width <= 0 || height <= 0) throw InvalidInput("image size must be positive");
  if (!(cx >= 0 && cx <= width && cy >= 0 && cy <= height)) {
    throw InvalidInput("principal point outside the image");
  }
}

DistanceMatrix pairwise_distances(std::span<const Eigen::Vector3d> points) {
  if (points.empty()) throw InvalidInput("pairwise_distances: no points");
  DistanceMatrix d(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      const double v = (points[i] - points[j]).norm();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

DistanceMatrix pairwise_distances(std::span<const CameraPose> poses) {
  std::vector<Eigen::Vector3d> centers;
  centers.reserve(poses.size());
  for (const auto& p : poses) centers.push_back(p.center);
  return pairwise_distances(std::span<const Eigen::Vector3d>(centers));
}

Projection project_point(const CameraPose& pose, const Eigen::Vector3d& point) {
  const Eigen::Vector3d pc = pose.to_camera(point);
  Projection out;
  if (std::abs(pc.z()) < kMinProjectDepth) return out;
  out.depth = pc.z();
  out.pixel = {pose.fx * pc.x() / pc.z() + pose.cx, pose.fy * pc.y() / pc.z() + pose.cy};
  out.valid = pc.z() > 0;
  return out;
}

Eigen::Vector3d pixel_ray(const CameraPose& pose, const Eigen::Vector2d& pixel) {
  const Eigen::Vector3d cam((pixel.x() - pose.cx) / pose.fx,
                            (pixel.y() - pose.cy) / pose.fy, 1.0);
  return pose.rotation.transpose() * cam;
}

Eigen::Vector3d unproject(const CameraPose& pose, const Eigen::Vector2d& pixel,
                          double depth) {
  return pose.center + depth * pixel_ray(pose, pixel);
}

bool in_image(const CameraPose& pose, const Eigen::Vector2d& pixel) {
  return pixel.x() >= 0 && pixel.x() <= pose.width && pixel.y() >= 0 &&
         pixel.y() <= pose.height;
}

namespace {

void check_overlap_args(int grid, std::span<const double> depths) {
  if (grid < 2) throw InvalidInput("view_overlap: grid must be >= 2");
  if (depths.empty()) throw InvalidInput("view_overlap: no sample depths");
  for (double d : depths) {
    if (!(d > 0)) throw InvalidInput("view_overlap: depths must be positive");
  }
}

}  // namespace

double directed_overlap(const CameraPose& from, const CameraPose& to, int grid,
                        std::span<const double> depths) {
  check_overlap_args(grid, depths);
  int hits = 0;
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const Eigen::Vector2d px((gx + 0.5) / grid * from.width,
                               (gy + 0.5) / grid * from.height);
      for (double depth : depths) {
        const Projection p = project_point(to, unproject(from, px, depth));
        if (p.valid && in_image(to, p.pixel)) {
          ++hits;
          break;
        }
      }
    }
  }
  return static_cast<double>(hits) / (static_cast<double>(grid) * grid);
}

double view_overlap(const CameraPose& a, const CameraPose& b, int grid,
                    std::span<const double> depths) {
  return std::min(directed_overlap(a, b, grid, depths),
                  directed_overlap(b, a, grid, depths));
}

OverlapMatrix overlap_matrix(std::span<const CameraPose> poses, int grid,
                             std::span<const double> depths) {
  if (poses.size() < 2) throw InvalidInput("overlap_matrix: need at least 2 poses");
  check_overlap_args(grid, depths);
  OverlapMatrix m(poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    m(i, i) = 1.0;
    for (std::size_t j = i + 1; j < poses.size(); ++j) {
      const double v = view_overlap(poses[i], poses[j], grid, depths);
      m(i, j) = v;
      m(j, i) = v;
    }
  }
  return m;
}

Eigen::Matrix3d look_at_rotation(const Eigen::Vector3d& eye,
                                 const Eigen::Vector3d& target) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d up(0, -1, 0);
  if (std::abs(forward.dot(up)) > 1 - 1e-9) up = Eigen::Vector3d(0, 0, 1);
  const Eigen::Vector3d right = forward.cross(up).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d r;
  r.row(0) = right;
  r.row(1) = down;
  r.row(2) = forward;
  return r;
}

namespace {

double number_field(const nlohmann::json& obj, const std::string& where,
                    const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw FormatError(where + "." + key + ": missing");
  if (!it->is_number()) throw FormatError(where + "." + key + ": expected a number");
  return it->get<double>();
}

std::vector<double> array_field(const nlohmann::json& obj, const std::string& where,
                                const char* key, std::size_t n) {
  auto it = obj.find(key);
  if (it == obj.end()) throw FormatError(where + "." + key + ": missing");
  if (!it->is_array() || it->size() != n) {
    throw FormatError(where + "." + key + ": expected " + std::to_string(n) + " numbers");
  }
  std::vector<double> out;
  for (const auto& v : *it) {
    if (!v.is_number()) {
      throw FormatError(where + "." + key + ": expected " + std::to_string(n) + " numbers");
    }
    out.push_back(v.get<double>());
  }
  return out;
}

int size_field(const nlohmann::json& obj, const std::string& where, const char* key) {
  const double v = number_field(obj, where, key);
  if (v != std::floor(v) || v < 1 || v > 1 << 20) {
    throw FormatError(where + "." + key + ": expected a positive integer");
  }
  return static_cast<int>(v);
}

}  // namespace

std::vector<CameraPose> poses_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw FormatError("poses: expected a JSON array");
  std::vector<CameraPose> poses;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& obj = j[i];
    const std::string where = "poses[" + std::to_string(i) + "]";
    if (!obj.is_object()) throw FormatError(where + ": expected an object");
    CameraPose p;
    const auto r = array_field(obj, where, "rotation", 9);
    for (int k = 0; k < 9; ++k) p.rotation(k / 3, k % 3) = r[k];
    const auto c = array_field(obj, where, "center", 3);
    p.center = {c[0], c[1], c[2]};
    p.fx = number_field(obj, where, "fx");
    p.fy = number_field(obj, where, "fy");
    p.cx = number_field(obj, where, "cx");
    p.cy = number_field(obj, where, "cy");
    p.width = size_field(obj, where, "width");
    p.height = size_field(obj, where, "height");
    try {
      p.validate();
    } catch (const InvalidInput& e) {
      throw FormatError(where + ": " + e.what());
    }
    poses.push_back(p);
  }
  return poses;
}

nlohmann::json poses_to_json(std::span<const CameraPose> poses) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : poses) {
    nlohmann::json rot = nlohmann::json::array();
    for (int k = 0; k < 9; ++k) rot.push_back(p.rotation(k / 3, k % 3));
    arr.push_back({{"rotation", rot},
                   {"center", {p.center.x(), p.center.y(), p.center.z()}},
                   {"fx", p.fx},
                   {"fy", p.fy},
                   {"cx", p.cx},
                   {"cy", p.cy},
                   {"width", p.width},
                   {"height", p.height}});
  }
  return arr;
}

std::vector<CameraPose> parse_poses(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + upto, '\n');
    throw FormatError("poses: JSON syntax error at line " + std::to_string(line) +
                      ": " + e.what());
  }
  return poses_from_json(j);
}

std::vector<CameraPose> load_poses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("poses: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_poses(ss.str());
}

}  // namespace zp
