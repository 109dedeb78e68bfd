#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Geometry>
#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "zpressor/error.hpp"
#include "zpressor/geometry.hpp"

namespace zp {
namespace {

CameraPose make_pose(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, int size = 32,
                     double f = 28.0) {
  CameraPose p;
  p.rotation = look_at_rotation(eye, target);
  p.center = eye;
  p.fx = p.fy = f;
  p.cx = p.cy = size / 2.0;
  p.width = p.height = size;
  return p;
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

Eigen::Vector3d random_vec(std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> n(0.0, s);
  return {n(rng), n(rng), n(rng)};
}

TEST(PairwiseDistances, ThreeFourFive) {
  const std::vector<Eigen::Vector3d> c = {{0, 0, 0}, {3, 4, 0}};
  const DistanceMatrix d = pairwise_distances(c);
  EXPECT_DOUBLE_EQ(d(0, 1), 5.0);
  EXPECT_DOUBLE_EQ(d(1, 0), 5.0);
  EXPECT_DOUBLE_EQ(d(0, 0), 0.0);
}

TEST(PairwiseDistances, SinglePoseIsZero) {
  const std::vector<CameraPose> poses(1);
  const DistanceMatrix d = pairwise_distances(poses);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d(0, 0), 0.0);
}

TEST(PairwiseDistances, EmptyThrows) {
  EXPECT_THROW(pairwise_distances(std::span<const CameraPose>{}), InvalidInput);
}

TEST(PairwiseDistances, MatchesScalarRecomputation) {
  std::mt19937_64 rng(17);
  std::vector<CameraPose> poses(6);
  for (auto& p : poses) p.center = random_vec(rng, 3.0);
  const DistanceMatrix d = pairwise_distances(poses);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      const double dx = poses[i].center.x() - poses[j].center.x();
      const double dy = poses[i].center.y() - poses[j].center.y();
      const double dz = poses[i].center.z() - poses[j].center.z();
      EXPECT_NEAR(d(i, j), std::sqrt(dx * dx + dy * dy + dz * dz), 1e-12);
    }
  }
}

TEST(PairwiseDistances, RigidTransformInvariant) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Eigen::Vector3d> a(7), b(7);
    const Eigen::Matrix3d r = random_rotation(rng);
    const Eigen::Vector3d t = random_vec(rng, 10.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = random_vec(rng, 2.0);
      b[i] = r * a[i] + t;
    }
    const DistanceMatrix da = pairwise_distances(a), db = pairwise_distances(b);
    for (std::size_t i = 0; i < da.values().size(); ++i) {
      EXPECT_NEAR(da.values()[i], db.values()[i], 1e-9);
    }
  }
}

TEST(ProjectPoint, OpticalAxis) {
  const Projection p = project_point(CameraPose{}, {0, 0, 1});
  EXPECT_TRUE(p.valid);
  EXPECT_EQ(p.pixel, Eigen::Vector2d(0, 0));
  EXPECT_EQ(p.depth, 1.0);
}

TEST(ProjectPoint, BehindCameraIsInvalid) {
  const Projection p = project_point(CameraPose{}, {0.2, 0.1, -2});
  EXPECT_LT(p.depth, 0.0);
  EXPECT_FALSE(p.valid);
}

TEST(ProjectPoint, CenterPlaneReportsZeroDepth) {
  const Projection p = project_point(CameraPose{}, {1, 1, 1e-12});
  EXPECT_EQ(p.depth, 0.0);
  EXPECT_FALSE(p.valid);
}

TEST(ProjectPoint, MatchesHomogeneousMatrixForm) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(10, 50);
  for (int trial = 0; trial < 50; ++trial) {
    CameraPose pose;
    pose.rotation = random_rotation(rng);
    pose.center = random_vec(rng, 2.0);
    pose.fx = u(rng);
    pose.fy = u(rng);
    pose.cx = u(rng);
    pose.cy = u(rng);
    const Eigen::Vector3d offset = random_vec(rng);
    const Eigen::Vector3d x =
        pose.center + pose.rotation.transpose() * Eigen::Vector3d(offset.x(), offset.y(), 3.0);
    Eigen::Matrix4d extrinsic = Eigen::Matrix4d::Identity();
    extrinsic.topLeftCorner<3, 3>() = pose.rotation;
    extrinsic.topRightCorner<3, 1>() = -pose.rotation * pose.center;
    Eigen::Matrix<double, 3, 4> intrinsic = Eigen::Matrix<double, 3, 4>::Zero();
    intrinsic << pose.fx, 0, pose.cx, 0, 0, pose.fy, pose.cy, 0, 0, 0, 1, 0;
    const Eigen::Vector3d h = intrinsic * extrinsic * x.homogeneous();
    const Projection p = project_point(pose, x);
    ASSERT_TRUE(p.valid);
    EXPECT_NEAR(p.depth, h.z(), 1e-9);
    EXPECT_NEAR(p.pixel.x(), h.x() / h.z(), 1e-9);
    EXPECT_NEAR(p.pixel.y(), h.y() / h.z(), 1e-9);
  }
}

TEST(ProjectPoint, UnprojectRoundTrip) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 100; ++trial) {
    CameraPose pose;
    pose.rotation = random_rotation(rng);
    pose.center = random_vec(rng, 3.0);
    pose.fx = 30;
    pose.fy = 25;
    pose.cx = 16;
    pose.cy = 12;
    const Eigen::Vector3d x = random_vec(rng, 5.0);
    const Projection p = project_point(pose, x);
    if (std::abs(p.depth) < 1e-3) continue;
    const Eigen::Vector3d back = unproject(pose, p.pixel, p.depth);
    EXPECT_LE((back - x).norm(), 1e-9 * std::max(1.0, x.norm()));
  }
}

TEST(ViewOverlap, IdenticalPosesFullyOverlap) {
  const CameraPose p = make_pose({0, 0, -3}, {0, 0, 0});
  EXPECT_DOUBLE_EQ(view_overlap(p, p), 1.0);
}

TEST(ViewOverlap, BackToBackIsZero) {
  const CameraPose a = make_pose({0, 0, 0}, {0, 0, 1});
  const CameraPose b = make_pose({0, 0, 0}, {0, 0, -1});
  EXPECT_DOUBLE_EQ(view_overlap(a, b), 0.0);
}

TEST(ViewOverlap, InvalidArgumentsThrow) {
  const CameraPose p = make_pose({0, 0, -3}, {0, 0, 0});
  const std::vector<double> depths = {1.0};
  const std::vector<double> bad = {1.0, 0.0};
  EXPECT_THROW(view_overlap(p, p, 1, depths), InvalidInput);
  EXPECT_THROW(view_overlap(p, p, 4, std::span<const double>{}), InvalidInput);
  EXPECT_THROW(view_overlap(p, p, 4, bad), InvalidInput);
}

// Brute-force directed score with explicit per-ray world points.
double dense_directed(const CameraPose& from, const CameraPose& to, int grid,
                      const std::vector<double>& depths) {
  int hits = 0;
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const double u = (gx + 0.5) / grid * from.width;
      const double v = (gy + 0.5) / grid * from.height;
      const Eigen::Vector3d dir_cam((u - from.cx) / from.fx, (v - from.cy) / from.fy, 1.0);
      bool hit = false;
      for (double d : depths) {
        const Eigen::Vector3d world = from.center + from.rotation.transpose() * (d * dir_cam);
        const Eigen::Vector3d c = to.rotation * (world - to.center);
        if (c.z() <= 1e-9) continue;
        const double pu = to.fx * c.x() / c.z() + to.cx;
        const double pv = to.fy * c.y() / c.z() + to.cy;
        if (pu >= 0 && pu <= to.width && pv >= 0 && pv <= to.height) hit = true;
      }
      hits += hit;
    }
  }
  return static_cast<double>(hits) / (grid * grid);
}

TEST(ViewOverlap, ConvergingCamerasMatchDenseOracle) {
  const std::vector<double> depths = {1, 2, 4};
  const CameraPose a = make_pose({-1.5, 0, -2.5}, {0, 0, 0});
  const CameraPose b = make_pose({1.5, 0.3, -2.5}, {0, 0, 0});
  const double dense =
      std::min(dense_directed(a, b, 64, depths), dense_directed(b, a, 64, depths));
  const double coarse = view_overlap(a, b, 16, depths);
  EXPECT_GT(dense, 0.0);
  EXPECT_LT(dense, 1.0);
  EXPECT_NEAR(coarse, dense, 0.05);
}

TEST(ViewOverlap, SymmetricExactly) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const CameraPose a = make_pose(random_vec(rng, 3.0), random_vec(rng, 0.5));
    const CameraPose b = make_pose(random_vec(rng, 3.0), random_vec(rng, 0.5));
    const double ab = view_overlap(a, b), ba = view_overlap(b, a);
    EXPECT_EQ(ab, ba);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(OverlapMatrix, TwoIdenticalPoses) {
  const CameraPose p = make_pose({0, 0, -3}, {0, 0, 0});
  const std::vector<CameraPose> poses = {p, p};
  const OverlapMatrix m = overlap_matrix(poses);
  for (double v : m.values()) EXPECT_EQ(v, 1.0);
}

TEST(OverlapMatrix, NeedsTwoPoses) {
  const std::vector<CameraPose> one(1);
  EXPECT_THROW(overlap_matrix(one), InvalidInput);
}

TEST(OverlapMatrix, ArcMatchesPerPairCalls) {
  std::vector<CameraPose> poses;
  for (int i = 0; i < 4; ++i) {
    const double th = -0.6 + 0.4 * i;
    poses.push_back(make_pose({3 * std::sin(th), -0.5, -3 * std::cos(th)}, {0, 0, 0}));
  }
  const OverlapMatrix m = overlap_matrix(poses);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(m(i, i), 1.0);
    for (std::size_t j = 0; j < 4; ++j) {
      if (i != j) {
        EXPECT_EQ(m(i, j), view_overlap(poses[i], poses[j]));
      }
      EXPECT_EQ(m(i, j), m(j, i));
    }
  }
}

TEST(LookAt, OrthonormalAndAimed) {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Vector3d eye = random_vec(rng, 3.0), target = random_vec(rng, 0.3);
    const CameraPose p = make_pose(eye, target);
    EXPECT_NO_THROW(p.validate());
    const Projection pr = project_point(p, target);
    EXPECT_NEAR(pr.pixel.x(), p.cx, 1e-9);
    EXPECT_NEAR(pr.pixel.y(), p.cy, 1e-9);
    EXPECT_GT(pr.depth, 0.0);
  }
}

TEST(CameraPoseValidate, RejectsBadPoses) {
  CameraPose p = make_pose({0, 0, -3}, {0, 0, 0});
  CameraPose q = p;
  q.rotation(0, 0) = 2;
  EXPECT_THROW(q.validate(), InvalidInput);
  q = p;
  q.fx = 0;
  EXPECT_THROW(q.validate(), InvalidInput);
  q = p;
  q.width = 0;
  EXPECT_THROW(q.validate(), InvalidInput);
  q = p;
  q.rotation = -p.rotation;
  EXPECT_THROW(q.validate(), InvalidInput);
}

TEST(PoseFile, RoundTrip) {
  std::vector<CameraPose> poses = {make_pose({1, 2, -3}, {0, 0, 0}),
                                   make_pose({-1, 0, -2}, {0.1, 0, 0}, 16, 12)};
  const std::vector<CameraPose> back = parse_poses(poses_to_json(poses).dump());
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_TRUE(back[i].rotation.isApprox(poses[i].rotation, 1e-12));
    EXPECT_EQ(back[i].center, poses[i].center);
    EXPECT_EQ(back[i].width, poses[i].width);
    EXPECT_EQ(back[i].fx, poses[i].fx);
  }
}

TEST(PoseFile, DiagnosticsNameLineAndField) {
  try {
    parse_poses("[\n{\"rotation\": [1,0,0,\n 0,1,0 0,0,1]}]");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  nlohmann::json j = poses_to_json(std::vector<CameraPose>{make_pose({0, 0, -3}, {0, 0, 0})});
  j[0].erase("fx");
  try {
    poses_from_json(j);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("poses[0]"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("fx"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_poses("{}"), FormatError);
  EXPECT_THROW(load_poses("/nonexistent/poses.json"), FormatError);
}

}  // namespace
}  // namespace zp
