#include <array>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "zpressor/archive.hpp"
#include "zpressor/error.hpp"
#include "zpressor/zpressor.hpp"

namespace zp {
namespace {

ViewFeature random_feature(std::mt19937_64& rng, int rows, int cols, int c) {
  ViewFeature f{rows, cols, c, Tensor({static_cast<std::size_t>(rows * cols),
                                       static_cast<std::size_t>(c)})};
  std::normal_distribution<float> n;
  for (auto& v : f.data.span()) v = n(rng);
  return f;
}

std::vector<ViewFeature> random_features(std::mt19937_64& rng, int k, int rows, int cols,
                                         int c) {
  std::vector<ViewFeature> out;
  for (int i = 0; i < k; ++i) out.push_back(random_feature(rng, rows, cols, c));
  return out;
}

// Replaces every parameter with small random values so no branch is idle.
template <class P>
void randomize(P& params, std::uint64_t seed, float scale = 0.3f) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.f, scale);
  visit_params([&](const std::string& name, Tensor& t) {
    for (auto& v : t.span()) v = n(rng);
    if (name.find(".gain") != std::string::npos) {
      for (auto& v : t.span()) v += 1.f;
    }
  }, params);
}

AnchorPartition partition_2_of_5() {
  return {5, {0, 3}, {{1, 2}, {4}}, Strategy::kFps};
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  float m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

TEST(InitParams, ZeroResidualOutputsAndDeterminism) {
  const ZPressorParams a = init_params(8, 2, 2, 5), b = init_params(8, 2, 2, 5);
  bool any_difference = false;
  const ZPressorParams c = init_params(8, 2, 2, 6);
  visit_params([&](const std::string& name, const Tensor& x, const Tensor& y, const Tensor& z) {
    EXPECT_EQ(x, y) << name;
    any_difference |= !(x == z);
    const bool zero_init = name.find(".output.") != std::string::npos ||
                           name.find(".fc2.") != std::string::npos ||
                           name == "posterior.head.weight";
    if (zero_init) {
      for (float v : x.span()) EXPECT_EQ(v, 0.f) << name;
    }
  }, a, b, c);
  EXPECT_TRUE(any_difference);
  EXPECT_EQ(a.blocks.size(), 2u);
}

TEST(InitParams, HeadsMustDivideChannels) {
  EXPECT_THROW(init_params(6, 1, 4, 0), ConfigError);
  EXPECT_THROW(init_params(8, 0, 2, 0), ConfigError);
}

TEST(InitParams, CanonicalNames) {
  const auto entries = to_archive(init_params(4, 2, 1, 0));
  std::vector<std::string> names;
  for (const auto& e : entries) names.push_back(e.name);
  EXPECT_EQ(names.front(), "block0.cross.norm.gain");
  EXPECT_NE(std::find(names.begin(), names.end(), "block1.self.output.weight"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "block1.mlp.fc2.bias"), names.end());
  EXPECT_EQ(names.back(), "posterior.head.bias");
}

TEST(InitParams, ArchiveRoundTrip) {
  ZPressorParams p = init_params(8, 2, 2, 1);
  randomize(p, 2);
  std::stringstream ss;
  archive::write(ss, to_archive(p));
  const ZPressorParams q = from_archive(archive::read(ss), 8, 2, 2);
  visit_params([](const std::string& name, const Tensor& x, const Tensor& y) {
    EXPECT_EQ(x, y) << name;
  }, p, q);
  EXPECT_THROW(from_archive(to_archive(p), 4, 2, 2), FormatError);
}

TEST(FuseCluster, ZeroInitIsIdentity) {
  std::mt19937_64 rng(1);
  const ViewFeature anchor = random_feature(rng, 2, 3, 8);
  const auto supports = random_features(rng, 3, 2, 3, 8);
  const ZPressorParams p = init_params(8, 1, 2, 0);
  EXPECT_EQ(fuse_cluster(anchor, supports, p.blocks[0], 2), anchor.data);
  EXPECT_EQ(fuse_cluster(anchor, {}, p.blocks[0], 2), anchor.data);
}

TEST(FuseCluster, SupportPermutationInvariant) {
  std::mt19937_64 rng(2);
  const ViewFeature anchor = random_feature(rng, 2, 2, 8);
  auto supports = random_features(rng, 3, 2, 2, 8);
  ZPressorParams p = init_params(8, 1, 2, 0);
  randomize(p, 3);
  const Tensor a = fuse_cluster(anchor, supports, p.blocks[0], 2);
  std::swap(supports[0], supports[2]);
  std::swap(supports[1], supports[2]);
  EXPECT_LE(max_abs_diff(a, fuse_cluster(anchor, supports, p.blocks[0], 2)), 1e-5f);
}

TEST(FuseCluster, ChannelMismatchThrows) {
  std::mt19937_64 rng(3);
  const ViewFeature anchor = random_feature(rng, 2, 2, 8);
  const std::vector<ViewFeature> bad = {random_feature(rng, 2, 2, 4)};
  const ZPressorParams p = init_params(8, 1, 2, 0);
  EXPECT_THROW(fuse_cluster(anchor, bad, p.blocks[0], 2), ShapeError);
  const ZPressorParams q = init_params(4, 1, 2, 0);
  EXPECT_THROW(fuse_cluster(anchor, {}, q.blocks[0], 2), ShapeError);
}

// Scalar reference for one block with one anchor token and one support token,
// channels = 2, one head. With a single key the attention weight is exactly 1.
struct Mat2 {
  double m[2][2];
  double b[2];
  std::array<double, 2> operator()(const std::array<double, 2>& x) const {
    return {m[0][0] * x[0] + m[0][1] * x[1] + b[0], m[1][0] * x[0] + m[1][1] * x[1] + b[1]};
  }
};

std::array<double, 2> ln2(const std::array<double, 2>& x, const std::array<double, 2>& g,
                          const std::array<double, 2>& s) {
  const double mean = 0.5 * (x[0] + x[1]);
  const double var = 0.5 * ((x[0] - mean) * (x[0] - mean) + (x[1] - mean) * (x[1] - mean));
  const double r = 1.0 / std::sqrt(var + 1e-5);
  return {(x[0] - mean) * r * g[0] + s[0], (x[1] - mean) * r * g[1] + s[1]};
}

void set_linear(LinearT<Tensor>& l, const Mat2& m) {
  l.weight = Tensor({2, 2}, {float(m.m[0][0]), float(m.m[0][1]), float(m.m[1][0]),
                             float(m.m[1][1])});
  l.bias = Tensor({2}, {float(m.b[0]), float(m.b[1])});
}

TEST(FuseCluster, HandComputedSingleTokenBlock) {
  const std::array<double, 2> x = {1.0, 3.0}, s = {2.0, -1.0};
  const std::array<double, 2> g2 = {0.8, 1.2}, sh2 = {0.0, 0.3};
  const std::array<double, 2> g3 = {1.0, 0.9}, sh3 = {-0.1, 0.0};
  // Query and key weights cannot change a single-key softmax.
  const Mat2 cq{{{0.3, -0.2}, {0.5, 0.1}}, {0.0, 0.1}};
  const Mat2 ck{{{0.7, 0.2}, {-0.4, 0.6}}, {0.2, 0.0}};
  const Mat2 cv{{{0.9, -0.3}, {0.2, 0.4}}, {0.05, -0.1}};
  const Mat2 co{{{0.5, 0.1}, {-0.2, 0.3}}, {0.01, 0.02}};
  const Mat2 sq{{{0.2, 0.1}, {0.0, 0.3}}, {0.0, 0.0}};
  const Mat2 sk{{{0.1, 0.0}, {0.3, 0.2}}, {0.0, 0.0}};
  const Mat2 sv{{{-0.6, 0.2}, {0.4, 0.7}}, {0.1, 0.0}};
  const Mat2 so{{{0.3, -0.4}, {0.2, 0.5}}, {0.0, -0.05}};

  BlockParams blk = init_params(2, 1, 1, 0).blocks[0];
  blk.cross.norm = {Tensor({2}, {1.5f, 0.5f}), Tensor({2}, {0.1f, -0.2f})};
  blk.self.norm = {Tensor({2}, {0.8f, 1.2f}), Tensor({2}, {0.0f, 0.3f})};
  blk.mlp_norm = {Tensor({2}, {1.0f, 0.9f}), Tensor({2}, {-0.1f, 0.0f})};
  set_linear(blk.cross.query, cq);
  set_linear(blk.cross.key, ck);
  set_linear(blk.cross.value, cv);
  set_linear(blk.cross.output, co);
  set_linear(blk.self.query, sq);
  set_linear(blk.self.key, sk);
  set_linear(blk.self.value, sv);
  set_linear(blk.self.output, so);
  // MLP with hidden width 8: only the first two hidden units are active.
  blk.fc1.weight = Tensor({8, 2});
  blk.fc1.bias = Tensor({8});
  blk.fc2.weight = Tensor({2, 8});
  blk.fc2.bias = Tensor({2}, {0.03f, -0.01f});
  const double w1[2][2] = {{0.6, -0.5}, {0.2, 0.9}}, b1[2] = {0.1, -0.3};
  const double w2[2][2] = {{0.4, 0.3}, {-0.7, 0.2}};
  for (int i = 0; i < 2; ++i) {
    blk.fc1.bias[i] = float(b1[i]);
    for (int j = 0; j < 2; ++j) {
      blk.fc1.weight.at(i, j) = float(w1[i][j]);
      blk.fc2.weight.at(i, j) = float(w2[i][j]);
    }
  }

  // Reference: cross-attention with one key returns the value projection of
  // the raw support token; self-attention over one token returns its value.
  const auto v = cv(s);
  const auto co_out = co(v);
  std::array<double, 2> z1 = {x[0] + co_out[0], x[1] + co_out[1]};
  const auto sv_out = so(sv(ln2(z1, g2, sh2)));
  std::array<double, 2> z2 = {z1[0] + sv_out[0], z1[1] + sv_out[1]};
  const auto n3 = ln2(z2, g3, sh3);
  auto gelu = [](double t) { return 0.5 * t * (1.0 + std::erf(t / std::sqrt(2.0))); };
  double h[2];
  for (int i = 0; i < 2; ++i) h[i] = gelu(w1[i][0] * n3[0] + w1[i][1] * n3[1] + b1[i]);
  const std::array<double, 2> z3 = {z2[0] + w2[0][0] * h[0] + w2[0][1] * h[1] + 0.03,
                                    z2[1] + w2[1][0] * h[0] + w2[1][1] * h[1] - 0.01};

  const ViewFeature anchor{1, 1, 2, Tensor({1, 2}, {1.f, 3.f})};
  const std::vector<ViewFeature> support = {{1, 1, 2, Tensor({1, 2}, {2.f, -1.f})}};
  const Tensor out = fuse_cluster(anchor, support, blk, 1);
  EXPECT_NEAR(out[0], z3[0], 1e-5);
  EXPECT_NEAR(out[1], z3[1], 1e-5);
}

TEST(FuseCluster, TwoKeysWeightedByScores) {
  // Two support tokens exercise the softmax weights themselves.
  BlockParams blk = init_params(2, 1, 1, 0).blocks[0];
  blk.cross.query = {Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2})};
  blk.cross.key = {Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2})};
  blk.cross.value = {Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2})};
  blk.cross.output = {Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2})};
  const ViewFeature anchor{1, 1, 2, Tensor({1, 2}, {0.f, 2.f})};
  const std::vector<ViewFeature> supports = {{1, 1, 2, Tensor({1, 2}, {1.f, 0.f})},
                                             {1, 1, 2, Tensor({1, 2}, {0.f, 1.f})}};
  // LN([0, 2]) = [-1, 1] / sqrt(1 + 1e-5); scores = q.k / sqrt(2).
  const double r = 1.0 / std::sqrt(1.0 + 1e-5);
  const double s0 = -r / std::sqrt(2.0), s1 = r / std::sqrt(2.0);
  const double w0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
  const Tensor out = fuse_cluster(anchor, supports, blk, 1, false);
  EXPECT_NEAR(out[0], 0.0 + w0, 1e-5);
  EXPECT_NEAR(out[1], 2.0 + (1 - w0), 1e-5);
}

TEST(Compress, NoFusionPassesAnchorsThrough) {
  std::mt19937_64 rng(4);
  const auto f = random_features(rng, 5, 2, 2, 8);
  ZPressorParams p = init_params(8, 2, 2, 0);
  randomize(p, 1);
  const LatentState z = compress(f, partition_2_of_5(), p, FusionMode::kNoFusion);
  ASSERT_EQ(z.features.shape(), (Shape{2, 4, 8}));
  for (std::size_t i = 0; i < 32; ++i) {
    EXPECT_EQ(z.features[i], f[0].data[i]);
    EXPECT_EQ(z.features[32 + i], f[3].data[i]);
  }
}

TEST(Compress, ZeroInitFeaturesEqualAnchorsAndHeadBias) {
  std::mt19937_64 rng(5);
  const auto f = random_features(rng, 5, 2, 2, 8);
  const ZPressorParams p = init_params(8, 2, 2, 0);
  for (FusionMode m : {FusionMode::kDefault, FusionMode::kFuseAnchors, FusionMode::kNoFusion}) {
    const LatentState z = compress(f, partition_2_of_5(), p, m);
    const LatentState base = compress(f, partition_2_of_5(), p, FusionMode::kNoFusion);
    EXPECT_EQ(z.features, base.features);
    for (std::size_t t = 0; t < 8; ++t) {
      for (std::size_t c = 0; c < 8; ++c) {
        EXPECT_EQ(z.posterior_mean[t * 8 + c], p.posterior_head.bias[c]);
        EXPECT_EQ(z.posterior_logvar[t * 8 + c], p.posterior_head.bias[8 + c]);
      }
    }
    EXPECT_EQ(z.sample, z.posterior_mean);
  }
}

TEST(Compress, DefaultDiffersFromFuseAnchors) {
  std::mt19937_64 rng(6);
  const auto f = random_features(rng, 5, 2, 2, 8);
  ZPressorParams p = init_params(8, 2, 2, 0);
  randomize(p, 4);
  const LatentState a = compress(f, partition_2_of_5(), p, FusionMode::kDefault);
  const LatentState b = compress(f, partition_2_of_5(), p, FusionMode::kFuseAnchors);
  double norm = 0;
  for (std::size_t i = 0; i < a.features.numel(); ++i) {
    norm += std::pow(a.features[i] - b.features[i], 2);
  }
  EXPECT_GT(norm, 0.0);
}

TEST(Compress, ClusterIndependence) {
  std::mt19937_64 rng(7);
  auto f = random_features(rng, 5, 2, 2, 8);
  ZPressorParams p = init_params(8, 2, 2, 0);
  randomize(p, 5);
  const LatentState a = compress(f, partition_2_of_5(), p);
  f[4] = random_feature(rng, 2, 2, 8);  // support of anchor 3 only
  const LatentState b = compress(f, partition_2_of_5(), p);
  for (std::size_t i = 0; i < 32; ++i) EXPECT_EQ(a.features[i], b.features[i]);
  EXPECT_GT(max_abs_diff(a.features, b.features), 0.f);
}

TEST(Compress, SupportPermutationInvariant) {
  std::mt19937_64 rng(8);
  auto f = random_features(rng, 5, 2, 2, 8);
  ZPressorParams p = init_params(8, 2, 2, 0);
  randomize(p, 6);
  const LatentState a = compress(f, partition_2_of_5(), p);
  AnchorPartition swapped = partition_2_of_5();
  swapped.clusters[0] = {2, 1};
  EXPECT_LE(max_abs_diff(a.features, compress(f, swapped, p).features), 1e-5f);
}

TEST(Compress, TokenCountIndependentOfK) {
  std::mt19937_64 rng(9);
  ZPressorParams p = init_params(8, 1, 2, 0);
  randomize(p, 7);
  for (int k : {3, 6, 12}) {
    const auto f = random_features(rng, k, 2, 3, 8);
    std::vector<int> rest;
    for (int v = 2; v < k; ++v) rest.push_back(v);
    const AnchorPartition part{k, {0, 1}, {rest, {}}, Strategy::kFps};
    EXPECT_EQ(compress(f, part, p).features.shape(), (Shape{2, 6, 8}));
  }
}

TEST(Compress, IdentityAtInitBitwise) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 2 + static_cast<int>(rng() % 6);
    const auto f = random_features(rng, k, 1 + rng() % 3, 1 + rng() % 3, 8);
    AnchorPartition part{k, {0}, {{}}, Strategy::kFps};
    for (int v = 1; v < k; ++v) part.clusters[0].push_back(v);
    const ZPressorParams p = init_params(8, 2, 4, trial);
    EXPECT_EQ(compress(f, part, p).features,
              compress(f, part, p, FusionMode::kNoFusion).features);
  }
}

TEST(Compress, TrainModeSamplesAroundMean) {
  std::mt19937_64 rng(11);
  const auto f = random_features(rng, 5, 2, 2, 8);
  ZPressorParams p = init_params(8, 1, 2, 0);
  randomize(p, 8);
  const LatentState a = compress(f, partition_2_of_5(), p, FusionMode::kDefault, {},
                                 {true, 3});
  const LatentState b = compress(f, partition_2_of_5(), p, FusionMode::kDefault, {},
                                 {true, 3});
  const LatentState c = compress(f, partition_2_of_5(), p, FusionMode::kDefault, {},
                                 {true, 4});
  EXPECT_EQ(a.sample, b.sample);
  EXPECT_FALSE(a.sample == c.sample);
  EXPECT_FALSE(a.sample == a.posterior_mean);
}

TEST(Compress, Errors) {
  std::mt19937_64 rng(12);
  auto f = random_features(rng, 4, 2, 2, 8);
  const ZPressorParams p = init_params(8, 1, 2, 0);
  EXPECT_THROW(compress(f, partition_2_of_5(), p), InvalidInput);
  f.push_back(random_feature(rng, 2, 2, 4));
  EXPECT_THROW(compress(f, partition_2_of_5(), p), ShapeError);
}

TEST(Compress, AblationsChangeOutput) {
  std::mt19937_64 rng(13);
  const auto f = random_features(rng, 5, 2, 2, 8);
  ZPressorParams p = init_params(8, 2, 2, 0);
  randomize(p, 9);
  const Tensor full = compress(f, partition_2_of_5(), p).features;
  const Tensor single = compress(f, partition_2_of_5(), p, FusionMode::kDefault,
                                 {.single_block = true}).features;
  const Tensor no_self = compress(f, partition_2_of_5(), p, FusionMode::kDefault,
                                  {.no_self_attention = true}).features;
  EXPECT_GT(max_abs_diff(full, single), 0.f);
  EXPECT_GT(max_abs_diff(full, no_self), 0.f);
  ZPressorParams one = p;
  one.blocks.resize(1);
  EXPECT_EQ(single, compress(f, partition_2_of_5(), one).features);
}

}  // namespace
}  // namespace zp
