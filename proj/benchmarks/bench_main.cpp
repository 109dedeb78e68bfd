#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "zpressor/geometry.hpp"
#include "zpressor/ops.hpp"
#include "zpressor/pipeline.hpp"
#include "zpressor/scene.hpp"
#include "zpressor/selection.hpp"
#include "zpressor/zpressor.hpp"

namespace {

zp::Tensor random_tensor(zp::Shape shape, std::mt19937_64& rng) {
  zp::Tensor t(std::move(shape));
  std::normal_distribution<float> n;
  for (auto& v : t.span()) v = n(rng);
  return t;
}

void BM_FarthestPointSampling(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < k; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  const auto d = zp::pairwise_distances(pts);
  for (auto _ : state) {
    benchmark::DoNotOptimize(zp::select_anchors_fps(d, k / 4, zp::FpsStart::fixed(0)));
  }
}
BENCHMARK(BM_FarthestPointSampling)->Arg(12)->Arg(36)->Arg(128);

void BM_Attention(benchmark::State& state) {
  const auto keys = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  const zp::Tensor q = random_tensor({16, 32}, rng);
  const zp::Tensor kv = random_tensor({keys, 32}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(zp::ops::attention(q, kv, kv, 4));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Attention)->RangeMultiplier(4)->Range(16, 1024)->Complexity(benchmark::oN);

void BM_CompressVsViews(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  std::mt19937_64 rng(3);
  std::vector<zp::ViewFeature> feats;
  for (int i = 0; i < k; ++i) feats.push_back({4, 4, 32, random_tensor({16, 32}, rng)});
  const auto cams = zp::make_trajectory(zp::TrajectoryKind::kArc, k, 5.76, Eigen::Vector3d::Zero());
  const auto d = zp::pairwise_distances(cams);
  const auto part = zp::assign_supports(d, zp::select_anchors_fps(d, 6, zp::FpsStart::fixed(0)));
  const auto params = zp::init_params(32, 2, 4, 0);
  for (auto _ : state) benchmark::DoNotOptimize(zp::compress(feats, part, params));
  state.SetComplexityN(k);
}
BENCHMARK(BM_CompressVsViews)->DenseRange(8, 36, 4)->Complexity(benchmark::oN);

void BM_Render(benchmark::State& state) {
  const auto scene = zp::make_scene(static_cast<int>(state.range(0)), 4);
  const auto cams = zp::make_trajectory(zp::TrajectoryKind::kArc, 1, 1.0, Eigen::Vector3d::Zero());
  for (auto _ : state) {
    benchmark::DoNotOptimize(zp::render(scene.blobs, cams[0], 32, 32, scene.background));
  }
}
BENCHMARK(BM_Render)->Arg(6)->Arg(96)->Arg(384);

void BM_EvaluateForward(benchmark::State& state) {
  zp::PipelineConfig cfg;
  cfg.k_views = static_cast<int>(state.range(0));
  cfg.eval_scenes = 1;
  cfg.fusion = state.range(1) ? zp::FusionMode::kDefault : zp::FusionMode::kNoFusion;
  if (!state.range(1)) cfg.n_anchors = cfg.k_views;
  const zp::Model model = zp::init_model(cfg);
  for (auto _ : state) benchmark::DoNotOptimize(zp::evaluate(model, cfg));
}
BENCHMARK(BM_EvaluateForward)
    ->ArgsProduct({{8, 12, 24, 36}, {0, 1}})
    ->ArgNames({"K", "compressed"})
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
