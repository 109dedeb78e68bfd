#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "zpressor/error.hpp"
#include "zpressor/geometry.hpp"
#include "zpressor/objective.hpp"
#include "zpressor/params.hpp"
#include "zpressor/scene.hpp"
#include "zpressor/selection.hpp"
#include "zpressor/zpressor.hpp"

namespace zp {

enum class OptimizerKind { kSgd, kAdam };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& name);

struct PipelineConfig {
  // Views and compression.
  int k_views = 12;
  int n_anchors = 6;
  Strategy strategy = Strategy::kFps;
  FusionMode fusion = FusionMode::kDefault;
  Ablation ablation;
  int blocks = 2;
  int heads = 4;
  int channels = 32;
  int patch = 8;
  int image_size = 32;

  // Objective and optimizer.
  double beta = kDefaultBeta;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double momentum = 0.0;
  int steps = 2000;
  int batch_scenes = 1;

  // Seeds: `seed` drives training scenes, parameter init and latent noise;
  // `eval_seed` drives held-out scenes.
  std::uint64_t seed = 0;
  std::uint64_t eval_seed = 1'000'003;
  std::uint64_t encoder_seed = 7;

  // Synthetic testbed.
  TrajectoryKind trajectory = TrajectoryKind::kArc;
  double baseline = 5.76;  // radians of arc, about 330 degrees
  double camera_radius = 3.5;
  double camera_elevation = 0.8;
  int n_blobs = 6;
  double input_noise = 0.0;  // std-dev of additive noise on input views
  int noise_grain = 1;       // noise is constant over grain x grain pixel blocks
  // Probability that a patch-sized cell of an input view is blanked to black.
  double input_dropout = 0.5;
  // Weight of the fixed grid-cell embedding added to every view's tokens.
  double positional_scale = 1.0;
  int train_targets = 2;
  int target_views = 8;  // held-out targets per evaluation scene
  int eval_scenes = 8;

  // Throws ConfigError naming the offending field.
  void validate() const;
  CameraRig rig() const;
  int grid() const { return image_size / patch; }
  int tokens() const { return grid() * grid(); }
};

nlohmann::json to_json(const PipelineConfig& cfg);
// Missing fields keep their defaults; unknown fields raise ConfigError.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

// Per-token head: C -> 2C -> 14 raw outputs, GELU between.
template <class X>
struct PredictorT {
  LinearT<X> fc1;
  LinearT<X> fc2;
};

using PredictorParams = PredictorT<Tensor>;

inline constexpr int kRawOutputs = 14;
inline constexpr double kDepthFloor = 0.1;
inline constexpr double kDepthCeiling = 10.0;

template <class F, class... P>
void visit_predictor(F&& f, P&... p) {
  visit_linear("predictor.fc1", f, p.fc1...);
  visit_linear("predictor.fc2", f, p.fc2...);
}

template <class X>
struct ModelT {
  ZPressorParamsT<X> zpressor;
  PredictorT<X> predictor;
};

using Model = ModelT<Tensor>;

template <class F, class First, class... Rest>
void visit_model(F&& f, First& first, Rest&... rest) {
  visit_params(f, first.zpressor, rest.zpressor...);
  visit_predictor(f, first.predictor, rest.predictor...);
}

// `init_depth` sets the depth the untrained head emits for every token.
PredictorParams init_predictor(int channels, double init_depth, std::uint64_t seed);
Model init_model(const PipelineConfig& cfg);

// Optimizer moments keyed by canonical parameter name.
struct OptimizerState {
  long long updates = 0;
  std::map<std::string, Tensor> first;
  std::map<std::string, Tensor> second;
};

struct Checkpoint {
  Model model;
  PipelineConfig config;
  long long step = 0;
  OptimizerState optimizer;

  // Writes <path> (ZPTN) and <path>.json (config, step, RNG state).
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

Checkpoint init_checkpoint(const PipelineConfig& cfg);

inline const Eigen::Vector3d kBackground = SceneOptions{}.background;

// Fixed 2-D sinusoidal embedding of grid cells, [rows * cols, channels]. Shared
// by all views, so it carries no view identity.
Tensor cell_embedding(int rows, int cols, int channels);

// Maps raw head outputs to packed primitives for one token of one anchor.
// Exposed for tests; row layouts follow splat::kStride.
void decode_token(const double* raw, const CameraPose& pose, int row, int col, int patch,
                  double* packed);

std::vector<GaussianPrimitive> predict_gaussians(const LatentState& z,
                                                 std::span<const CameraPose> anchor_poses,
                                                 int patch, const PredictorParams& params);

struct View {
  Image image;
  CameraPose pose;
};

// One synthetic episode: K input views, target views, and the scene.
struct Episode {
  SceneSpec scene;
  std::vector<View> inputs;
  std::vector<View> targets;
};

// Inputs on the configured trajectory; targets at random positions along the
// same path, never coinciding with an input.
Episode make_episode(const PipelineConfig& cfg, std::uint64_t scene_seed, int n_targets);

struct ForwardResult {
  std::vector<Image> renders;
  LossReport loss;
  AnchorPartition partition;
  std::size_t n_primitives = 0;
};

// `sample_seed` selects the FPS start and the latent noise.
ForwardResult forward(std::span<const View> inputs, std::span<const View> targets,
                      const PipelineConfig& cfg, const Model& model, bool train,
                      std::uint64_t sample_seed);

struct MetricsRow {
  long long step = 0;
  double task = 0;
  double kl = 0;
  double total = 0;
  double psnr = 0;
  std::optional<double> wallclock_ms;
  std::size_t n_primitives = 0;
};

std::string metrics_header();
std::string format_row(const MetricsRow& row);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricsRow> metrics;
};

// Carries the last checkpoint whose loss was finite.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, Checkpoint last_finite)
      : Error(ErrorKind::kTrainingDiverged, what), checkpoint_(std::move(last_finite)) {}
  const Checkpoint& checkpoint() const noexcept { return checkpoint_; }

 private:
  Checkpoint checkpoint_;
};

struct StepResult {
  LossReport loss;
  std::size_t n_primitives = 0;
};

// One optimizer update on `batch` using ck.config, averaging the per-episode
// objectives. Leaves `ck` untouched and throws TrainingDiverged on a
// non-finite loss or gradient.
StepResult train_step(Checkpoint& ck, std::span<const Episode> batch,
                      std::span<const std::uint64_t> sample_seeds);

using StepCallback = std::function<void(const MetricsRow&)>;

// Trains from `resume` (or a fresh init) up to cfg.steps.
TrainResult train(const PipelineConfig& cfg, std::optional<Checkpoint> resume = {},
                  const StepCallback& on_step = {});

struct EvalMetrics {
  double mean_psnr = 0;
  double median_psnr = 0;
  std::vector<double> scene_psnr;
  double mean_task = 0;
  double mean_kl = 0;
  double median_wallclock_ms = 0;
  std::size_t n_primitives = 0;
};

// Held-out evaluation; eval_cfg may change k_views, fusion mode and testbed
// fields relative to training. Scenes come from eval_cfg.eval_seed.
EvalMetrics evaluate(const Model& model, const PipelineConfig& eval_cfg);

// Seed of the i-th scene of a stream.
std::uint64_t stream_seed(std::uint64_t base, std::uint64_t index);

}  // namespace zp
