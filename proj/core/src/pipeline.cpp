#include "zpressor/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "dual.hpp"
#include "zpressor/archive.hpp"
#include "zpressor/splat.hpp"

namespace zp {

std::uint64_t stream_seed(std::uint64_t base, std::uint64_t index) {
  // splitmix64 finalizer over the combined key.
  std::uint64_t z = base * 0x9E3779B97F4A7C15ULL + index + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

// Distinct streams derived from one user seed.
constexpr std::uint64_t kSceneStream = 1;
constexpr std::uint64_t kSampleStream = 2;
constexpr std::uint64_t kInitStream = 3;

std::uint64_t derive(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return stream_seed(stream_seed(seed, stream), index);
}

}  // namespace

// ---------------------------------------------------------------------------
// Predictor

PredictorParams init_predictor(int channels, double init_depth, std::uint64_t seed) {
  if (channels < 1) throw ConfigError("predictor: channels must be positive");
  if (!(init_depth > kDepthFloor) || init_depth >= kDepthCeiling) {
    throw ConfigError("predictor: init depth must lie in (0.1, 10)");
  }
  const auto c = static_cast<std::size_t>(channels);
  std::mt19937_64 rng(seed);
  auto uniform = [&](Shape shape, double bound) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<float> dist(static_cast<float>(-bound),
                                               static_cast<float>(bound));
    for (auto& v : t.span()) v = dist(rng);
    return t;
  };
  PredictorParams p;
  p.fc1 = {uniform({2 * c, c}, 1.0 / std::sqrt(static_cast<double>(c))), Tensor({2 * c})};
  p.fc2 = {uniform({kRawOutputs, 2 * c}, 0.1 / std::sqrt(static_cast<double>(2 * c))),
           Tensor({kRawOutputs})};
  auto inv_softplus = [](double y) { return static_cast<float>(std::log(std::expm1(y))); };
  float* b = p.fc2.bias.data();
  b[0] = inv_softplus(init_depth - kDepthFloor);
  for (int a = 3; a < 6; ++a) b[a] = inv_softplus(0.5);
  b[6] = 1.0f;  // identity rotation
  return p;
}

Model init_model(const PipelineConfig& cfg) {
  cfg.validate();
  Model m;
  m.zpressor = init_params(cfg.channels, cfg.blocks, cfg.heads, derive(cfg.seed, kInitStream, 0));
  const double depth = std::hypot(cfg.camera_radius, cfg.camera_elevation);
  m.predictor = init_predictor(cfg.channels, std::clamp(depth, 0.2, 9.9),
                               derive(cfg.seed, kInitStream, 1));
  return m;
}

namespace {

using detail::Dual;
using D14 = Dual<kRawOutputs>;

double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

D14 softplus(const D14& x) { return detail::chain(x, softplus(x.v), sigmoid(x.v)); }
D14 sigmoid(const D14& x) {
  const double s = sigmoid(x.v);
  return detail::chain(x, s, s * (1 - s));
}

template <class S>
void decode(const S* r, const CameraPose& pose, int row, int col, int patch, S* out) {
  using std::tanh;
  using detail::tanh;
  S depth = softplus(r[0]) + kDepthFloor;
  if (detail::value_of(depth) > kDepthCeiling) depth = S(kDepthCeiling);
  const double cell = 0.5 * (patch - 1);
  const S u = (col * patch + cell) + 0.5 * patch * tanh(r[1]);
  const S v = (row * patch + cell) + 0.5 * patch * tanh(r[2]);
  const S ray[3] = {(u - pose.cx) / pose.fx, (v - pose.cy) / pose.fy, S(1.0)};
  for (int a = 0; a < 3; ++a) {
    // mean = center + depth * R^T ray
    S m(pose.center[a]);
    for (int b = 0; b < 3; ++b) m += depth * ray[b] * pose.rotation(b, a);
    out[a] = m;
  }
  for (int a = 0; a < 3; ++a) out[3 + a] = softplus(r[3 + a]) * depth * (patch / pose.fx);

  S q[4] = {r[6], r[7], r[8], r[9]};
  S norm2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
  if (detail::value_of(norm2) < 1e-12) {
    q[0] = S(1.0);
    q[1] = q[2] = q[3] = S(0.0);
  } else {
    using std::sqrt;
    using detail::sqrt;
    const S inv = 1.0 / sqrt(norm2);
    for (auto& x : q) x = x * inv;
  }
  const Eigen::Quaterniond c2w(pose.rotation.transpose());
  const double w = c2w.w(), x = c2w.x(), y = c2w.y(), z = c2w.z();
  out[6] = w * q[0] - x * q[1] - y * q[2] - z * q[3];
  out[7] = w * q[1] + x * q[0] + y * q[3] - z * q[2];
  out[8] = w * q[2] - x * q[3] + y * q[0] + z * q[1];
  out[9] = w * q[3] + x * q[2] - y * q[1] + z * q[0];
  out[10] = sigmoid(r[10]);
  for (int a = 0; a < 3; ++a) out[11 + a] = sigmoid(r[11 + a]);
}

struct TokenSite {
  const CameraPose* pose;
  int row;
  int col;
};

std::vector<TokenSite> token_sites(std::span<const CameraPose> poses, int rows, int cols) {
  std::vector<TokenSite> sites;
  for (const auto& pose : poses) {
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) sites.push_back({&pose, r, c});
    }
  }
  return sites;
}

// raw [M, 14] -> packed primitives [M, 14]
template <class T>
ad::Var<T> decode_graph(ad::Var<T> raw, std::vector<TokenSite> sites, int patch) {
  const auto& rv = raw.value();
  const std::size_t m = rv.rows();
  BasicTensor<T> out({m, splat::kStride});
  std::vector<double> jac(m * kRawOutputs * kRawOutputs);
  for (std::size_t i = 0; i < m; ++i) {
    D14 r[kRawOutputs], o[kRawOutputs];
    for (int k = 0; k < kRawOutputs; ++k) {
      r[k] = D14::variable(static_cast<double>(rv.at(i, k)), k);
    }
    decode(r, *sites[i].pose, sites[i].row, sites[i].col, patch, o);
    for (int k = 0; k < kRawOutputs; ++k) {
      out.at(i, k) = static_cast<T>(o[k].v);
      for (int j = 0; j < kRawOutputs; ++j) {
        jac[(i * kRawOutputs + k) * kRawOutputs + j] = o[k].d[j];
      }
    }
  }
  return raw.tape().record(std::move(out), {raw},
                           [raw, m, jac = std::move(jac)](const BasicTensor<T>& gy) {
    BasicTensor<T> gx({m, static_cast<std::size_t>(kRawOutputs)});
    for (std::size_t i = 0; i < m; ++i) {
      for (int j = 0; j < kRawOutputs; ++j) {
        double acc = 0;
        for (int k = 0; k < kRawOutputs; ++k) {
          acc += static_cast<double>(gy.at(i, k)) * jac[(i * kRawOutputs + k) * kRawOutputs + j];
        }
        gx.at(i, j) = static_cast<T>(acc);
      }
    }
    raw.tape().accumulate(raw, gx);
  });
}

template <class T>
ModelT<ad::Var<T>> bind_model(ad::Tape<T>& tape, const ModelT<BasicTensor<T>>& model,
                              bool requires_grad) {
  ModelT<ad::Var<T>> out;
  out.zpressor = bind(tape, model.zpressor, requires_grad);
  out.predictor.fc1 = bind(tape, model.predictor.fc1, requires_grad);
  out.predictor.fc2 = bind(tape, model.predictor.fc2, requires_grad);
  return out;
}

template <class T>
ad::Var<T> predictor_graph(const PredictorT<ad::Var<T>>& p, ad::Var<T> latent) {
  return apply(p.fc2, ad::gelu(apply(p.fc1, latent)));
}

}  // namespace

Tensor cell_embedding(int rows, int cols, int channels) {
  if (rows < 1 || cols < 1 || channels < 4) {
    throw ConfigError("cell_embedding: need a positive grid and >= 4 channels");
  }
  const auto c = static_cast<std::size_t>(channels);
  const std::size_t half = c / 2;
  Tensor out({static_cast<std::size_t>(rows) * cols, c});
  for (int r = 0; r < rows; ++r) {
    for (int col = 0; col < cols; ++col) {
      float* e = out.data() + (static_cast<std::size_t>(r) * cols + col) * c;
      // Rows fill the first half of the channels, columns the second.
      for (std::size_t j = 0; j < c; ++j) {
        const bool is_row = j < half;
        const std::size_t k = is_row ? j : j - half;
        const std::size_t width = is_row ? half : c - half;
        const double pos = is_row ? r : col;
        const double freq = std::pow(0.5, static_cast<double>(k / 2) * 8.0 / static_cast<double>(width));
        e[j] = static_cast<float>(k % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq));
      }
    }
  }
  return out;
}

void decode_token(const double* raw, const CameraPose& pose, int row, int col, int patch,
                  double* packed) {
  decode(raw, pose, row, col, patch, packed);
}

std::vector<GaussianPrimitive> predict_gaussians(const LatentState& z,
                                                 std::span<const CameraPose> anchor_poses,
                                                 int patch, const PredictorParams& params) {
  if (z.anchors() != anchor_poses.size()) {
    throw InvalidInput("predict_gaussians: " + std::to_string(z.anchors()) +
                       " latent anchors but " + std::to_string(anchor_poses.size()) +
                       " poses");
  }
  if (z.anchors() == 0) return {};
  ad::Tape<float> tape;
  PredictorT<ad::Var<float>> p{bind(tape, params.fc1, false), bind(tape, params.fc2, false)};
  const std::size_t c = z.sample.dim(2);
  ad::Var<float> latent = tape.constant(z.sample.reshaped({z.sample.numel() / c, c}));
  ad::Var<float> packed =
      decode_graph(predictor_graph(p, latent), token_sites(anchor_poses, z.rows, z.cols), patch);
  return unpack(packed.value().cast<double>());
}

// ---------------------------------------------------------------------------
// Episodes

Episode make_episode(const PipelineConfig& cfg, std::uint64_t scene_seed, int n_targets) {
  cfg.validate();
  Episode ep;
  ep.scene = make_scene(cfg.n_blobs, scene_seed);
  const CameraRig rig = cfg.rig();
  const Eigen::Vector3d look_at = Eigen::Vector3d::Zero();
  const auto poses =
      make_trajectory(cfg.trajectory, cfg.k_views, cfg.baseline, look_at, rig);
  std::mt19937_64 rng(stream_seed(scene_seed, 17));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (const auto& pose : poses) {
    Image img = render(ep.scene.blobs, pose, cfg.image_size, cfg.image_size,
                       ep.scene.background);
    if (cfg.input_noise > 0) {
      const int g = cfg.noise_grain;
      const int blocks = (cfg.image_size + g - 1) / g;
      std::vector<double> field(static_cast<std::size_t>(blocks) * blocks * 3);
      for (auto& e : field) e = cfg.input_noise * noise(rng);
      for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
          for (int ch = 0; ch < 3; ++ch) {
            const double e = field[(static_cast<std::size_t>(y / g) * blocks + x / g) * 3 + ch];
            float& v = img.at(y, x, ch);
            v = static_cast<float>(std::clamp(v + e, 0.0, 1.0));
          }
        }
      }
    }
    if (cfg.input_dropout > 0) {
      std::bernoulli_distribution drop(cfg.input_dropout);
      const int cells = cfg.image_size / cfg.patch;
      for (int r = 0; r < cells; ++r) {
        for (int c = 0; c < cells; ++c) {
          if (!drop(rng)) continue;
          for (int y = r * cfg.patch; y < (r + 1) * cfg.patch; ++y) {
            for (int x = c * cfg.patch; x < (c + 1) * cfg.patch; ++x) {
              for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = 0.f;
            }
          }
        }
      }
    }
    ep.inputs.push_back({std::move(img), pose});
  }
  const double half = 0.5 * cfg.baseline;
  const double spacing = cfg.k_views > 1 ? cfg.baseline / (cfg.k_views - 1) : cfg.baseline;
  std::uniform_real_distribution<double> where(-half, half);
  for (int t = 0; t < n_targets; ++t) {
    double s = where(rng);
    // Keep clear of the input positions.
    while (true) {
      const double rel = cfg.k_views > 1 ? (s + half) / spacing : s / spacing;
      if (std::abs(rel - std::round(rel)) * spacing > 1e-3 * cfg.baseline) break;
      s = where(rng);
    }
    const CameraPose pose = cfg.trajectory == TrajectoryKind::kArc
                                ? arc_camera(s, look_at, rig)
                                : line_camera(s, look_at, rig);
    ep.targets.push_back({render(ep.scene.blobs, pose, cfg.image_size, cfg.image_size,
                                 ep.scene.background),
                          pose});
  }
  return ep;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

AnchorPartition partition_views(std::span<const View> inputs,
                                std::span<const ViewFeature> features,
                                const PipelineConfig& cfg, std::uint64_t seed) {
  std::vector<CameraPose> poses;
  for (const auto& v : inputs) poses.push_back(v.pose);
  const int n = cfg.n_anchors;
  switch (cfg.strategy) {
    case Strategy::kFps: {
      const auto d = pairwise_distances(poses);
      const auto anchors = select_anchors_fps(d, n, FpsStart::seeded(seed));
      return assign_supports(d, anchors, Strategy::kFps);
    }
    case Strategy::kOverlap: {
      const auto anchors = select_anchors_overlap(overlap_matrix(poses), n);
      return assign_supports(pairwise_distances(poses), anchors, Strategy::kOverlap);
    }
    case Strategy::kKMeansPose: {
      std::vector<Eigen::Vector3d> centers;
      for (const auto& p : poses) centers.push_back(p.center);
      return select_anchors_kmeans(centers, n, seed);
    }
    case Strategy::kKMeansFeature: {
      std::vector<std::vector<float>> embeddings;
      for (const auto& f : features) {
        std::vector<float> e(static_cast<std::size_t>(f.channels), 0.f);
        for (std::size_t t = 0; t < f.tokens(); ++t) {
          for (std::size_t c = 0; c < e.size(); ++c) e[c] += f.data.at(t, c);
        }
        for (auto& x : e) x /= static_cast<float>(f.tokens());
        embeddings.push_back(std::move(e));
      }
      return select_anchors_feature(embeddings, n, seed);
    }
  }
  throw ConfigError("unknown strategy");
}

struct EpisodeGraph {
  ad::Var<float> task;
  ad::Var<float> kl;
  ad::Var<float> total;
  std::vector<ad::Var<float>> renders;
  AnchorPartition partition;
  std::size_t n_primitives = 0;
};

EpisodeGraph build_graph(const ModelT<ad::Var<float>>& model,
                         std::span<const View> inputs, std::span<const View> targets,
                         const PipelineConfig& cfg, const Encoder& encoder, bool train,
                         std::uint64_t sample_seed) {
  if (inputs.size() != static_cast<std::size_t>(cfg.k_views)) {
    throw InvalidInput("forward: " + std::to_string(inputs.size()) + " views for k_views=" +
                       std::to_string(cfg.k_views));
  }
  if (targets.empty()) throw InvalidInput("forward: no target views");
  std::vector<ViewFeature> features;
  std::vector<Tensor> tokens;
  for (const auto& v : inputs) {
    features.push_back(encoder(v.image));
    tokens.push_back(features.back().data);
  }
  if (cfg.positional_scale != 0.0) {
    const Tensor pe = cell_embedding(features[0].rows, features[0].cols, cfg.channels);
    const auto w = static_cast<float>(cfg.positional_scale);
    for (auto& t : tokens) {
      for (std::size_t i = 0; i < t.numel(); ++i) t[i] += w * pe[i];
    }
  }
  EpisodeGraph g;
  g.partition = partition_views(inputs, features, cfg, stream_seed(sample_seed, 0));
  const auto latent = graph::compress<float>(model.zpressor, tokens, g.partition, cfg.fusion,
                                             cfg.ablation, {train, stream_seed(sample_seed, 1)});
  std::vector<CameraPose> anchor_poses;
  for (int a : g.partition.anchors) anchor_poses.push_back(inputs[static_cast<std::size_t>(a)].pose);
  ad::Var<float> packed =
      decode_graph(predictor_graph(model.predictor, latent.sample),
                   token_sites(anchor_poses, features[0].rows, features[0].cols), cfg.patch);
  g.n_primitives = packed.value().rows();

  std::vector<ad::Var<float>> losses;
  for (const auto& t : targets) {
    if (t.image.height != cfg.image_size || t.image.width != cfg.image_size) {
      throw ShapeError("forward: target image size differs from image_size");
    }
    ad::Var<float> img =
        splat::render(packed, {t.pose, cfg.image_size, cfg.image_size, kBackground});
    g.renders.push_back(img);
    losses.push_back(ad::mse(img, t.image.tensor()));
  }
  const std::vector<double> w(losses.size(), 1.0 / static_cast<double>(losses.size()));
  g.task = ad::weighted_sum<float>(losses, w);
  g.kl = ad::kl_diag_gaussian(latent.mean, latent.logvar);
  const ad::Var<float> terms[] = {g.task, g.kl};
  const double coeffs[] = {1.0, cfg.beta};
  g.total = ad::weighted_sum<float>(terms, coeffs);
  return g;
}

}  // namespace

ForwardResult forward(std::span<const View> inputs, std::span<const View> targets,
                      const PipelineConfig& cfg, const Model& model, bool train,
                      std::uint64_t sample_seed) {
  cfg.validate();
  const Encoder encoder(cfg.patch, cfg.channels, cfg.encoder_seed);
  ad::Tape<float> tape;
  const auto bound = bind_model(tape, model, false);
  const EpisodeGraph g =
      build_graph(bound, inputs, targets, cfg, encoder, train, sample_seed);
  ForwardResult out;
  for (const auto& r : g.renders) {
    out.renders.push_back(Image::from_tensor(r.value(), cfg.image_size, cfg.image_size));
  }
  out.loss = make_report(g.task.value().item(), g.kl.value().item(), cfg.beta);
  out.partition = g.partition;
  out.n_primitives = g.n_primitives;
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

bool finite(const Tensor& t) { return t.all_finite(); }

void apply_update(Checkpoint& ck, const Model& grads) {
  const auto& cfg = ck.config;
  auto& st = ck.optimizer;
  ++st.updates;
  const auto lr = static_cast<float>(cfg.learning_rate);
  visit_model([&](const std::string& name, Tensor& p, const Tensor& g) {
    if (cfg.optimizer == OptimizerKind::kSgd) {
      if (cfg.momentum == 0.0) {
        for (std::size_t i = 0; i < p.numel(); ++i) p[i] -= lr * g[i];
        return;
      }
      auto [it, fresh] = st.first.try_emplace(name, Tensor(p.shape()));
      Tensor& m = it->second;
      const auto mu = static_cast<float>(cfg.momentum);
      for (std::size_t i = 0; i < p.numel(); ++i) {
        m[i] = mu * m[i] + g[i];
        p[i] -= lr * m[i];
      }
      return;
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    Tensor& m = st.first.try_emplace(name, Tensor(p.shape())).first->second;
    Tensor& v = st.second.try_emplace(name, Tensor(p.shape())).first->second;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.updates));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.updates));
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = static_cast<float>(b1 * m[i] + (1 - b1) * g[i]);
      v[i] = static_cast<float>(b2 * v[i] + (1 - b2) * static_cast<double>(g[i]) * g[i]);
      const double step = cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      p[i] -= static_cast<float>(step);
    }
  }, ck.model, grads);
}

double psnr_from_mse(double mse) {
  return mse < 1e-10 ? kPsnrCap : 10.0 * std::log10(1.0 / mse);
}

}  // namespace

StepResult train_step(Checkpoint& ck, std::span<const Episode> batch,
                      std::span<const std::uint64_t> sample_seeds) {
  if (batch.empty() || batch.size() != sample_seeds.size()) {
    throw InvalidInput("train_step: need one sample seed per episode");
  }
  const PipelineConfig& cfg = ck.config;
  const Encoder encoder(cfg.patch, cfg.channels, cfg.encoder_seed);
  ad::Tape<float> tape;
  const auto bound = bind_model(tape, ck.model, true);
  std::vector<ad::Var<float>> totals;
  double task = 0, kl = 0;
  StepResult out;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const EpisodeGraph g = build_graph(bound, batch[b].inputs, batch[b].targets, cfg,
                                       encoder, true, sample_seeds[b]);
    totals.push_back(g.total);
    task += g.task.value().item();
    kl += g.kl.value().item();
    out.n_primitives = g.n_primitives;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  const std::vector<double> w(totals.size(), inv);
  const ad::Var<float> loss = ad::weighted_sum<float>(totals, w);
  out.loss = make_report(task * inv, kl * inv, cfg.beta);
  const std::string at = "training diverged at step " + std::to_string(ck.step);
  if (!std::isfinite(out.loss.total)) throw TrainingDiverged(at + ": non-finite loss", ck);
  tape.backward(loss);
  Model grads;
  grads.zpressor = empty_like<Tensor>(ck.model.zpressor);
  bool grads_finite = true;
  visit_model([&](const std::string&, Tensor& g, const ad::Var<float>& v) {
    g = v.grad();
    grads_finite = grads_finite && finite(g);
  }, grads, bound);
  if (!grads_finite) throw TrainingDiverged(at + ": non-finite gradient", ck);
  apply_update(ck, grads);
  ++ck.step;
  return out;
}

TrainResult train(const PipelineConfig& cfg, std::optional<Checkpoint> resume,
                  const StepCallback& on_step) {
  cfg.validate();
  TrainResult result{resume ? std::move(*resume) : init_checkpoint(cfg), {}};
  Checkpoint& ck = result.checkpoint;
  ck.config = cfg;
  while (ck.step < cfg.steps) {
    const long long step = ck.step;
    std::vector<Episode> batch;
    std::vector<std::uint64_t> seeds;
    for (int b = 0; b < cfg.batch_scenes; ++b) {
      const auto index = static_cast<std::uint64_t>(step) * cfg.batch_scenes + b;
      batch.push_back(
          make_episode(cfg, derive(cfg.seed, kSceneStream, index), cfg.train_targets));
      seeds.push_back(derive(cfg.seed, kSampleStream, index));
    }
    const StepResult r = train_step(ck, batch, seeds);
    MetricsRow row{step, r.loss.task, r.loss.kl, r.loss.total, psnr_from_mse(r.loss.task),
                   std::nullopt, r.n_primitives};
    result.metrics.push_back(row);
    if (on_step) on_step(row);
  }
  return result;
}

std::string metrics_header() { return "step,task,kl,total,psnr,wallclock_ms,n_primitives"; }

std::string format_row(const MetricsRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.6f,", row.step, row.task, row.kl,
                row.total, row.psnr);
  std::string out = buf;
  if (row.wallclock_ms) {
    std::snprintf(buf, sizeof buf, "%.3f", *row.wallclock_ms);
    out += buf;
  }
  out += "," + std::to_string(row.n_primitives);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalMetrics evaluate(const Model& model, const PipelineConfig& eval_cfg) {
  eval_cfg.validate();
  if (model.zpressor.channels != eval_cfg.channels) {
    throw ConfigError("evaluate: model has " + std::to_string(model.zpressor.channels) +
                      " channels, config " + std::to_string(eval_cfg.channels));
  }
  const Encoder encoder(eval_cfg.patch, eval_cfg.channels, eval_cfg.encoder_seed);
  EvalMetrics out;
  std::vector<double> times;
  for (int s = 0; s < eval_cfg.eval_scenes; ++s) {
    const auto idx = static_cast<std::uint64_t>(s);
    const Episode ep = make_episode(eval_cfg, stream_seed(eval_cfg.eval_seed, idx),
                                    eval_cfg.target_views);
    const auto start = std::chrono::steady_clock::now();
    ad::Tape<float> tape;
    const auto bound = bind_model(tape, model, false);
    const EpisodeGraph g = build_graph(bound, ep.inputs, ep.targets, eval_cfg, encoder,
                                       false, derive(eval_cfg.eval_seed, kSampleStream, idx));
    const auto stop = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    double acc = 0;
    for (std::size_t t = 0; t < ep.targets.size(); ++t) {
      acc += psnr(Image::from_tensor(g.renders[t].value(), eval_cfg.image_size,
                                     eval_cfg.image_size),
                  ep.targets[t].image);
    }
    out.scene_psnr.push_back(acc / static_cast<double>(ep.targets.size()));
    out.mean_task += g.task.value().item();
    out.mean_kl += g.kl.value().item();
    out.n_primitives = g.n_primitives;
  }
  const double n = eval_cfg.eval_scenes;
  out.mean_task /= n;
  out.mean_kl /= n;
  double sum = 0;
  for (double p : out.scene_psnr) sum += p;
  out.mean_psnr = sum / n;
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
  };
  out.median_psnr = median(out.scene_psnr);
  out.median_wallclock_ms = median(times);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

Checkpoint init_checkpoint(const PipelineConfig& cfg) {
  Checkpoint ck;
  ck.model = init_model(cfg);
  ck.config = cfg;
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::vector<archive::Entry> entries;
  visit_model([&](const std::string& name, const Tensor& t) { entries.push_back({name, t}); },
              model);
  for (const auto& [name, t] : optimizer.first) entries.push_back({"optim.first." + name, t});
  for (const auto& [name, t] : optimizer.second) entries.push_back({"optim.second." + name, t});
  archive::save(path, entries);
  nlohmann::json side;
  side["config"] = to_json(config);
  side["step"] = step;
  side["optimizer_updates"] = optimizer.updates;
  // Every random draw is keyed by (seed, step), so this pair is the RNG state.
  side["rng"] = {{"seed", config.seed}, {"next_step", step}};
  std::ofstream out(path.string() + ".json");
  if (!out) throw FormatError("checkpoint: cannot write " + path.string() + ".json");
  out << side.dump(2) << '\n';
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path.string() + ".json");
  if (!in) throw FormatError("checkpoint: missing sidecar " + path.string() + ".json");
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint: bad sidecar: " + std::string(e.what()));
  }
  Checkpoint ck;
  ck.config = pipeline_config_from_json(side.at("config"));
  ck.step = side.at("step").get<long long>();
  ck.optimizer.updates = side.value("optimizer_updates", 0LL);
  const auto entries = archive::load(path);
  ck.model = init_model(ck.config);
  visit_model([&](const std::string& name, Tensor& t) {
    const Tensor& src = archive::find(entries, name);
    if (src.shape() != t.shape()) {
      throw FormatError("checkpoint: tensor '" + name + "' has shape " +
                        shape_str(src.shape()) + ", expected " + shape_str(t.shape()));
    }
    t = src;
  }, ck.model);
  for (const auto& e : entries) {
    for (auto [prefix, dst] : {std::pair{std::string("optim.first."), &ck.optimizer.first},
                               std::pair{std::string("optim.second."), &ck.optimizer.second}}) {
      if (e.name.rfind(prefix, 0) == 0) (*dst)[e.name.substr(prefix.size())] = e.tensor;
    }
  }
  return ck;
}

}  // namespace zp
