#include "zpressor/zpressor.hpp"

#include <cmath>
#include <random>

#include "zpressor/error.hpp"

namespace zp {

void ViewFeature::validate() const {
  if (rows <= 0 || cols <= 0 || channels <= 0) {
    throw InvalidInput("view feature: dimensions must be positive");
  }
  if (data.rank() != 2 || data.dim(0) != tokens() ||
      data.dim(1) != static_cast<std::size_t>(channels)) {
    throw ShapeError("view feature: data " + shape_str(data.shape()) +
                     " does not match grid " + std::to_string(rows) + "x" +
                     std::to_string(cols) + "x" + std::to_string(channels));
  }
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kDefault: return "default";
    case FusionMode::kFuseAnchors: return "fuse_anchors";
    case FusionMode::kNoFusion: return "no_fusion";
  }
  return "default";
}

FusionMode parse_fusion_mode(const std::string& name) {
  if (name == "default") return FusionMode::kDefault;
  if (name == "fuse_anchors") return FusionMode::kFuseAnchors;
  if (name == "no_fusion") return FusionMode::kNoFusion;
  throw ConfigError("unknown fusion mode '" + name + "'");
}

namespace {

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> dist(static_cast<float>(-bound),
                                             static_cast<float>(bound));
  for (auto& v : t.span()) v = dist(rng);
  return t;
}

LinearT<Tensor> fan_in_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {uniform({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng),
          Tensor({out})};
}

LinearT<Tensor> zero_linear(std::size_t in, std::size_t out) {
  return {Tensor({out, in}), Tensor({out})};
}

NormT<Tensor> unit_norm(std::size_t c) {
  return {Tensor::full({c}, 1.0f), Tensor({c})};
}

AttentionT<Tensor> init_attention(std::size_t c, std::mt19937_64& rng) {
  AttentionT<Tensor> a;
  a.norm = unit_norm(c);
  a.query = fan_in_linear(c, c, rng);
  a.key = fan_in_linear(c, c, rng);
  a.value = fan_in_linear(c, c, rng);
  a.output = zero_linear(c, c);
  return a;
}

}  // namespace

ZPressorParams init_params(int channels, int blocks, int heads, std::uint64_t seed) {
  if (channels < 1 || blocks < 1 || heads < 1) {
    throw ConfigError("zpressor: channels, blocks and heads must be positive");
  }
  if (channels % heads != 0) {
    throw ConfigError("zpressor: channels " + std::to_string(channels) +
                      " not divisible by heads " + std::to_string(heads));
  }
  const auto c = static_cast<std::size_t>(channels);
  std::mt19937_64 rng(seed);
  ZPressorParams p;
  p.channels = channels;
  p.heads = heads;
  for (int b = 0; b < blocks; ++b) {
    BlockParams blk;
    blk.cross = init_attention(c, rng);
    blk.self = init_attention(c, rng);
    blk.mlp_norm = unit_norm(c);
    blk.fc1 = fan_in_linear(c, c * kMlpRatio, rng);
    blk.fc2 = zero_linear(c * kMlpRatio, c);
    p.blocks.push_back(std::move(blk));
  }
  p.posterior_head = zero_linear(c, 2 * c);
  for (std::size_t i = c; i < 2 * c; ++i) p.posterior_head.bias[i] = kInitPosteriorLogVar;
  return p;
}

std::vector<archive::Entry> to_archive(const ZPressorParams& p) {
  std::vector<archive::Entry> out;
  visit_params([&](const std::string& name, const Tensor& t) {
    out.push_back({name, t});
  }, p);
  return out;
}

ZPressorParams from_archive(const std::vector<archive::Entry>& entries, int channels,
                            int blocks, int heads) {
  ZPressorParams p = init_params(channels, blocks, heads, 0);
  visit_params([&](const std::string& name, Tensor& t) {
    const Tensor& src = archive::find(entries, name);
    if (src.shape() != t.shape()) {
      throw FormatError("ZPTN: tensor '" + name + "' has shape " +
                        shape_str(src.shape()) + ", expected " + shape_str(t.shape()));
    }
    t = src;
  }, p);
  return p;
}

namespace graph {

template <class T>
ad::Var<T> fuse_block(const BlockT<ad::Var<T>>& p, ad::Var<T> tokens,
                      const BasicTensor<T>& context, int heads, bool self_attention) {
  auto& tape = tokens.tape();
  ad::Var<T> kv = tape.constant(context);
  ad::Var<T> z = tokens;
  {
    ad::Var<T> q = apply(p.cross.norm, z);
    ad::Var<T> a = ad::attention(apply(p.cross.query, q), apply(p.cross.key, kv),
                                 apply(p.cross.value, kv), heads);
    z = ad::add(z, apply(p.cross.output, a));
  }
  if (self_attention) {
    ad::Var<T> n = apply(p.self.norm, z);
    ad::Var<T> a = ad::attention(apply(p.self.query, n), apply(p.self.key, n),
                                 apply(p.self.value, n), heads);
    z = ad::add(z, apply(p.self.output, a));
  }
  {
    ad::Var<T> n = apply(p.mlp_norm, z);
    z = ad::add(z, apply(p.fc2, ad::gelu(apply(p.fc1, n))));
  }
  return z;
}

namespace {

template <class T>
BasicTensor<T> stack_rows(std::span<const BasicTensor<T>> features,
                          std::span<const int> views) {
  const std::size_t t = features[0].dim(0), c = features[0].dim(1);
  BasicTensor<T> out({t * views.size(), c});
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& f = features[static_cast<std::size_t>(views[i])];
    std::copy(f.data(), f.data() + f.numel(), out.data() + i * f.numel());
  }
  return out;
}

}  // namespace

template <class T>
LatentVars<T> compress(const ZPressorParamsT<ad::Var<T>>& params,
                       std::span<const BasicTensor<T>> features,
                       const AnchorPartition& partition, FusionMode mode,
                       Ablation ablation, SampleOptions sampling) {
  partition.validate();
  if (features.size() != static_cast<std::size_t>(partition.k)) {
    throw InvalidInput("compress: " + std::to_string(features.size()) +
                       " features for a partition over " + std::to_string(partition.k) +
                       " views");
  }
  if (params.blocks.empty()) throw ConfigError("compress: no blocks");
  const Shape token_shape = features[0].shape();
  if (token_shape.size() != 2 ||
      token_shape[1] != static_cast<std::size_t>(params.channels)) {
    throw ShapeError("compress: features " + shape_str(token_shape) +
                     " do not match " + std::to_string(params.channels) + " channels");
  }
  for (const auto& f : features) {
    if (f.shape() != token_shape) throw ShapeError("compress: views differ in shape");
  }
  auto& tape = params.posterior_head.weight.tape();
  const std::size_t c = token_shape[1];
  const std::size_t n_blocks = ablation.single_block ? 1 : params.blocks.size();

  std::vector<ad::Var<T>> fused;
  for (std::size_t i = 0; i < partition.anchors.size(); ++i) {
    const int anchor = partition.anchors[i];
    ad::Var<T> z = tape.constant(features[static_cast<std::size_t>(anchor)]);
    if (mode != FusionMode::kNoFusion) {
      const auto& cluster = partition.clusters[i];
      BasicTensor<T> context;
      if (mode == FusionMode::kDefault && !cluster.empty()) {
        context = stack_rows(features, std::span<const int>(cluster));
      } else {
        // Repeated anchor copies attend exactly like a single copy.
        context = features[static_cast<std::size_t>(anchor)];
      }
      for (std::size_t b = 0; b < n_blocks; ++b) {
        z = fuse_block(params.blocks[b], z, context, params.heads,
                       !ablation.no_self_attention);
      }
    }
    fused.push_back(z);
  }

  LatentVars<T> out;
  out.features = ad::concat_rows(std::span<const ad::Var<T>>(fused));
  ad::Var<T> head = apply(params.posterior_head, out.features);
  out.mean = ad::slice_cols(head, 0, c);
  out.logvar = ad::slice_cols(head, c, c);
  if (sampling.train) {
    BasicTensor<T> noise(out.mean.shape());
    std::mt19937_64 rng(sampling.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : noise.span()) v = static_cast<T>(normal(rng));
    out.sample = ad::reparameterize(out.mean, out.logvar, noise);
  } else {
    out.sample = out.mean;
  }
  return out;
}

#define ZP_INSTANTIATE_GRAPH(T)                                                \
  template ad::Var<T> fuse_block(const BlockT<ad::Var<T>>&, ad::Var<T>,        \
                                 const BasicTensor<T>&, int, bool);            \
  template LatentVars<T> compress(const ZPressorParamsT<ad::Var<T>>&,          \
                                  std::span<const BasicTensor<T>>,             \
                                  const AnchorPartition&, FusionMode, Ablation, \
                                  SampleOptions);

ZP_INSTANTIATE_GRAPH(float)
ZP_INSTANTIATE_GRAPH(double)

#undef ZP_INSTANTIATE_GRAPH

}  // namespace graph

namespace {

BlockT<ad::Var<float>> bind_block(ad::Tape<float>& tape, const BlockParams& p) {
  BlockT<ad::Var<float>> out;
  visit_block("block", [&](const std::string&, ad::Var<float>& v, const Tensor& t) {
    v = tape.leaf(t, false);
  }, out, p);
  return out;
}

}  // namespace

Tensor fuse_cluster(const ViewFeature& anchor, std::span<const ViewFeature> supports,
                    const BlockParams& params, int heads, bool self_attention) {
  anchor.validate();
  Tensor context;
  if (supports.empty()) {
    context = anchor.data;
  } else {
    context = Tensor({anchor.tokens() * supports.size(),
                      static_cast<std::size_t>(anchor.channels)});
    std::size_t at = 0;
    for (const auto& s : supports) {
      s.validate();
      if (s.channels != anchor.channels) {
        throw ShapeError("fuse_cluster: support has " + std::to_string(s.channels) +
                         " channels, anchor has " + std::to_string(anchor.channels));
      }
      if (s.rows != anchor.rows || s.cols != anchor.cols) {
        throw ShapeError("fuse_cluster: support grid differs from anchor grid");
      }
      std::copy(s.data.data(), s.data.data() + s.data.numel(), context.data() + at);
      at += s.data.numel();
    }
  }
  if (params.cross.query.weight.cols() != static_cast<std::size_t>(anchor.channels)) {
    throw ShapeError("fuse_cluster: block expects " +
                     std::to_string(params.cross.query.weight.cols()) + " channels");
  }
  ad::Tape<float> tape;
  const auto p = bind_block(tape, params);
  return graph::fuse_block(p, tape.constant(anchor.data), context, heads,
                           self_attention).value();
}

LatentState compress(std::span<const ViewFeature> features,
                     const AnchorPartition& partition, const ZPressorParams& params,
                     FusionMode mode, Ablation ablation, SampleOptions sampling) {
  if (features.size() != static_cast<std::size_t>(partition.k)) {
    throw InvalidInput("compress: feature count does not match partition");
  }
  std::vector<Tensor> tokens;
  tokens.reserve(features.size());
  for (const auto& f : features) {
    f.validate();
    if (f.rows != features[0].rows || f.cols != features[0].cols) {
      throw ShapeError("compress: views have different feature grids");
    }
    tokens.push_back(f.data);
  }
  ad::Tape<float> tape;
  const auto vars = bind(tape, params, false);
  const auto latent = graph::compress<float>(vars, tokens, partition, mode, ablation,
                                             sampling);
  LatentState out;
  out.rows = features[0].rows;
  out.cols = features[0].cols;
  const Shape shape{partition.anchors.size(), features[0].tokens(),
                    static_cast<std::size_t>(params.channels)};
  out.features = latent.features.value().reshaped(shape);
  out.posterior_mean = latent.mean.value().reshaped(shape);
  out.posterior_logvar = latent.logvar.value().reshaped(shape);
  out.sample = latent.sample.value().reshaped(shape);
  return out;
}

}  // namespace zp
