#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "zpressor/archive.hpp"
#include "zpressor/autograd.hpp"
#include "zpressor/params.hpp"
#include "zpressor/selection.hpp"
#include "zpressor/tensor.hpp"

namespace zp {

// Encoded feature grid of one view, flattened to [rows * cols, channels].
struct ViewFeature {
  int rows = 0;
  int cols = 0;
  int channels = 0;
  Tensor data;

  std::size_t tokens() const { return static_cast<std::size_t>(rows) * cols; }
  void validate() const;
};

template <class X>
struct AttentionT {
  NormT<X> norm;
  LinearT<X> query, key, value, output;
};

// One fusion block: cross-attention (anchor queries, support keys/values),
// self-attention, MLP. Each branch is Pre-LN with a residual connection.
template <class X>
struct BlockT {
  AttentionT<X> cross;
  AttentionT<X> self;
  NormT<X> mlp_norm;
  LinearT<X> fc1;  // C -> hidden
  LinearT<X> fc2;  // hidden -> C
};

template <class X>
struct ZPressorParamsT {
  int channels = 0;
  int heads = 0;
  std::vector<BlockT<X>> blocks;
  LinearT<X> posterior_head;  // C -> 2C: [mean | log-variance]
};

using BlockParams = BlockT<Tensor>;
using ZPressorParams = ZPressorParamsT<Tensor>;

inline constexpr int kDefaultBlocks = 6;
inline constexpr int kDefaultHeads = 4;
inline constexpr int kMlpRatio = 4;
inline constexpr float kInitPosteriorLogVar = -6.0f;

template <class F, class... P>
void visit_attention(const std::string& name, F&& f, P&... p) {
  visit_norm(name + ".norm", f, p.norm...);
  visit_linear(name + ".query", f, p.query...);
  visit_linear(name + ".key", f, p.key...);
  visit_linear(name + ".value", f, p.value...);
  visit_linear(name + ".output", f, p.output...);
}

template <class F, class... P>
void visit_block(const std::string& name, F&& f, P&... p) {
  visit_attention(name + ".cross", f, p.cross...);
  visit_attention(name + ".self", f, p.self...);
  visit_norm(name + ".mlp.norm", f, p.mlp_norm...);
  visit_linear(name + ".mlp.fc1", f, p.fc1...);
  visit_linear(name + ".mlp.fc2", f, p.fc2...);
}

// Canonical names: block{i}.{cross|self}.{norm|query|key|value|output}.*,
// block{i}.mlp.{norm|fc1|fc2}.*, posterior.head.*
template <class F, class First, class... Rest>
void visit_params(F&& f, First& first, Rest&... rest) {
  for (std::size_t i = 0; i < first.blocks.size(); ++i) {
    visit_block("block" + std::to_string(i), f, first.blocks[i], rest.blocks[i]...);
  }
  visit_linear("posterior.head", f, first.posterior_head, rest.posterior_head...);
}

template <class Y, class X>
ZPressorParamsT<Y> empty_like(const ZPressorParamsT<X>& p) {
  ZPressorParamsT<Y> out;
  out.channels = p.channels;
  out.heads = p.heads;
  out.blocks.resize(p.blocks.size());
  return out;
}

template <class U, class T>
ZPressorParamsT<BasicTensor<U>> cast_params(const ZPressorParamsT<BasicTensor<T>>& p) {
  auto out = empty_like<BasicTensor<U>>(p);
  visit_params([](const std::string&, auto& dst, const auto& src) {
    dst = src.template cast<U>();
  }, out, p);
  return out;
}

template <class T>
ZPressorParamsT<ad::Var<T>> bind(ad::Tape<T>& tape,
                                 const ZPressorParamsT<BasicTensor<T>>& p,
                                 bool requires_grad) {
  auto out = empty_like<ad::Var<T>>(p);
  visit_params([&](const std::string&, auto& var, const auto& value) {
    var = tape.leaf(value, requires_grad);
  }, out, p);
  return out;
}

// Fan-in uniform init for input projections; every residual-branch output
// projection and the posterior head weight start at zero, so a fresh stack is
// the identity on anchor tokens. Throws ConfigError unless heads divides c.
ZPressorParams init_params(int channels, int blocks, int heads, std::uint64_t seed);

std::vector<archive::Entry> to_archive(const ZPressorParams& p);
ZPressorParams from_archive(const std::vector<archive::Entry>& entries, int channels,
                            int blocks, int heads);

enum class FusionMode { kDefault, kFuseAnchors, kNoFusion };

std::string to_string(FusionMode m);
FusionMode parse_fusion_mode(const std::string& name);

struct Ablation {
  bool single_block = false;
  bool no_self_attention = false;

  friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct SampleOptions {
  bool train = false;
  std::uint64_t seed = 0;
};

// Per-anchor compressed state, each tensor [N, rows * cols, C].
struct LatentState {
  int rows = 0;
  int cols = 0;
  Tensor features;
  Tensor posterior_mean;
  Tensor posterior_logvar;
  Tensor sample;

  std::size_t anchors() const { return features.empty() ? 0 : features.dim(0); }
};

// One block applied to one cluster. Empty `supports` falls back to the
// anchor's own tokens as keys/values.
Tensor fuse_cluster(const ViewFeature& anchor, std::span<const ViewFeature> supports,
                    const BlockParams& params, int heads, bool self_attention = true);

LatentState compress(std::span<const ViewFeature> features,
                     const AnchorPartition& partition, const ZPressorParams& params,
                     FusionMode mode = FusionMode::kDefault, Ablation ablation = {},
                     SampleOptions sampling = {});

// Differentiable building blocks.
namespace graph {

template <class T>
ad::Var<T> fuse_block(const BlockT<ad::Var<T>>& p, ad::Var<T> tokens,
                      const BasicTensor<T>& context, int heads, bool self_attention);

// Latent tensors flattened to [N * rows * cols, C].
template <class T>
struct LatentVars {
  ad::Var<T> features;
  ad::Var<T> mean;
  ad::Var<T> logvar;
  ad::Var<T> sample;
};

// `features[v]` holds view v's tokens, [rows * cols, C].
template <class T>
LatentVars<T> compress(const ZPressorParamsT<ad::Var<T>>& params,
                       std::span<const BasicTensor<T>> features,
                       const AnchorPartition& partition, FusionMode mode,
                       Ablation ablation, SampleOptions sampling);

}  // namespace graph

}  // namespace zp
