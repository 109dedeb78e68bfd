#pragma once

#include <cstdint>

#include "zpressor/tensor.hpp"

// Forward kernels of the numerical core. All ops act on the last dimension
// and treat leading dimensions as independent rows.
namespace zp::ops {

template <class T>
struct LinearParams {
  BasicTensor<T> weight;  // [out, in]
  BasicTensor<T> bias;    // [out]

  std::size_t in_features() const { return weight.cols(); }
  std::size_t out_features() const { return weight.rows(); }
};

enum class Activation { kGelu };

inline constexpr double kLayerNormEps = 1e-5;

// y = x W^T + b
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const LinearParams<T>& p) {
  return linear(x, p.weight, p.bias);
}

// Per-row statistics are written to `mean`/`rstd` when non-null (used by the
// backward pass).
template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& shift, double eps = kLayerNormEps,
                          std::vector<T>* mean = nullptr,
                          std::vector<T>* rstd = nullptr);

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x);

// Exact-erf GELU.
template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& x);
double gelu(double x);
double gelu_derivative(double x);

// Multi-head scaled dot-product attention. q: [Lq, d], k/v: [Lk, d]. Head h
// uses columns [h*d/heads, (h+1)*d/heads). If `probs` is non-null it receives
// the attention weights, shape [heads, Lq, Lk].
template <class T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                         const BasicTensor<T>& v, int heads,
                         BasicTensor<T>* probs = nullptr);

// linear -> activation -> linear
template <class T>
BasicTensor<T> mlp(const BasicTensor<T>& x, const LinearParams<T>& p1,
                   const LinearParams<T>& p2,
                   Activation activation = Activation::kGelu);

}  // namespace zp::ops
