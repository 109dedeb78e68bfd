#include "zpressor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "zpressor/error.hpp"

namespace zp::ops {

template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  if (weight.rank() != 2) throw ShapeError("linear: weight must be rank 2");
  const std::size_t in = weight.dim(1);
  const std::size_t out = weight.dim(0);
  if (x.cols() != in || x.rank() == 0) {
    throw ShapeError("linear: input " + shape_str(x.shape()) +
                     " incompatible with weight " + shape_str(weight.shape()));
  }
  if (bias.numel() != out) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) +
                     " does not match out_features " + std::to_string(out));
  }
  Shape shape = x.shape();
  shape.back() = out;
  BasicTensor<T> y(shape);
  const std::size_t rows = x.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * in;
    T* yr = y.data() + r * out;
    for (std::size_t o = 0; o < out; ++o) {
      const T* wo = weight.data() + o * in;
      T acc = bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wo[i];
      yr[o] = acc;
    }
  }
  return y;
}

template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& shift, double eps,
                          std::vector<T>* mean_out, std::vector<T>* rstd_out) {
  const std::size_t d = x.cols();
  if (d == 0 || x.rank() == 0) throw ShapeError("layer_norm: empty feature dim");
  if (gain.numel() != d || shift.numel() != d) {
    throw ShapeError("layer_norm: gain/shift size does not match feature dim " +
                     std::to_string(d));
  }
  if (!(eps > 0)) throw InvalidInput("layer_norm: eps must be positive");
  const std::size_t rows = x.rows();
  BasicTensor<T> y(x.shape());
  if (mean_out) mean_out->assign(rows, T{0});
  if (rstd_out) rstd_out->assign(rows, T{0});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * d;
    T mu = 0;
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<T>(d);
    const T rstd = T{1} / std::sqrt(var + static_cast<T>(eps));
    T* yr = y.data() + r * d;
    for (std::size_t i = 0; i < d; ++i) {
      yr[i] = (xr[i] - mu) * rstd * gain[i] + shift[i];
    }
    if (mean_out) (*mean_out)[r] = mu;
    if (rstd_out) (*rstd_out)[r] = rstd;
  }
  return y;
}

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x) {
  const std::size_t d = x.cols();
  if (d == 0 || x.rank() == 0) throw ShapeError("softmax: empty feature dim");
  BasicTensor<T> y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T* xr = x.data() + r * d;
    T* yr = y.data() + r * d;
    const T mx = *std::max_element(xr, xr + d);
    T sum = 0;
    for (std::size_t i = 0; i < d; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      sum += yr[i];
    }
    for (std::size_t i = 0; i < d; ++i) yr[i] /= sum;
  }
  return y;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_derivative(double x) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) +
         x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    y[i] = static_cast<T>(gelu(static_cast<double>(x[i])));
  }
  return y;
}

template <class T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                         const BasicTensor<T>& v, int heads,
                         BasicTensor<T>* probs) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw ShapeError("attention: q, k, v must be rank 2");
  }
  const std::size_t d = q.dim(1);
  const std::size_t lq = q.dim(0);
  const std::size_t lk = k.dim(0);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != lk) {
    throw ShapeError("attention: q " + shape_str(q.shape()) + ", k " +
                     shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  if (lk == 0) throw ShapeError("attention: need at least one key");
  if (heads < 1 || d % static_cast<std::size_t>(heads) != 0) {
    throw ShapeError("attention: dim " + std::to_string(d) +
                     " not divisible by heads " + std::to_string(heads));
  }
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  BasicTensor<T> out({lq, d});
  if (probs) *probs = BasicTensor<T>({static_cast<std::size_t>(heads), lq, lk});
  std::vector<T> row(lk);
  for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < lq; ++i) {
      const T* qi = q.data() + i * d + off;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < lk; ++j) {
        const T* kj = k.data() + j * d + off;
        T s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
        row[j] = s * scale;
        mx = std::max(mx, row[j]);
      }
      T sum = 0;
      for (std::size_t j = 0; j < lk; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      T* oi = out.data() + i * d + off;
      for (std::size_t j = 0; j < lk; ++j) {
        const T p = row[j] / sum;
        if (probs) (*probs)[(h * lq + i) * lk + j] = p;
        const T* vj = v.data() + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
      }
    }
  }
  return out;
}

template <class T>
BasicTensor<T> mlp(const BasicTensor<T>& x, const LinearParams<T>& p1,
                   const LinearParams<T>& p2, Activation activation) {
  if (p2.in_features() != p1.out_features() ||
      p2.out_features() != p1.in_features()) {
    throw ShapeError("mlp: layer shapes " + shape_str(p1.weight.shape()) +
                     " and " + shape_str(p2.weight.shape()) + " do not chain");
  }
  BasicTensor<T> hidden = linear(x, p1);
  switch (activation) {
    case Activation::kGelu:
      hidden = gelu(hidden);
      break;
  }
  return linear(hidden, p2);
}

#define ZP_INSTANTIATE_OPS(T)                                                  \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, \
                                 const BasicTensor<T>&);                       \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&,                    \
                                     const BasicTensor<T>&,                    \
                                     const BasicTensor<T>&, double,            \
                                     std::vector<T>*, std::vector<T>*);        \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                      \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                         \
  template BasicTensor<T> attention(const BasicTensor<T>&,                     \
                                    const BasicTensor<T>&,                     \
                                    const BasicTensor<T>&, int,                \
                                    BasicTensor<T>*);                          \
  template BasicTensor<T> mlp(const BasicTensor<T>&, const LinearParams<T>&,   \
                              const LinearParams<T>&, Activation);

ZP_INSTANTIATE_OPS(float)
ZP_INSTANTIATE_OPS(double)

#undef ZP_INSTANTIATE_OPS

}  // namespace zp::ops
