#include "zpressor/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "zpressor/error.hpp"
#include "zpressor/ops.hpp"

namespace zp::ad {

namespace {

// Unchecked: a non-finite result propagates to the caller.
template <class T>
BasicTensor<T> scalar(double v) {
  BasicTensor<T> t({1});
  t[0] = static_cast<T>(v);
  return t;
}

}  // namespace

template <class T>
Var<T> Tape<T>::leaf(BasicTensor<T> value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
Var<T> Tape<T>::record(BasicTensor<T> value, std::span<const Var<T>> inputs,
                       Backward backward) {
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.tape().requires_grad(in.id())) needs = true;
  }
  nodes_.push_back(Node{std::move(value), {}, needs,
                        needs ? std::move(backward) : Backward{}});
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
void Tape<T>::backward(Var<T> root) {
  Node& r = nodes_.at(root.id());
  if (r.value.numel() != 1) {
    throw ShapeError("backward: root must be a scalar, got " +
                     shape_str(r.value.shape()));
  }
  if (!r.requires_grad) return;
  r.grad = BasicTensor<T>::full(r.value.shape(), T{1});
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(n.grad);
  }
}

template <class T>
const BasicTensor<T>& Tape<T>::grad(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = BasicTensor<T>(n.value.shape());
  return n.grad;
}

template <class T>
BasicTensor<T>& Tape<T>::grad_buffer(const Var<T>& v) {
  Node& n = nodes_.at(v.id());
  if (n.grad.empty()) n.grad = BasicTensor<T>(n.value.shape());
  return n.grad;
}

template <class T>
void Tape<T>::accumulate(const Var<T>& v, const BasicTensor<T>& g) {
  if (!requires_grad(v.id())) return;
  BasicTensor<T>& buf = grad_buffer(v);
  if (buf.numel() != g.numel()) {
    throw ShapeError("accumulate: gradient " + shape_str(g.shape()) +
                     " does not match value " + shape_str(buf.shape()));
  }
  for (std::size_t i = 0; i < g.numel(); ++i) buf[i] += g[i];
}

namespace {

template <class T>
void check_same_tape(const Var<T>& a, const Var<T>& b) {
  if (&a.tape() != &b.tape()) throw InvalidInput("vars belong to different tapes");
}

}  // namespace

template <class T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  check_same_tape(x, weight);
  check_same_tape(x, bias);
  auto& tape = x.tape();
  BasicTensor<T> y = ops::linear(x.value(), weight.value(), bias.value());
  return tape.record(std::move(y), {x, weight, bias},
                     [x, weight, bias](const BasicTensor<T>& gy) {
    auto& tp = x.tape();
    const auto& xv = x.value();
    const auto& wv = weight.value();
    const std::size_t in = wv.dim(1), out = wv.dim(0), rows = xv.rows();
    if (x.requires_grad()) {
      auto& gx = tp.grad_buffer(x);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* g = gy.data() + r * out;
        T* dx = gx.data() + r * in;
        for (std::size_t o = 0; o < out; ++o) {
          const T* wo = wv.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) dx[i] += g[o] * wo[i];
        }
      }
    }
    if (weight.requires_grad()) {
      auto& gw = tp.grad_buffer(weight);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* g = gy.data() + r * out;
        const T* xr = xv.data() + r * in;
        for (std::size_t o = 0; o < out; ++o) {
          T* dw = gw.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) dw[i] += g[o] * xr[i];
        }
      }
    }
    if (bias.requires_grad()) {
      auto& gb = tp.grad_buffer(bias);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < out; ++o) gb[o] += gy[r * out + o];
      }
    }
  });
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> shift, double eps) {
  check_same_tape(x, gain);
  check_same_tape(x, shift);
  std::vector<T> mean, rstd;
  BasicTensor<T> y =
      ops::layer_norm(x.value(), gain.value(), shift.value(), eps, &mean, &rstd);
  return x.tape().record(
      std::move(y), {x, gain, shift},
      [x, gain, shift, mean = std::move(mean),
       rstd = std::move(rstd)](const BasicTensor<T>& gy) {
        auto& tp = x.tape();
        const auto& xv = x.value();
        const auto& g = gain.value();
        const std::size_t d = xv.cols(), rows = xv.rows();
        std::vector<T> xhat(d), dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* xr = xv.data() + r * d;
          const T* gr = gy.data() + r * d;
          T m1 = 0, m2 = 0;
          for (std::size_t i = 0; i < d; ++i) {
            xhat[i] = (xr[i] - mean[r]) * rstd[r];
            dxhat[i] = gr[i] * g[i];
            m1 += dxhat[i];
            m2 += dxhat[i] * xhat[i];
          }
          m1 /= static_cast<T>(d);
          m2 /= static_cast<T>(d);
          if (x.requires_grad()) {
            T* dx = tp.grad_buffer(x).data() + r * d;
            for (std::size_t i = 0; i < d; ++i) {
              dx[i] += rstd[r] * (dxhat[i] - m1 - xhat[i] * m2);
            }
          }
          if (gain.requires_grad()) {
            auto& dg = tp.grad_buffer(gain);
            for (std::size_t i = 0; i < d; ++i) dg[i] += gr[i] * xhat[i];
          }
          if (shift.requires_grad()) {
            auto& db = tp.grad_buffer(shift);
            for (std::size_t i = 0; i < d; ++i) db[i] += gr[i];
          }
        }
      });
}

template <class T>
Var<T> gelu(Var<T> x) {
  return x.tape().record(ops::gelu(x.value()), {x},
                         [x](const BasicTensor<T>& gy) {
    auto& dx = x.tape().grad_buffer(x);
    const auto& xv = x.value();
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      dx[i] += gy[i] * static_cast<T>(ops::gelu_derivative(xv[i]));
    }
  });
}

template <class T>
Var<T> softmax(Var<T> x) {
  auto& tape = x.tape();
  Var<T> out;
  BasicTensor<T> y = ops::softmax(x.value());
  // The closure reads the output value back from the tape.
  const std::size_t out_id = tape.size();
  out = tape.record(std::move(y), {x}, [x, out_id](const BasicTensor<T>& gy) {
    auto& tp = x.tape();
    const auto& yv = tp.value(out_id);
    auto& dx = tp.grad_buffer(x);
    const std::size_t d = yv.cols();
    for (std::size_t r = 0; r < yv.rows(); ++r) {
      T dot = 0;
      for (std::size_t i = 0; i < d; ++i) dot += gy[r * d + i] * yv[r * d + i];
      for (std::size_t i = 0; i < d; ++i) {
        dx[r * d + i] += yv[r * d + i] * (gy[r * d + i] - dot);
      }
    }
  });
  return out;
}

template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, int heads) {
  check_same_tape(q, k);
  check_same_tape(q, v);
  BasicTensor<T> probs;
  BasicTensor<T> y = ops::attention(q.value(), k.value(), v.value(), heads, &probs);
  return q.tape().record(
      std::move(y), {q, k, v},
      [q, k, v, heads, probs = std::move(probs)](const BasicTensor<T>& gy) {
        auto& tp = q.tape();
        const auto& qv = q.value();
        const auto& kv = k.value();
        const auto& vv = v.value();
        const std::size_t d = qv.dim(1), lq = qv.dim(0), lk = kv.dim(0);
        const std::size_t dh = d / static_cast<std::size_t>(heads);
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
        BasicTensor<T> dq({lq, d}), dk({lk, d}), dv({lk, d});
        std::vector<T> dp(lk);
        for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
          const std::size_t off = h * dh;
          for (std::size_t i = 0; i < lq; ++i) {
            const T* p = probs.data() + (h * lq + i) * lk;
            const T* go = gy.data() + i * d + off;
            T dot = 0;
            for (std::size_t j = 0; j < lk; ++j) {
              const T* vj = vv.data() + j * d + off;
              T s = 0;
              for (std::size_t c = 0; c < dh; ++c) s += go[c] * vj[c];
              dp[j] = s;
              dot += s * p[j];
              T* dvj = dv.data() + j * d + off;
              for (std::size_t c = 0; c < dh; ++c) dvj[c] += p[j] * go[c];
            }
            const T* qi = qv.data() + i * d + off;
            T* dqi = dq.data() + i * d + off;
            for (std::size_t j = 0; j < lk; ++j) {
              const T ds = p[j] * (dp[j] - dot) * scale;
              const T* kj = kv.data() + j * d + off;
              T* dkj = dk.data() + j * d + off;
              for (std::size_t c = 0; c < dh; ++c) {
                dqi[c] += ds * kj[c];
                dkj[c] += ds * qi[c];
              }
            }
          }
        }
        tp.accumulate(q, dq);
        tp.accumulate(k, dk);
        tp.accumulate(v, dv);
      });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  check_same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  BasicTensor<T> y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b.value()[i];
  return a.tape().record(std::move(y), {a, b}, [a, b](const BasicTensor<T>& gy) {
    a.tape().accumulate(a, gy);
    a.tape().accumulate(b, gy);
  });
}

template <class T>
Var<T> sum(Var<T> x) {
  T s = 0;
  for (T v : x.value().span()) s += v;
  return x.tape().record(scalar<T>(s), {x},
                         [x](const BasicTensor<T>& gy) {
    auto& dx = x.tape().grad_buffer(x);
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += gy[0];
  });
}

template <class T>
Var<T> scale(Var<T> x, double s) {
  BasicTensor<T> y = x.value();
  for (auto& v : y.span()) v *= static_cast<T>(s);
  return x.tape().record(std::move(y), {x}, [x, s](const BasicTensor<T>& gy) {
    auto& dx = x.tape().grad_buffer(x);
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += gy[i] * static_cast<T>(s);
  });
}

template <class T>
Var<T> weighted_sum(std::span<const Var<T>> xs, std::span<const double> weights) {
  if (xs.empty() || xs.size() != weights.size()) {
    throw ShapeError("weighted_sum: need matching non-empty inputs and weights");
  }
  BasicTensor<T> y(xs[0].shape());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    check_same_tape(xs[0], xs[k]);
    if (xs[k].shape() != y.shape()) throw ShapeError("weighted_sum: shape mismatch");
    for (std::size_t i = 0; i < y.numel(); ++i) {
      y[i] += static_cast<T>(weights[k]) * xs[k].value()[i];
    }
  }
  std::vector<Var<T>> ins(xs.begin(), xs.end());
  std::vector<double> ws(weights.begin(), weights.end());
  return xs[0].tape().record(std::move(y), xs, [ins, ws](const BasicTensor<T>& gy) {
    for (std::size_t k = 0; k < ins.size(); ++k) {
      if (!ins[k].requires_grad()) continue;
      auto& dx = ins[k].tape().grad_buffer(ins[k]);
      for (std::size_t i = 0; i < dx.numel(); ++i) {
        dx[i] += static_cast<T>(ws[k]) * gy[i];
      }
    }
  });
}

template <class T>
Var<T> concat_rows(std::span<const Var<T>> xs) {
  if (xs.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = xs[0].value().cols();
  std::size_t rows = 0;
  for (const auto& x : xs) {
    check_same_tape(xs[0], x);
    if (x.value().rank() != 2 || x.value().cols() != c) {
      throw ShapeError("concat_rows: inputs must be rank 2 with " +
                       std::to_string(c) + " columns");
    }
    rows += x.value().rows();
  }
  BasicTensor<T> y({rows, c});
  std::size_t at = 0;
  for (const auto& x : xs) {
    std::copy(x.value().data(), x.value().data() + x.value().numel(),
              y.data() + at);
    at += x.value().numel();
  }
  std::vector<Var<T>> ins(xs.begin(), xs.end());
  return xs[0].tape().record(std::move(y), xs, [ins](const BasicTensor<T>& gy) {
    std::size_t at = 0;
    for (const auto& x : ins) {
      const std::size_t n = x.value().numel();
      if (x.requires_grad()) {
        auto& dx = x.tape().grad_buffer(x);
        for (std::size_t i = 0; i < n; ++i) dx[i] += gy[at + i];
      }
      at += n;
    }
  });
}

template <class T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t width) {
  const auto& xv = x.value();
  if (xv.rank() != 2 || begin + width > xv.cols() || width == 0) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", +" +
                     std::to_string(width) + ") out of " + shape_str(xv.shape()));
  }
  const std::size_t rows = xv.rows(), c = xv.cols();
  BasicTensor<T> y({rows, width});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < width; ++j) y[r * width + j] = xv[r * c + begin + j];
  }
  return x.tape().record(std::move(y), {x},
                         [x, begin, width](const BasicTensor<T>& gy) {
    auto& dx = x.tape().grad_buffer(x);
    const std::size_t c = dx.cols();
    for (std::size_t r = 0; r < dx.rows(); ++r) {
      for (std::size_t j = 0; j < width; ++j) dx[r * c + begin + j] += gy[r * width + j];
    }
  });
}

template <class T>
Var<T> reparameterize(Var<T> mean, Var<T> logvar, const BasicTensor<T>& noise) {
  check_same_tape(mean, logvar);
  if (mean.shape() != logvar.shape() || noise.numel() != mean.value().numel()) {
    throw ShapeError("reparameterize: mean/logvar/noise shapes disagree");
  }
  BasicTensor<T> y(mean.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) {
    y[i] = mean.value()[i] + std::exp(logvar.value()[i] / 2) * noise[i];
  }
  return mean.tape().record(std::move(y), {mean, logvar},
                            [mean, logvar, noise](const BasicTensor<T>& gy) {
    auto& tp = mean.tape();
    tp.accumulate(mean, gy);
    if (logvar.requires_grad()) {
      auto& dl = tp.grad_buffer(logvar);
      for (std::size_t i = 0; i < dl.numel(); ++i) {
        dl[i] += gy[i] * noise[i] * std::exp(logvar.value()[i] / 2) / 2;
      }
    }
  });
}

template <class T>
Var<T> kl_diag_gaussian(Var<T> mean, Var<T> logvar) {
  check_same_tape(mean, logvar);
  if (mean.shape() != logvar.shape()) {
    throw ShapeError("kl_diag_gaussian: mean " + shape_str(mean.shape()) +
                     " vs logvar " + shape_str(logvar.shape()));
  }
  double kl = 0;
  for (std::size_t i = 0; i < mean.value().numel(); ++i) {
    const double mu = mean.value()[i], lv = logvar.value()[i];
    kl += 0.5 * mu * mu + 0.5 * std::max(0.0, std::expm1(lv) - lv);
  }
  const double inv_rows = 1.0 / static_cast<double>(mean.value().rows());
  return mean.tape().record(scalar<T>(kl * inv_rows), {mean, logvar},
                            [mean, logvar, inv_rows](const BasicTensor<T>& gy) {
    auto& tp = mean.tape();
    const std::size_t n = mean.value().numel();
    const T g = static_cast<T>(gy[0] * inv_rows);
    if (mean.requires_grad()) {
      auto& dm = tp.grad_buffer(mean);
      for (std::size_t i = 0; i < n; ++i) dm[i] += g * mean.value()[i];
    }
    if (logvar.requires_grad()) {
      auto& dl = tp.grad_buffer(logvar);
      for (std::size_t i = 0; i < n; ++i) {
        dl[i] += g * (std::exp(logvar.value()[i]) - T{1}) / 2;
      }
    }
  });
}

template <class T>
Var<T> mse(Var<T> pred, const BasicTensor<T>& target) {
  if (pred.value().numel() != target.numel()) {
    throw ShapeError("mse: pred " + shape_str(pred.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  const std::size_t n = target.numel();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred.value()[i]) - target[i];
    acc += d * d;
  }
  return pred.tape().record(
      scalar<T>(acc / static_cast<double>(n)), {pred},
      [pred, target](const BasicTensor<T>& gy) {
        auto& dp = pred.tape().grad_buffer(pred);
        const std::size_t n = target.numel();
        const T k = gy[0] * T{2} / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) dp[i] += k * (pred.value()[i] - target[i]);
      });
}

#define ZP_INSTANTIATE_AD(T)                                                  \
  template class Tape<T>;                                                     \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                             \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, double);                 \
  template Var<T> gelu(Var<T>);                                               \
  template Var<T> softmax(Var<T>);                                            \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, int);                     \
  template Var<T> add(Var<T>, Var<T>);                                        \
  template Var<T> sum(Var<T>);                                                \
  template Var<T> scale(Var<T>, double);                                      \
  template Var<T> weighted_sum(std::span<const Var<T>>, std::span<const double>); \
  template Var<T> concat_rows(std::span<const Var<T>>);                       \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);               \
  template Var<T> reparameterize(Var<T>, Var<T>, const BasicTensor<T>&);      \
  template Var<T> kl_diag_gaussian(Var<T>, Var<T>);                           \
  template Var<T> mse(Var<T>, const BasicTensor<T>&);

ZP_INSTANTIATE_AD(float)
ZP_INSTANTIATE_AD(double)

#undef ZP_INSTANTIATE_AD

}  // namespace zp::ad
