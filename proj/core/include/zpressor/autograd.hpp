#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "zpressor/tensor.hpp"

// Tensor-level reverse-mode differentiation. A Tape records each op's output
// together with a closure that pushes the output gradient back into its
// inputs. One tape per evaluation; tapes are not shared across threads.
namespace zp::ad {

template <class T>
class Tape;

template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const BasicTensor<T>& value() const { return tape_->value(id_); }
  const BasicTensor<T>& grad() const { return tape_->grad(id_); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  const Shape& shape() const { return value().shape(); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(const BasicTensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(BasicTensor<T> value, bool requires_grad = true);
  Var<T> constant(BasicTensor<T> value) { return leaf(std::move(value), false); }

  // Records an op output. The backward closure is dropped when no input
  // requires a gradient.
  Var<T> record(BasicTensor<T> value, std::span<const Var<T>> inputs,
                Backward backward);
  Var<T> record(BasicTensor<T> value, std::initializer_list<Var<T>> inputs,
                Backward backward) {
    return record(std::move(value),
                  std::span<const Var<T>>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  // Seeds d(root)/d(root) = 1 and runs every recorded closure in reverse.
  // Root must hold a single element.
  void backward(Var<T> root);

  const BasicTensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  // Zero tensor of the value's shape when no gradient reached the node.
  const BasicTensor<T>& grad(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  // Adds `g` into the gradient of `v` (no-op when `v` needs no gradient).
  void accumulate(const Var<T>& v, const BasicTensor<T>& g);
  // Mutable gradient buffer of `v`, allocated on first use.
  BasicTensor<T>& grad_buffer(const Var<T>& v);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
};

// y = x W^T + b
template <class T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> shift, double eps = 1e-5);
template <class T>
Var<T> gelu(Var<T> x);
template <class T>
Var<T> softmax(Var<T> x);
template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, int heads);
template <class T>
Var<T> add(Var<T> a, Var<T> b);
// Sum of all elements, shape [1].
template <class T>
Var<T> sum(Var<T> x);
// s * x
template <class T>
Var<T> scale(Var<T> x, double s);
// sum_i w_i * x_i over same-shaped inputs.
template <class T>
Var<T> weighted_sum(std::span<const Var<T>> xs, std::span<const double> weights);
// Stacks rank-2 inputs with equal column counts along rows.
template <class T>
Var<T> concat_rows(std::span<const Var<T>> xs);
// Columns [begin, begin + width) of a rank-2 input.
template <class T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t width);
// mean + exp(logvar / 2) * noise, with `noise` a constant.
template <class T>
Var<T> reparameterize(Var<T> mean, Var<T> logvar, const BasicTensor<T>& noise);
// 0.5 * (mean^2 + exp(logvar) - 1 - logvar) summed over the last dimension and
// averaged over rows, shape [1].
template <class T>
Var<T> kl_diag_gaussian(Var<T> mean, Var<T> logvar);
// Mean squared error against a constant target, shape [1].
template <class T>
Var<T> mse(Var<T> pred, const BasicTensor<T>& target);

}  // namespace zp::ad
