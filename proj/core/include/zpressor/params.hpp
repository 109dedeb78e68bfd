#pragma once

#include <string>

#include "zpressor/autograd.hpp"
#include "zpressor/tensor.hpp"

// Parameter structs are templated on their slot type: BasicTensor<T> for
// storage, ad::Var<T> once bound to a tape. visit_* walks any number of
// same-shaped structs in lockstep, passing the canonical name of each slot.
namespace zp {

template <class X>
struct LinearT {
  X weight;  // [out, in]
  X bias;    // [out]
};

template <class X>
struct NormT {
  X gain;
  X shift;
};

template <class F, class... P>
void visit_linear(const std::string& name, F&& f, P&... p) {
  f(name + ".weight", p.weight...);
  f(name + ".bias", p.bias...);
}

template <class F, class... P>
void visit_norm(const std::string& name, F&& f, P&... p) {
  f(name + ".gain", p.gain...);
  f(name + ".shift", p.shift...);
}

template <class T>
LinearT<ad::Var<T>> bind(ad::Tape<T>& tape, const LinearT<BasicTensor<T>>& p,
                         bool requires_grad) {
  return {tape.leaf(p.weight, requires_grad), tape.leaf(p.bias, requires_grad)};
}

template <class T>
ad::Var<T> apply(const LinearT<ad::Var<T>>& p, ad::Var<T> x) {
  return ad::linear(x, p.weight, p.bias);
}

template <class T>
ad::Var<T> apply(const NormT<ad::Var<T>>& p, ad::Var<T> x) {
  return ad::layer_norm(x, p.gain, p.shift);
}

}  // namespace zp
