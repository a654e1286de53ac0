#pragma once

#include <cmath>
#include <string>

#include "dfpg/numerics/ops.hpp"
#include "dfpg/numerics/rng.hpp"
#include "dfpg/numerics/tensor.hpp"

namespace dfpg::backbone {

/// Affine map from `in` features to `classes` logits.
template <class T>
struct LinearHead {
  BasicTensor<T> w;  // [in, C]
  BasicTensor<T> b;  // [C]

  std::size_t in_dim() const { return w.dim(0); }
  std::size_t classes() const { return w.dim(1); }

  template <class U>
  LinearHead<U> cast() const {
    return {w.template cast<U>(), b.template cast<U>()};
  }
  template <class F>
  void visit(F&& fn) { fn("w", w); fn("b", b); }
  template <class F>
  void visit(F&& fn) const { fn("w", w); fn("b", b); }
};

template <class T>
LinearHead<T> init_head(std::size_t in, std::size_t classes, double stddev, RngStream rng) {
  LinearHead<T> head{BasicTensor<T>({in, classes}), BasicTensor<T>({classes})};
  for (T& v : head.w.data()) v = static_cast<T>(rng.normal() * stddev);
  return head;
}

/// Flattens `features` (any shape) and returns logits [C].
template <class T>
BasicTensor<T> image_head(const LinearHead<T>& head, const BasicTensor<T>& features) {
  if (features.size() != head.in_dim()) {
    throw ShapeError("image_head: " + std::to_string(features.size()) + " features, head expects " +
                     std::to_string(head.in_dim()));
  }
  return affine(features.reshaped({1, features.size()}), head.w, head.b).reshaped({head.classes()});
}

template <class T>
void image_head_backward(const LinearHead<T>& head, const BasicTensor<T>& features,
                         const BasicTensor<T>& d_logits, LinearHead<T>& grads,
                         BasicTensor<T>* d_features) {
  BasicTensor<T> flat_dx;
  if (d_features) flat_dx = BasicTensor<T>({1, features.size()});
  affine_backward(features.reshaped({1, features.size()}), head.w,
                  d_logits.reshaped({1, head.classes()}), grads.w, grads.b,
                  d_features ? &flat_dx : nullptr);
  if (d_features) {
    for (std::size_t i = 0; i < flat_dx.size(); ++i) (*d_features)[i] += flat_dx[i];
  }
}

/// One shared weight matrix applied to every row: [K, in] -> [K, C].
template <class T>
BasicTensor<T> patch_head(const LinearHead<T>& head, const BasicTensor<T>& features) {
  if (features.rank() != 2 || features.dim(1) != head.in_dim()) {
    throw ShapeError("patch_head: features " + shape_str(features.shape()) + " vs head input " +
                     std::to_string(head.in_dim()));
  }
  return affine(features, head.w, head.b);
}

template <class T>
void patch_head_backward(const LinearHead<T>& head, const BasicTensor<T>& features,
                         const BasicTensor<T>& d_logits, LinearHead<T>& grads,
                         BasicTensor<T>* d_features) {
  affine_backward(features, head.w, d_logits, grads.w, grads.b, d_features);
}

}  // namespace dfpg::backbone
