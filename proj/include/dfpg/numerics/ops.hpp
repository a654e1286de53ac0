#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "dfpg/numerics/tensor.hpp"

namespace dfpg {

/// Softmax over the last axis with max-subtraction.
template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  if (logits.rank() == 0) throw ShapeError("softmax: rank-0 input has no class axis");
  const std::size_t classes = logits.shape().back();
  BasicTensor<T> out(logits.shape());
  const std::size_t rows = logits.size() / classes;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = logits.raw() + r * classes;
    T* o = out.raw() + r * classes;
    const T peak = *std::max_element(in, in + classes);
    T sum = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      o[c] = std::exp(in[c] - peak);
      sum += o[c];
    }
    for (std::size_t c = 0; c < classes; ++c) o[c] /= sum;
  }
  return out;
}

/// Gradient w.r.t. logits given probabilities p and dL/dp, one row.
template <class T>
void softmax_backward_row(std::span<const T> p, std::span<const T> dp, std::span<T> dlogits) {
  T dot = 0;
  for (std::size_t c = 0; c < p.size(); ++c) dot += p[c] * dp[c];
  for (std::size_t c = 0; c < p.size(); ++c) dlogits[c] += p[c] * (dp[c] - dot);
}

template <class T>
T softplus(T x) {
  // log(1 + e^x) without overflow.
  return x > T{0} ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <class T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

/// Inverse of softplus: returns r with softplus(r) == y, y > 0.
template <class T>
T softplus_inverse(T y) {
  return y > T{20} ? y : std::log(std::expm1(y));
}

/// y[n,out] = x[n,in] * w[in,out] + b[out]
template <class T>
BasicTensor<T> affine(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(1);
  if (w.dim(0) != in || b.size() != out) {
    throw ShapeError("affine: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(w.shape()) + " / bias " + shape_str(b.shape()));
  }
  BasicTensor<T> y({n, out});
  for (std::size_t i = 0; i < n; ++i) {
    T* yr = y.raw() + i * out;
    std::copy(b.raw(), b.raw() + out, yr);
    const T* xr = x.raw() + i * in;
    for (std::size_t k = 0; k < in; ++k) {
      const T xv = xr[k];
      const T* wr = w.raw() + k * out;
      for (std::size_t j = 0; j < out; ++j) yr[j] += xv * wr[j];
    }
  }
  return y;
}

/// Accumulates dW, db and (optionally) dx for affine().
template <class T>
void affine_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy,
                     BasicTensor<T>& dw, BasicTensor<T>& db, BasicTensor<T>* dx) {
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    const T* dyr = dy.raw() + i * out;
    const T* xr = x.raw() + i * in;
    for (std::size_t j = 0; j < out; ++j) db[j] += dyr[j];
    for (std::size_t k = 0; k < in; ++k) {
      const T xv = xr[k];
      T* dwr = dw.raw() + k * out;
      const T* wr = w.raw() + k * out;
      T acc = 0;
      for (std::size_t j = 0; j < out; ++j) {
        dwr[j] += xv * dyr[j];
        acc += wr[j] * dyr[j];
      }
      if (dx) (*dx)[i * in + k] += acc;
    }
  }
}

template <class T>
void add_inplace(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  require_shape(src.shape(), dst.shape(), "add_inplace");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <class T>
void scale_inplace(BasicTensor<T>& dst, T factor) {
  for (T& v : dst.data()) v *= factor;
}

}  // namespace dfpg
