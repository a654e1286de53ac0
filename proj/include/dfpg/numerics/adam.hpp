#pragma once

#include <cstdint>
#include <vector>

#include "dfpg/numerics/params.hpp"
#include "dfpg/numerics/tensor.hpp"

namespace dfpg {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments are created lazily on the first step and shape-locked afterwards.
template <class T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<BasicTensor<T>> first_moment;
  std::vector<BasicTensor<T>> second_moment;
};

/**
 * One bias-corrected Adam update:
 *   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
 *   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
 * Throws ShapeError on mismatched lists and NumericError on non-finite
 * gradients (parameters are left untouched in that case).
 */
template <class T>
void adam_step(AdamState<T>& state, const ParamList<T>& params, const ParamList<T>& grads);

}  // namespace dfpg
