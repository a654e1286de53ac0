#include "dfpg/numerics/adam.hpp"

#include <cmath>

namespace dfpg {

template <class T>
void adam_step(AdamState<T>& state, const ParamList<T>& params, const ParamList<T>& grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_shape(grads[i].tensor->shape(), params[i].tensor->shape(),
                  "adam_step gradient for " + params[i].name);
    if (!grads[i].tensor->all_finite()) {
      throw NumericError("adam_step: non-finite gradient for " + params[i].name);
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.tensor->shape());
      state.second_moment.emplace_back(p.tensor->shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks a different parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_shape(state.first_moment[i].shape(), params[i].tensor->shape(),
                  "adam_step moment for " + params[i].name);
  }

  ++state.step;
  const auto& cfg = state.config;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T correction1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
  const T correction2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
  const T lr = static_cast<T>(cfg.lr);
  const T eps = static_cast<T>(cfg.eps);

  for (std::size_t i = 0; i < params.size(); ++i) {
    BasicTensor<T>& p = *params[i].tensor;
    const BasicTensor<T>& g = *grads[i].tensor;
    BasicTensor<T>& m = state.first_moment[i];
    BasicTensor<T>& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (T{1} - b1) * g[j];
      v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
      const T m_hat = m[j] / correction1;
      const T v_hat = v[j] / correction2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template void adam_step<float>(AdamState<float>&, const ParamList<float>&, const ParamList<float>&);
template void adam_step<double>(AdamState<double>&, const ParamList<double>&,
                                const ParamList<double>&);

}  // namespace dfpg
