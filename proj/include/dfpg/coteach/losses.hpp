#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dfpg/numerics/tensor.hpp"

namespace dfpg::coteach {

/// -sum_c target[c] * log p[c]; p entries floored at 1e-300 before the log.
double cross_entropy(std::span<const double> p, std::span<const double> target);

/// mean_c (p[c] - target[c])^2
double mean_squared_error(std::span<const double> p, std::span<const double> target);

/**
 * CE(p_img, y) + beta / |M| * sum_{k: M_k = 1} CE(patch_probs[k], c_hat[k]).
 * An empty retained set contributes 0. Probability-space reference form.
 */
double loss_cls(std::span<const double> p_img, int y, const Tensor64& patch_probs,
                const Tensor64& c_hat, std::span<const std::uint8_t> mask, double beta);

/// 1 / |1 - M| * sum_{k: M_k = 0} MSE(patch_probs[k], c_bar[k]); 0 when nothing is masked.
double loss_re(const Tensor64& patch_probs, const Tensor64& c_bar, std::span<const std::uint8_t> mask);

double total_loss(double l_cls, double l_re, double gamma);

/// Linear ramp from gamma_min at epoch 0 to gamma_max at epoch total-1.
double gamma_schedule(int epoch, int total_epochs, double gamma_min, double gamma_max);

/// Targets for one image: rows of `reliable` are used where mask == 1, rows of `unreliable` elsewhere.
template <class T>
struct PatchTargets {
  BasicTensor<T> reliable;    // c_hat [K, C]
  BasicTensor<T> unreliable;  // c_bar [K, C]
  std::vector<std::uint8_t> mask;
};

struct LossValue {
  double image_ce = 0;
  double patch_ce = 0;  // mean over retained patches, before beta
  double re = 0;
  double cls = 0;
  double total = 0;
};

/// CE of softmax(logits) against class y (1-based); writes p - onehot(y) into d_logits when given.
template <class T>
double image_ce(const BasicTensor<T>& logits, int y, BasicTensor<T>* d_logits);

/**
 * Training-time L = L_cls + gamma * L_re computed from logits with
 * log-softmax. Gradients w.r.t. both logit tensors are written when the
 * output pointers are non-null; targets are constants. `targets` may be null
 * (image term only).
 */
template <class T>
LossValue composite_loss(const BasicTensor<T>& image_logits, int y, const BasicTensor<T>* patch_logits,
                         const PatchTargets<T>* targets, double beta, double gamma,
                         BasicTensor<T>* d_image_logits, BasicTensor<T>* d_patch_logits);

}  // namespace dfpg::coteach
