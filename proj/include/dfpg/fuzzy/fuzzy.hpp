#pragma once

#include <cstddef>
#include <string>

#include "dfpg/backbone/heads.hpp"
#include "dfpg/numerics/rng.hpp"
#include "dfpg/numerics/tensor.hpp"

namespace dfpg::fuzzy {

inline constexpr double kSigmaMin = 1e-3;
/// Floor applied to every log-grade before summation.
inline constexpr double kLogFloor = -80.0;

/// Which axis of H [K,d] carries the per-rule parameters.
enum class BranchAxis { patch, channel };

/**
 * Gaussian membership parameters for one branch, both [rules, A]:
 * A = K for the patch-wise branch, A = d for the channel-wise branch.
 * Effective sigma = softplus(sigma_raw) + kSigmaMin.
 */
template <class T>
struct FuzzyBranchParams {
  BranchAxis axis = BranchAxis::patch;
  BasicTensor<T> mu;
  BasicTensor<T> sigma_raw;

  std::size_t rules() const { return mu.dim(0); }
  std::size_t axis_len() const { return mu.dim(1); }
  T sigma(std::size_t rule, std::size_t a) const;

  template <class U>
  FuzzyBranchParams<U> cast() const {
    return {axis, mu.template cast<U>(), sigma_raw.template cast<U>()};
  }
  template <class F>
  void visit(F&& fn) { fn("mu", mu); fn("sigma_raw", sigma_raw); }
  template <class F>
  void visit(F&& fn) const { fn("mu", mu); fn("sigma_raw", sigma_raw); }
};

/// mu ~ N(0,1) * h_std, effective sigma = 1.
template <class T>
FuzzyBranchParams<T> init_branch(BranchAxis axis, std::size_t rules, std::size_t axis_len,
                                 double h_std, RngStream rng);

/**
 * grades[m,k,j] = exp(-(H[k,j] - mu[m,a])^2 / sigma[m,a]^2) with a = k for a
 * patch branch and a = j for a channel branch. Divisor is sigma^2 (no 2).
 */
template <class T>
BasicTensor<T> membership(const BasicTensor<T>& h, const FuzzyBranchParams<T>& branch);

/// Accumulates mu/sigma_raw gradients and dL/dH given dL/d(grades).
template <class T>
void membership_backward(const BasicTensor<T>& h, const FuzzyBranchParams<T>& branch,
                         const BasicTensor<T>& d_grades, FuzzyBranchParams<T>& grads,
                         BasicTensor<T>* d_h);

/// Rule activation strengths, log-domain and linear-domain side by side.
template <class T>
struct RuleActivation {
  BasicTensor<T> log_value;  // patch: [rules, d]; channel: [K, rules]
  BasicTensor<T> value;      // exp(log_value)
};

/**
 * AND-rule product of membership grades [rules, K, d]. The patch axis
 * multiplies over K, the channel axis over d. Products are formed by summing
 * max(log g, kLogFloor) and exponentiating.
 */
template <class T>
RuleActivation<T> rule_activation(const BasicTensor<T>& grades, BranchAxis axis);

/// membership + rule_activation fused; never materialises the grade tensor.
template <class T>
RuleActivation<T> branch_forward(const BasicTensor<T>& h, const FuzzyBranchParams<T>& branch);

/// Accumulates mu/sigma_raw gradients and dL/dH given dL/d(log activation).
template <class T>
void branch_backward(const BasicTensor<T>& h, const FuzzyBranchParams<T>& branch,
                     const BasicTensor<T>& d_log_activation, FuzzyBranchParams<T>& grads,
                     BasicTensor<T>* d_h);

enum class Fusion { sum_mean, image_only };
enum class Representation { mean_log, linear };

struct DflConfig {
  std::size_t rules_patch = 256;
  std::size_t rules_channel = 256;
  Fusion fusion = Fusion::sum_mean;
  Representation f1_representation = Representation::mean_log;
  Representation f2_representation = Representation::mean_log;
};

/// Both fuzzy branches plus the two classification heads.
template <class T>
struct DflParams {
  DflConfig config;
  FuzzyBranchParams<T> patch;    // [l1, K]
  FuzzyBranchParams<T> channel;  // [l2, d]
  backbone::LinearHead<T> image_head;  // l1*d -> C
  backbone::LinearHead<T> patch_head;  // l2 -> C

  template <class U>
  DflParams<U> cast() const {
    return {config, patch.template cast<U>(), channel.template cast<U>(),
            image_head.template cast<U>(), patch_head.template cast<U>()};
  }
  template <class F>
  void visit(F&& fn) { visit_fields(*this, fn); }
  template <class F>
  void visit(F&& fn) const { visit_fields(*this, fn); }

 private:
  template <class Self, class F>
  static void visit_fields(Self& s, F& fn) {
    fn("fuzzy.patch.mu", s.patch.mu);
    fn("fuzzy.patch.sigma_raw", s.patch.sigma_raw);
    fn("fuzzy.chan.mu", s.channel.mu);
    fn("fuzzy.chan.sigma_raw", s.channel.sigma_raw);
    fn("head.image.w", s.image_head.w);
    fn("head.image.b", s.image_head.b);
    fn("head.patch.w", s.patch_head.w);
    fn("head.patch.b", s.patch_head.b);
  }
};

template <class T>
DflParams<T> init_dfl(const DflConfig& config, std::size_t patches, std::size_t embed_dim,
                      std::size_t classes, double h_std, RngStream rng);

template <class T>
struct DflCache {
  RuleActivation<T> f1;
  RuleActivation<T> f2;
  BasicTensor<T> f1_features;  // [l1, d] as fed to the image head
  BasicTensor<T> f2_features;  // [K, l2] as fed to the patch head
};

template <class T>
struct DflOutput {
  BasicTensor<T> image_logits;  // [C]
  BasicTensor<T> patch_logits;  // [K, C]
};

/**
 * patch_logits = patch_head(f2 features);
 * image_logits = image_head(flatten(f1 features)) [+ mean_k patch_logits for sum_mean].
 */
template <class T>
DflOutput<T> dfl_forward(const BasicTensor<T>& h, const DflParams<T>& params,
                         DflCache<T>* cache = nullptr);

template <class T>
void dfl_backward(const BasicTensor<T>& h, const DflParams<T>& params, const DflCache<T>& cache,
                  const BasicTensor<T>& d_image_logits, const BasicTensor<T>& d_patch_logits,
                  DflParams<T>& grads, BasicTensor<T>* d_h);

std::string to_string(Fusion f);
std::string to_string(Representation r);
Fusion parse_fusion(const std::string& s);
Representation parse_representation(const std::string& s);

}  // namespace dfpg::fuzzy
