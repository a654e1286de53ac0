#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dfpg/numerics/error.hpp"

namespace dfpg::filter {

inline constexpr double kVarFloor = 1e-6;
/// Component means closer than this are treated as one cluster.
inline constexpr double kMergeGap = 1e-4;

/// Raised when the loss distribution cannot support two components.
class DegenerateMixture : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Two-component 1-D mixture; component 0 has the smaller mean.
struct Gmm2 {
  double weight[2] = {0.5, 0.5};
  double mean[2] = {0.0, 0.0};
  double var[2] = {1.0, 1.0};
};

struct GmmFitOptions {
  int max_iters = 100;
  double tol = 1e-8;  // stop once the log-likelihood gains less than this
};

/**
 * EM fit starting from means at the 25th/75th percentiles, both variances at
 * the pooled variance and equal weights. Requires n >= 8 finite,
 * non-negative values. Throws DegenerateMixture for identical losses.
 * Appends the log-likelihood of every iterate to `trace` when given.
 */
Gmm2 fit_gmm2(std::span<const double> losses, const GmmFitOptions& options = {},
              std::vector<double>* trace = nullptr);

double log_likelihood(const Gmm2& gmm, std::span<const double> xs);

/// True when the fitted components have merged.
bool is_degenerate(const Gmm2& gmm);

/// Posterior of the small-mean component, computed with log-sum-exp.
double credibility(const Gmm2& gmm, double loss);

/// M_k = 1 iff w_k >= tau.
std::vector<std::uint8_t> mask_matrix(std::span<const double> w, double tau);

/// w * onehot(c) + (1 - w) * p, c in 1..C.
std::vector<double> refine_reliable(int class_id, std::span<const double> p, double w);

/// Average of both predictions, sharpened by power 1/delta and renormalised over classes.
std::vector<double> coguess_unreliable(std::span<const double> p_a, std::span<const double> p_b,
                                       double delta);

struct FilterResult {
  std::vector<double> w;
  std::vector<std::uint8_t> mask;
  Gmm2 gmm;
  bool degenerate = false;
};

/// fit + credibility + mask over pooled patch losses. Degenerate fits fall back to w = 1, M = 1.
FilterResult filter_patches(std::span<const double> losses, double tau,
                            const GmmFitOptions& options = {});

}  // namespace dfpg::filter
