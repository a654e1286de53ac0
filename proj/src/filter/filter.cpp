#include "dfpg/filter/filter.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace dfpg::filter {

namespace {

constexpr double kLogDensityFloor = -690.7755278982137;  // log(1e-300)

double log_normal(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

double quantile(std::vector<double> sorted_copy, double q) {
  std::sort(sorted_copy.begin(), sorted_copy.end());
  const double pos = q * double(sorted_copy.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted_copy.size() - 1);
  const double t = pos - double(lo);
  return sorted_copy[lo] * (1 - t) + sorted_copy[hi] * t;
}

double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

void sort_components(Gmm2& g) {
  if (g.mean[1] < g.mean[0]) {
    std::swap(g.weight[0], g.weight[1]);
    std::swap(g.mean[0], g.mean[1]);
    std::swap(g.var[0], g.var[1]);
  }
}

}  // namespace

double log_likelihood(const Gmm2& g, std::span<const double> xs) {
  const double lw0 = std::log(g.weight[0]), lw1 = std::log(g.weight[1]);
  double ll = 0;
  for (double x : xs) ll += log_sum_exp(lw0 + log_normal(x, g.mean[0], g.var[0]), lw1 + log_normal(x, g.mean[1], g.var[1]));
  return ll;
}

Gmm2 fit_gmm2(std::span<const double> losses, const GmmFitOptions& options,
              std::vector<double>* trace) {
  const std::size_t n = losses.size();
  if (n < 8) throw DataError("fit_gmm2: need at least 8 losses, got " + std::to_string(n));
  double sum = 0;
  for (double x : losses) {
    if (!std::isfinite(x) || x < 0) throw NumericError("fit_gmm2: losses must be finite and non-negative");
    sum += x;
  }
  const auto [mn, mx] = std::minmax_element(losses.begin(), losses.end());
  if (*mn == *mx) throw DegenerateMixture("fit_gmm2: all losses identical");

  const double mean = sum / double(n);
  double var = 0;
  for (double x : losses) var += (x - mean) * (x - mean);
  var = std::max(var / double(n), kVarFloor);

  std::vector<double> copy(losses.begin(), losses.end());
  Gmm2 g;
  g.mean[0] = quantile(copy, 0.25);
  g.mean[1] = quantile(copy, 0.75);
  g.var[0] = g.var[1] = var;

  std::vector<double> resp(n);
  double prev = log_likelihood(g, losses);
  if (trace) trace->push_back(prev);
  for (int it = 0; it < options.max_iters; ++it) {
    // E step: responsibility of component 0.
    const double lw0 = std::log(g.weight[0]), lw1 = std::log(g.weight[1]);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = lw0 + log_normal(losses[i], g.mean[0], g.var[0]);
      const double b = lw1 + log_normal(losses[i], g.mean[1], g.var[1]);
      resp[i] = std::exp(a - log_sum_exp(a, b));
    }
    // M step.
    double r0 = 0, r1 = 0, s0 = 0, s1 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      r0 += resp[i];
      r1 += 1 - resp[i];
      s0 += resp[i] * losses[i];
      s1 += (1 - resp[i]) * losses[i];
    }
    if (r0 <= 0 || r1 <= 0) throw DegenerateMixture("fit_gmm2: a component lost all support");
    Gmm2 next;
    next.weight[0] = r0 / double(n);
    next.weight[1] = 1.0 - next.weight[0];
    next.mean[0] = s0 / r0;
    next.mean[1] = s1 / r1;
    double v0 = 0, v1 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d0 = losses[i] - next.mean[0], d1 = losses[i] - next.mean[1];
      v0 += resp[i] * d0 * d0;
      v1 += (1 - resp[i]) * d1 * d1;
    }
    next.var[0] = std::max(v0 / r0, kVarFloor);
    next.var[1] = std::max(v1 / r1, kVarFloor);
    g = next;
    const double ll = log_likelihood(g, losses);
    if (trace) trace->push_back(ll);
    const double gain = ll - prev;
    prev = ll;
    if (gain < options.tol) break;
  }
  sort_components(g);
  return g;
}

bool is_degenerate(const Gmm2& g) { return std::abs(g.mean[1] - g.mean[0]) < kMergeGap; }

double credibility(const Gmm2& g, double loss) {
  // The floor only replaces non-finite terms; clamping two finite tails to
  // the same value would report 0.5 far beyond both means.
  auto term = [&](int c) {
    const double v = std::log(g.weight[c]) + log_normal(loss, g.mean[c], g.var[c]);
    return std::isfinite(v) ? v : kLogDensityFloor;
  };
  const double a = term(0), b = term(1);
  return std::exp(a - log_sum_exp(a, b));
}

std::vector<std::uint8_t> mask_matrix(std::span<const double> w, double tau) {
  std::vector<std::uint8_t> m(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) m[k] = w[k] >= tau ? 1 : 0;
  return m;
}

std::vector<double> refine_reliable(int class_id, std::span<const double> p, double w) {
  if (class_id < 1 || static_cast<std::size_t>(class_id) > p.size()) {
    throw DataError("refine_reliable: class id " + std::to_string(class_id) + " outside 1.." +
                    std::to_string(p.size()));
  }
  double total = 0;
  for (double v : p) total += v;
  if (std::abs(total - 1.0) > 1e-5) throw NumericError("refine_reliable: prediction not normalised");
  std::vector<double> out(p.size());
  for (std::size_t c = 0; c < p.size(); ++c) out[c] = (1 - w) * p[c];
  out[class_id - 1] += w;
  return out;
}

std::vector<double> coguess_unreliable(std::span<const double> p_a, std::span<const double> p_b,
                                       double delta) {
  if (p_a.size() != p_b.size()) throw ShapeError("coguess_unreliable: prediction sizes differ");
  if (!(delta > 0)) throw NumericError("coguess_unreliable: delta must be positive");
  std::vector<double> avg(p_a.size());
  double peak = 0;
  for (std::size_t c = 0; c < avg.size(); ++c) {
    avg[c] = 0.5 * (p_a[c] + p_b[c]);
    peak = std::max(peak, avg[c]);
  }
  // Scaling by the peak before the power leaves the normalised result unchanged.
  double total = 0;
  for (double& v : avg) {
    v = peak > 0 ? std::pow(v / peak, 1.0 / delta) : 0.0;
    total += v;
  }
  for (double& v : avg) v /= total;
  return avg;
}

FilterResult filter_patches(std::span<const double> losses, double tau, const GmmFitOptions& options) {
  FilterResult r;
  try {
    r.gmm = fit_gmm2(losses, options);
    r.degenerate = is_degenerate(r.gmm);
  } catch (const DegenerateMixture&) {
    r.degenerate = true;
  }
  if (r.degenerate) {
    r.w.assign(losses.size(), 1.0);
    r.mask.assign(losses.size(), 1);
    return r;
  }
  r.w.resize(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) r.w[i] = credibility(r.gmm, losses[i]);
  r.mask = mask_matrix(r.w, tau);
  return r;
}

}  // namespace dfpg::filter
