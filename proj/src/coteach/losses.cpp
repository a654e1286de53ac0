#include "dfpg/coteach/losses.hpp"

#include <algorithm>
#include <cmath>

#include "dfpg/numerics/ops.hpp"

namespace dfpg::coteach {

double cross_entropy(std::span<const double> p, std::span<const double> target) {
  if (p.size() != target.size()) throw ShapeError("cross_entropy: size mismatch");
  double l = 0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (target[c] != 0) l -= target[c] * std::log(std::max(p[c], 1e-300));
  }
  return l;
}

double mean_squared_error(std::span<const double> p, std::span<const double> target) {
  if (p.size() != target.size()) throw ShapeError("mean_squared_error: size mismatch");
  double s = 0;
  for (std::size_t c = 0; c < p.size(); ++c) s += (p[c] - target[c]) * (p[c] - target[c]);
  return s / double(p.size());
}

double loss_cls(std::span<const double> p_img, int y, const Tensor64& patch_probs,
                const Tensor64& c_hat, std::span<const std::uint8_t> mask, double beta) {
  if (y < 1 || static_cast<std::size_t>(y) > p_img.size()) throw DataError("loss_cls: label out of range");
  std::vector<double> onehot(p_img.size(), 0.0);
  onehot[y - 1] = 1.0;
  double l = cross_entropy(p_img, onehot);
  double sum = 0;
  std::size_t retained = 0;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (!mask[k]) continue;
    sum += cross_entropy(patch_probs.row(k), c_hat.row(k));
    ++retained;
  }
  if (retained) l += beta * sum / double(retained);
  if (!std::isfinite(l)) throw NumericError("loss_cls: non-finite loss");
  return l;
}

double loss_re(const Tensor64& patch_probs, const Tensor64& c_bar, std::span<const std::uint8_t> mask) {
  double sum = 0;
  std::size_t masked = 0;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (mask[k]) continue;
    sum += mean_squared_error(patch_probs.row(k), c_bar.row(k));
    ++masked;
  }
  const double l = masked ? sum / double(masked) : 0.0;
  if (!std::isfinite(l)) throw NumericError("loss_re: non-finite loss");
  return l;
}

double total_loss(double l_cls, double l_re, double gamma) { return l_cls + gamma * l_re; }

double gamma_schedule(int epoch, int total_epochs, double gamma_min, double gamma_max) {
  if (total_epochs < 2) throw ConfigError("gamma_schedule: need at least 2 epochs");
  if (epoch < 0 || epoch >= total_epochs) throw ConfigError("gamma_schedule: epoch out of range");
  if (epoch == total_epochs - 1) return gamma_max;
  return gamma_min + (gamma_max - gamma_min) * double(epoch) / double(total_epochs - 1);
}

namespace {
/// log-softmax of one row, in double.
template <class T>
void log_softmax_row(const T* logits, std::size_t classes, std::vector<double>& out) {
  out.resize(classes);
  double peak = logits[0];
  for (std::size_t c = 1; c < classes; ++c) peak = std::max(peak, double(logits[c]));
  double sum = 0;
  for (std::size_t c = 0; c < classes; ++c) sum += std::exp(double(logits[c]) - peak);
  const double log_z = peak + std::log(sum);
  for (std::size_t c = 0; c < classes; ++c) out[c] = double(logits[c]) - log_z;
}
}  // namespace

template <class T>
double image_ce(const BasicTensor<T>& logits, int y, BasicTensor<T>* d_logits) {
  const std::size_t classes = logits.size();
  if (y < 1 || static_cast<std::size_t>(y) > classes) throw DataError("image_ce: label out of range");
  std::vector<double> lsm;
  log_softmax_row(logits.raw(), classes, lsm);
  if (d_logits) {
    for (std::size_t c = 0; c < classes; ++c) (*d_logits)[c] = static_cast<T>(std::exp(lsm[c]));
    (*d_logits)[y - 1] -= T{1};
  }
  return -lsm[y - 1];
}

template <class T>
LossValue composite_loss(const BasicTensor<T>& image_logits, int y, const BasicTensor<T>* patch_logits,
                         const PatchTargets<T>* targets, double beta, double gamma,
                         BasicTensor<T>* d_image_logits, BasicTensor<T>* d_patch_logits) {
  LossValue v;
  v.image_ce = image_ce(image_logits, y, d_image_logits);
  if (patch_logits && targets) {
    const std::size_t k = patch_logits->dim(0), classes = patch_logits->dim(1);
    require_shape(targets->reliable.shape(), patch_logits->shape(), "composite_loss reliable targets");
    require_shape(targets->unreliable.shape(), patch_logits->shape(), "composite_loss unreliable targets");
    if (targets->mask.size() != k) throw ShapeError("composite_loss: mask length differs from K");
    std::size_t retained = 0;
    for (auto m : targets->mask) retained += m ? 1 : 0;
    const std::size_t masked = k - retained;
    const T ce_scale = retained ? static_cast<T>(beta / double(retained)) : T{0};
    const T re_scale = masked ? static_cast<T>(gamma / double(masked)) : T{0};

    std::vector<double> lsm;
    std::vector<T> p(classes), dp(classes);
    double ce_sum = 0, re_sum = 0;
    for (std::size_t row = 0; row < k; ++row) {
      log_softmax_row(patch_logits->raw() + row * classes, classes, lsm);
      for (std::size_t c = 0; c < classes; ++c) p[c] = static_cast<T>(std::exp(lsm[c]));
      if (targets->mask[row]) {
        const T* t = targets->reliable.raw() + row * classes;
        for (std::size_t c = 0; c < classes; ++c) {
          if (t[c] != T{0}) ce_sum -= double(t[c]) * lsm[c];
        }
        if (d_patch_logits) {
          T t_sum = 0;
          for (std::size_t c = 0; c < classes; ++c) t_sum += t[c];
          for (std::size_t c = 0; c < classes; ++c) {
            d_patch_logits->at(row, c) += ce_scale * (t_sum * p[c] - t[c]);
          }
        }
      } else {
        const T* t = targets->unreliable.raw() + row * classes;
        double se = 0;
        for (std::size_t c = 0; c < classes; ++c) {
          const double diff = double(p[c]) - double(t[c]);
          se += diff * diff;
          dp[c] = re_scale * T{2} * (p[c] - t[c]) / static_cast<T>(classes);
        }
        re_sum += se / double(classes);
        if (d_patch_logits) {
          softmax_backward_row<T>(p, dp, d_patch_logits->row(row));
        }
      }
    }
    v.patch_ce = retained ? ce_sum / double(retained) : 0.0;
    v.re = masked ? re_sum / double(masked) : 0.0;
  }
  v.cls = v.image_ce + beta * v.patch_ce;
  v.total = v.cls + gamma * v.re;
  if (!std::isfinite(v.total)) throw NumericError("composite_loss: non-finite loss");
  return v;
}

template double image_ce(const Tensor&, int, Tensor*);
template double image_ce(const Tensor64&, int, Tensor64*);
template LossValue composite_loss(const Tensor&, int, const Tensor*, const PatchTargets<float>*, double,
                                  double, Tensor*, Tensor*);
template LossValue composite_loss(const Tensor64&, int, const Tensor64*, const PatchTargets<double>*,
                                  double, double, Tensor64*, Tensor64*);

}  // namespace dfpg::coteach
