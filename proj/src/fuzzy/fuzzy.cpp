#include "dfpg/fuzzy/fuzzy.hpp"

#include <algorithm>
#include <cmath>

#include "dfpg/numerics/ops.hpp"

namespace dfpg::fuzzy {

template <class T>
T FuzzyBranchParams<T>::sigma(std::size_t rule, std::size_t a) const {
  return softplus(sigma_raw.at(rule, a)) + static_cast<T>(kSigmaMin);
}

template <class T>
FuzzyBranchParams<T> init_branch(BranchAxis axis, std::size_t rules, std::size_t axis_len,
                                 double h_std, RngStream rng) {
  FuzzyBranchParams<T> b{axis, BasicTensor<T>({rules, axis_len}), BasicTensor<T>({rules, axis_len})};
  for (T& v : b.mu.data()) v = static_cast<T>(rng.normal() * h_std);
  b.sigma_raw.fill(static_cast<T>(softplus_inverse(1.0 - kSigmaMin)));
  return b;
}

namespace {

template <class T>
void check_branch(const BasicTensor<T>& h, const FuzzyBranchParams<T>& branch) {
  if (h.rank() != 2) throw ShapeError("fuzzy branch: H must be [K,d], got " + shape_str(h.shape()));
  require_shape(branch.sigma_raw.shape(), branch.mu.shape(), "fuzzy branch sigma_raw");
  const std::size_t want = branch.axis == BranchAxis::patch ? h.dim(0) : h.dim(1);
  if (branch.axis_len() != want) {
    throw ShapeError("fuzzy branch: parameter axis " + std::to_string(branch.axis_len()) +
                     " does not match H axis " + std::to_string(want));
  }
}

/// Effective sigma^-2 per (rule, axis position).
template <class T>
BasicTensor<T> inverse_sigma_sq(const FuzzyBranchParams<T>& branch) {
  BasicTensor<T> inv(branch.mu.shape());
  for (std::size_t i = 0; i < inv.size(); ++i) {
    const T s = softplus(branch.sigma_raw[i]) + static_cast<T>(kSigmaMin);
    inv[i] = T{1} / (s * s);
  }
  return inv;
}

}  // namespace

template <class T>
BasicTensor<T> membership(const BasicTensor<T>& h, const FuzzyBranchParams<T>& branch) {
  check_branch(h, branch);
  const std::size_t k = h.dim(0), d = h.dim(1), rules = branch.rules();
  const BasicTensor<T> inv = inverse_sigma_sq(branch);
  BasicTensor<T> grades({rules, k, d});
  for (std::size_t m = 0; m < rules; ++m) {
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t a = branch.axis == BranchAxis::patch ? p : j;
        const T diff = h.at(p, j) - branch.mu.at(m, a);
        grades.at(m, p, j) = std::exp(-diff * diff * inv.at(m, a));
      }
    }
  }
  return grades;
}

template <class T>
void membership_backward(const BasicTensor<T>& h, const FuzzyBranchParams<T>& branch,
                         const BasicTensor<T>& d_grades, FuzzyBranchParams<T>& grads,
                         BasicTensor<T>* d_h) {
  check_branch(h, branch);
  const std::size_t k = h.dim(0), d = h.dim(1), rules = branch.rules();
  require_shape(d_grades.shape(), {rules, k, d}, "membership_backward");
  for (std::size_t m = 0; m < rules; ++m) {
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t a = branch.axis == BranchAxis::patch ? p : j;
        const T s = branch.sigma(m, a);
        const T diff = h.at(p, j) - branch.mu.at(m, a);
        const T g = std::exp(-diff * diff / (s * s));
        const T t = d_grades.at(m, p, j) * g * T{2} * diff / (s * s);
        grads.mu.at(m, a) += t;
        grads.sigma_raw.at(m, a) += t * diff / s * sigmoid(branch.sigma_raw.at(m, a));
        if (d_h) d_h->at(p, j) -= t;
      }
    }
  }
}

template <class T>
RuleActivation<T> rule_activation(const BasicTensor<T>& grades, BranchAxis axis) {
  if (grades.rank() != 3) throw ShapeError("rule_activation: grades must be [rules,K,d]");
  const std::size_t rules = grades.dim(0), k = grades.dim(1), d = grades.dim(2);
  const T floor = static_cast<T>(kLogFloor);
  auto log_grade = [&](T g) { return g > T{0} ? std::max(std::log(g), floor) : floor; };
  RuleActivation<T> out;
  if (axis == BranchAxis::patch) {
    out.log_value = BasicTensor<T>({rules, d});
    for (std::size_t m = 0; m < rules; ++m)
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < d; ++j) out.log_value.at(m, j) += log_grade(grades.at(m, p, j));
  } else {
    out.log_value = BasicTensor<T>({k, rules});
    for (std::size_t m = 0; m < rules; ++m)
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < d; ++j) out.log_value.at(p, m) += log_grade(grades.at(m, p, j));
  }
  out.value = out.log_value;
  for (T& v : out.value.data()) v = std::exp(v);
  return out;
}

template <class T>
RuleActivation<T> branch_forward(const BasicTensor<T>& h, const FuzzyBranchParams<T>& branch) {
  check_branch(h, branch);
  const std::size_t k = h.dim(0), d = h.dim(1), rules = branch.rules();
  const BasicTensor<T> inv = inverse_sigma_sq(branch);
  const T floor = static_cast<T>(kLogFloor);
  RuleActivation<T> out;
  if (branch.axis == BranchAxis::patch) {
    out.log_value = BasicTensor<T>({rules, d});
    for (std::size_t m = 0; m < rules; ++m) {
      T* acc = out.log_value.raw() + m * d;
      for (std::size_t p = 0; p < k; ++p) {
        const T mu = branch.mu.at(m, p);
        const T is2 = inv.at(m, p);
        const T* hr = h.raw() + p * d;
        for (std::size_t j = 0; j < d; ++j) {
          const T diff = hr[j] - mu;
          acc[j] += std::max(-diff * diff * is2, floor);
        }
      }
    }
  } else {
    // Rules innermost so the loop vectorises; each sum still runs over j in order.
    std::vector<T> mu_t(d * rules), inv_t(d * rules);
    for (std::size_t m = 0; m < rules; ++m)
      for (std::size_t j = 0; j < d; ++j) {
        mu_t[j * rules + m] = branch.mu.at(m, j);
        inv_t[j * rules + m] = inv.at(m, j);
      }
    out.log_value = BasicTensor<T>({k, rules});
    for (std::size_t p = 0; p < k; ++p) {
      T* acc = out.log_value.raw() + p * rules;
      for (std::size_t j = 0; j < d; ++j) {
        const T hv = h.at(p, j);
        const T* mu = mu_t.data() + j * rules;
        const T* is2 = inv_t.data() + j * rules;
        for (std::size_t m = 0; m < rules; ++m) {
          const T diff = hv - mu[m];
          acc[m] += std::max(-diff * diff * is2[m], floor);
        }
      }
    }
  }
  out.value = out.log_value;
  for (T& v : out.value.data()) v = std::exp(v);
  return out;
}

template <class T>
void branch_backward(const BasicTensor<T>& h, const FuzzyBranchParams<T>& branch,
                     const BasicTensor<T>& d_log_activation, FuzzyBranchParams<T>& grads,
                     BasicTensor<T>* d_h) {
  check_branch(h, branch);
  const std::size_t k = h.dim(0), d = h.dim(1), rules = branch.rules();
  const T floor = static_cast<T>(kLogFloor);
  BasicTensor<T> sig(branch.mu.shape());
  for (std::size_t i = 0; i < sig.size(); ++i) {
    sig[i] = softplus(branch.sigma_raw[i]) + static_cast<T>(kSigmaMin);
  }
  // dL/dsigma accumulated first, chained through softplus at the end.
  BasicTensor<T> d_sigma(branch.mu.shape());

  if (branch.axis == BranchAxis::patch) {
    require_shape(d_log_activation.shape(), {rules, d}, "branch_backward patch");
    std::vector<T> t(d), td(d);
    for (std::size_t m = 0; m < rules; ++m) {
      const T* g = d_log_activation.raw() + m * d;
      for (std::size_t p = 0; p < k; ++p) {
        const T mu = branch.mu.at(m, p);
        const T s = sig.at(m, p);
        const T is2 = T{1} / (s * s);
        const T* hr = h.raw() + p * d;
        T* dhr = d_h ? d_h->raw() + p * d : nullptr;
        for (std::size_t j = 0; j < d; ++j) {
          const T diff = hr[j] - mu;
          const T lg = -diff * diff * is2;
          // No gradient where the floor is active.
          t[j] = lg > floor ? T{2} * diff * is2 * g[j] : T{0};
          td[j] = t[j] * diff;
        }
        T d_mu = 0, d_s = 0;
        for (std::size_t j = 0; j < d; ++j) {
          d_mu += t[j];
          d_s += td[j];
        }
        if (dhr)
          for (std::size_t j = 0; j < d; ++j) dhr[j] -= t[j];
        grads.mu.at(m, p) += d_mu;
        d_sigma.at(m, p) += d_s / s;
      }
    }
  } else {
    require_shape(d_log_activation.shape(), {k, rules}, "branch_backward channel");
    BasicTensor<T> is2(branch.mu.shape()), inv_s(branch.mu.shape());
    for (std::size_t i = 0; i < is2.size(); ++i) {
      inv_s[i] = T{1} / sig[i];
      is2[i] = inv_s[i] * inv_s[i];
    }
    std::vector<T> scratch(d);
    for (std::size_t p = 0; p < k; ++p) {
      const T* hr = h.raw() + p * d;
      T* dh = d_h ? d_h->raw() + p * d : scratch.data();
      for (std::size_t m = 0; m < rules; ++m) {
        const T g = d_log_activation.at(p, m);
        if (g == T{0}) continue;
        const T* mu = branch.mu.raw() + m * d;
        const T* inv = is2.raw() + m * d;
        const T* s_inv = inv_s.raw() + m * d;
        T* gmu = grads.mu.raw() + m * d;
        T* gs = d_sigma.raw() + m * d;
        for (std::size_t j = 0; j < d; ++j) {
          const T diff = hr[j] - mu[j];
          const T lg = -diff * diff * inv[j];
          const T t = lg > floor ? T{2} * diff * inv[j] * g : T{0};
          gmu[j] += t;
          gs[j] += t * diff * s_inv[j];
          dh[j] -= t;
        }
      }
    }
  }
  for (std::size_t i = 0; i < d_sigma.size(); ++i) {
    grads.sigma_raw[i] += d_sigma[i] * sigmoid(branch.sigma_raw[i]);
  }
}

template <class T>
DflParams<T> init_dfl(const DflConfig& config, std::size_t patches, std::size_t embed_dim,
                      std::size_t classes, double h_std, RngStream rng) {
  DflParams<T> p;
  p.config = config;
  p.patch = init_branch<T>(BranchAxis::patch, config.rules_patch, patches, h_std, rng.derive("patch"));
  p.channel =
      init_branch<T>(BranchAxis::channel, config.rules_channel, embed_dim, h_std, rng.derive("chan"));
  const std::size_t image_in = config.rules_patch * embed_dim;
  p.image_head = backbone::init_head<T>(image_in, classes, 0.1 / std::sqrt(double(image_in)),
                                        rng.derive("image_head"));
  p.patch_head = backbone::init_head<T>(config.rules_channel, classes,
                                        0.1 / std::sqrt(double(config.rules_channel)),
                                        rng.derive("patch_head"));
  return p;
}

namespace {
template <class T>
BasicTensor<T> head_features(const RuleActivation<T>& act, Representation repr, std::size_t len) {
  if (repr == Representation::linear) return act.value;
  BasicTensor<T> f = act.log_value;
  scale_inplace(f, T{1} / static_cast<T>(len));
  return f;
}

template <class T>
BasicTensor<T> log_gradient(const RuleActivation<T>& act, Representation repr, std::size_t len,
                            const BasicTensor<T>& d_features) {
  BasicTensor<T> g = d_features;
  if (repr == Representation::linear) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= act.value[i];
  } else {
    scale_inplace(g, T{1} / static_cast<T>(len));
  }
  return g;
}
}  // namespace

template <class T>
DflOutput<T> dfl_forward(const BasicTensor<T>& h, const DflParams<T>& params, DflCache<T>* cache) {
  const std::size_t k = h.dim(0), d = h.dim(1);
  DflCache<T> local;
  DflCache<T>& c = cache ? *cache : local;
  c.f1 = branch_forward(h, params.patch);
  c.f2 = branch_forward(h, params.channel);
  c.f1_features = head_features(c.f1, params.config.f1_representation, k);
  c.f2_features = head_features(c.f2, params.config.f2_representation, d);

  DflOutput<T> out;
  out.patch_logits = backbone::patch_head(params.patch_head, c.f2_features);
  out.image_logits = backbone::image_head(params.image_head, c.f1_features);
  if (params.config.fusion == Fusion::sum_mean) {
    const std::size_t classes = out.image_logits.size();
    const T inv_k = T{1} / static_cast<T>(k);
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t cl = 0; cl < classes; ++cl) out.image_logits[cl] += out.patch_logits.at(p, cl) * inv_k;
  }
  return out;
}

template <class T>
void dfl_backward(const BasicTensor<T>& h, const DflParams<T>& params, const DflCache<T>& cache,
                  const BasicTensor<T>& d_image_logits, const BasicTensor<T>& d_patch_logits,
                  DflParams<T>& grads, BasicTensor<T>* d_h) {
  const std::size_t k = h.dim(0), d = h.dim(1);
  const std::size_t classes = d_image_logits.size();
  BasicTensor<T> d_patch = d_patch_logits;
  if (params.config.fusion == Fusion::sum_mean) {
    const T inv_k = T{1} / static_cast<T>(k);
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t cl = 0; cl < classes; ++cl) d_patch.at(p, cl) += d_image_logits[cl] * inv_k;
  }

  BasicTensor<T> d_f1(cache.f1_features.shape());
  backbone::image_head_backward(params.image_head, cache.f1_features, d_image_logits,
                                grads.image_head, &d_f1);
  BasicTensor<T> d_f2(cache.f2_features.shape());
  backbone::patch_head_backward(params.patch_head, cache.f2_features, d_patch, grads.patch_head, &d_f2);

  branch_backward(h, params.patch, log_gradient(cache.f1, params.config.f1_representation, k, d_f1),
                  grads.patch, d_h);
  branch_backward(h, params.channel,
                  log_gradient(cache.f2, params.config.f2_representation, d, d_f2), grads.channel, d_h);
}

std::string to_string(Fusion f) { return f == Fusion::sum_mean ? "sum_mean" : "image_only"; }
std::string to_string(Representation r) { return r == Representation::mean_log ? "mean_log" : "linear"; }

Fusion parse_fusion(const std::string& s) {
  if (s == "sum_mean") return Fusion::sum_mean;
  if (s == "image_only") return Fusion::image_only;
  throw ConfigError("unknown fusion '" + s + "' (expected sum_mean | image_only)");
}

Representation parse_representation(const std::string& s) {
  if (s == "mean_log") return Representation::mean_log;
  if (s == "linear") return Representation::linear;
  throw ConfigError("unknown representation '" + s + "' (expected mean_log | linear)");
}

#define DFPG_INSTANTIATE(T)                                                                     \
  template struct FuzzyBranchParams<T>;                                                        \
  template FuzzyBranchParams<T> init_branch(BranchAxis, std::size_t, std::size_t, double,     \
                                            RngStream);                                        \
  template BasicTensor<T> membership(const BasicTensor<T>&, const FuzzyBranchParams<T>&);      \
  template void membership_backward(const BasicTensor<T>&, const FuzzyBranchParams<T>&,        \
                                    const BasicTensor<T>&, FuzzyBranchParams<T>&, BasicTensor<T>*); \
  template RuleActivation<T> rule_activation(const BasicTensor<T>&, BranchAxis);               \
  template RuleActivation<T> branch_forward(const BasicTensor<T>&, const FuzzyBranchParams<T>&); \
  template void branch_backward(const BasicTensor<T>&, const FuzzyBranchParams<T>&,            \
                                const BasicTensor<T>&, FuzzyBranchParams<T>&, BasicTensor<T>*); \
  template DflParams<T> init_dfl(const DflConfig&, std::size_t, std::size_t, std::size_t,      \
                                 double, RngStream);                                           \
  template DflOutput<T> dfl_forward(const BasicTensor<T>&, const DflParams<T>&, DflCache<T>*); \
  template void dfl_backward(const BasicTensor<T>&, const DflParams<T>&, const DflCache<T>&,   \
                             const BasicTensor<T>&, const BasicTensor<T>&, DflParams<T>&,      \
                             BasicTensor<T>*);
DFPG_INSTANTIATE(float)
DFPG_INSTANTIATE(double)
#undef DFPG_INSTANTIATE

}  // namespace dfpg::fuzzy
