#include "dfpg/annotator/annotator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <optional>

#include "dfpg/numerics/adam.hpp"
#include "dfpg/numerics/ops.hpp"
#include "dfpg/numerics/params.hpp"
#include "dfpg/numerics/tensor_io.hpp"

namespace dfpg::annotator {

AnnotatorModel<float> init_annotator(const backbone::EncoderDims& dims, int classes, RngStream rng) {
  AnnotatorModel<float> m;
  m.classes = classes;
  m.encoder = backbone::init_encoder<float>(dims, rng.derive("encoder"));
  const std::size_t k = dims.patches(), d = dims.embed_dim, c = static_cast<std::size_t>(classes);
  m.image_head = backbone::init_head<float>(k * d, c, 0.1 / std::sqrt(double(k * d)), rng.derive("image_head"));
  m.patch_head = backbone::init_head<float>(d, c, 0.1 / std::sqrt(double(d)), rng.derive("patch_head"));
  return m;
}

std::string to_string(MixMode m) {
  switch (m) {
    case MixMode::none: return "none";
    case MixMode::acm: return "acm";
    case MixMode::manifold: return "manifold";
  }
  return "?";
}

std::string to_string(PatchPooling p) {
  switch (p) {
    case PatchPooling::inherit: return "inherit";
    case PatchPooling::noisy_or: return "noisy_or";
    case PatchPooling::ordinal_max: return "ordinal_max";
  }
  return "?";
}

PatchPooling parse_patch_pooling(const std::string& s) {
  if (s == "inherit") return PatchPooling::inherit;
  if (s == "noisy_or") return PatchPooling::noisy_or;
  if (s == "ordinal_max") return PatchPooling::ordinal_max;
  throw ConfigError("unknown patch pooling '" + s + "' (expected ordinal_max | noisy_or | inherit)");
}

MixMode parse_mix_mode(const std::string& s) {
  if (s == "none") return MixMode::none;
  if (s == "acm") return MixMode::acm;
  if (s == "manifold") return MixMode::manifold;
  throw ConfigError("unknown mix mode '" + s + "' (expected acm | manifold | none)");
}

AdjacentPairSampler::AdjacentPairSampler(const std::vector<int>& labels) : labels_(labels) {
  int classes = 0;
  for (int y : labels) classes = std::max(classes, y);
  members_.resize(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 1) throw DataError("AdjacentPairSampler: class ids must be >= 1");
    members_[labels[i] - 1].push_back(i);
  }
  for (int a = 1; a < classes; ++a) {
    if (members_[a - 1].empty() || members_[a].empty()) continue;
    pairs_.emplace_back(a, a + 1);
    pairs_.emplace_back(a + 1, a);
  }
  if (pairs_.empty()) throw DataError("AdjacentPairSampler: no two adjacent classes are populated");
}

PairDraw AdjacentPairSampler::draw(RngStream& rng) const {
  const auto [a, b] = pairs_[rng.below(pairs_.size())];
  const auto& ma = members_[a - 1];
  const auto& mb = members_[b - 1];
  const std::size_t i = ma[rng.below(ma.size())];
  const std::size_t j = mb[rng.below(mb.size())];
  return {i, j, a, b};
}

namespace {

template <class T>
MixedSample<T> mix_hidden(const BasicTensor<T>& h_i, const BasicTensor<T>& h_j, int y_i, int y_j,
                          double lambda, int classes) {
  require_shape(h_j.shape(), h_i.shape(), "mix hidden");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw NumericError("mix: lambda outside [0,1]");
  if (y_i < 1 || y_i > classes || y_j < 1 || y_j > classes) throw DataError("mix: label out of range");
  MixedSample<T> s;
  s.h_mix = BasicTensor<T>(h_i.shape());
  const T l = static_cast<T>(lambda), r = static_cast<T>(1.0 - lambda);
  for (std::size_t e = 0; e < h_i.size(); ++e) s.h_mix[e] = l * h_i[e] + r * h_j[e];
  s.y_soft.assign(static_cast<std::size_t>(classes), 0.0);
  s.y_soft[y_i - 1] += lambda;
  s.y_soft[y_j - 1] += 1.0 - lambda;
  return s;
}

/// Soft-target CE of softmax(logits row); accumulates scale * (p * sum(t) - t) into d.
double soft_ce_row(const float* logits, const std::vector<double>& target, float scale, float* d) {
  const std::size_t c = target.size();
  float peak = logits[0];
  for (std::size_t i = 1; i < c; ++i) peak = std::max(peak, logits[i]);
  double z = 0;
  for (std::size_t i = 0; i < c; ++i) z += std::exp(double(logits[i] - peak));
  const double log_z = double(peak) + std::log(z);
  double loss = 0;
  for (std::size_t i = 0; i < c; ++i) {
    const double log_p = double(logits[i]) - log_z;
    if (target[i] != 0) loss -= target[i] * log_p;
    if (d) d[i] += scale * static_cast<float>(std::exp(log_p) - target[i]);
  }
  return loss;
}

struct HeadPass {
  double loss = 0;
  Tensor d_h;
  int argmax = 1;
};

/// Heads on H, loss against `target`, gradients into `grads`; returns dL/dH scaled by `weight`.
HeadPass heads_pass(const AnnotatorModel<float>& model, const Tensor& h, const std::vector<double>& target,
                    double patch_weight, PatchPooling pooling, float weight,
                    AnnotatorModel<float>& grads) {
  HeadPass out;
  const std::size_t k = h.dim(0), c = target.size();
  Tensor img_logits = backbone::image_head(model.image_head, h);
  Tensor patch_logits = backbone::patch_head(model.patch_head, h);
  Tensor d_img({c});
  out.loss = soft_ce_row(img_logits.raw(), target, weight, d_img.raw());
  out.argmax = static_cast<int>(std::max_element(img_logits.raw(), img_logits.raw() + c) - img_logits.raw()) + 1;
  Tensor d_patch({k, c});
  if (pooling == PatchPooling::inherit) {
    const float pw = static_cast<float>(patch_weight / double(k)) * weight;
    double patch_loss = 0;
    for (std::size_t p = 0; p < k; ++p) {
      patch_loss += soft_ce_row(patch_logits.raw() + p * c, target, pw, d_patch.raw() + p * c);
    }
    out.loss += patch_weight * patch_loss / double(k);
  } else {
    out.loss += patch_weight * ordinal_pool_ce(patch_logits, target, static_cast<float>(patch_weight) * weight,
                                           d_patch, pooling == PatchPooling::ordinal_max);
  }
  out.d_h = Tensor(h.shape());
  backbone::image_head_backward(model.image_head, h, d_img, grads.image_head, &out.d_h);
  backbone::patch_head_backward(model.patch_head, h, d_patch, grads.patch_head, &out.d_h);
  return out;
}

}  // namespace

template <class T>
double ordinal_pool_ce(const BasicTensor<T>& patch_logits, const std::vector<double>& target, T scale,
                       BasicTensor<T>& d_patch, bool use_max) {
  constexpr double kEps = 1e-7;
  const std::size_t k = patch_logits.dim(0), c = patch_logits.dim(1);
  std::vector<double> probs(k * c), tail(k * c);  // tail[p, j] = P(patch p >= j+1)
  for (std::size_t p = 0; p < k; ++p) {
    const T* z = patch_logits.raw() + p * c;
    const double peak = *std::max_element(z, z + c);
    double sum = 0;
    for (std::size_t j = 0; j < c; ++j) sum += (probs[p * c + j] = std::exp(double(z[j]) - peak));
    double acc = 0;
    for (std::size_t j = c; j-- > 0;) {
      probs[p * c + j] /= sum;
      acc += probs[p * c + j];
      tail[p * c + j] = std::min(acc, 1.0 - kEps);
    }
  }
  // at_least[j] = P(y >= j+1); at_least[0] = 1, at_least[c] = 0.
  std::vector<double> at_least(c + 1, 0.0), log_none(c, 0.0);
  std::vector<std::size_t> arg(c, 0);
  at_least[0] = 1.0;
  for (std::size_t j = 1; j < c; ++j) {
    if (use_max) {
      for (std::size_t p = 1; p < k; ++p) if (tail[p * c + j] > tail[arg[j] * c + j]) arg[j] = p;
      at_least[j] = tail[arg[j] * c + j];
      continue;
    }
    for (std::size_t p = 0; p < k; ++p) log_none[j] += std::log1p(-tail[p * c + j]);
    at_least[j] = -std::expm1(log_none[j]);
  }
  double loss = 0;
  std::vector<double> d_q(c, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    const double q = std::max(at_least[j] - at_least[j + 1], 1e-12);
    if (target[j] != 0) {
      loss -= target[j] * std::log(q);
      d_q[j] = -target[j] / q;
    }
  }
  // dL/dG_j = dq_j - dq_{j-1}; dG_j/dtail[p,j] = prod_k(1 - tail) / (1 - tail[p,j]).
  std::vector<double> d_tail(k * c, 0.0);
  for (std::size_t j = 1; j < c; ++j) {
    const double d_g = d_q[j] - d_q[j - 1];
    if (d_g == 0) continue;
    if (use_max) {
      d_tail[arg[j] * c + j] = d_g;
      continue;
    }
    const double none = std::exp(log_none[j]);
    for (std::size_t p = 0; p < k; ++p) d_tail[p * c + j] = d_g * none / (1.0 - tail[p * c + j]);
  }
  for (std::size_t p = 0; p < k; ++p) {
    // tail[p, j] sums probs[p, m] for m >= j, so dL/dprob[m] = sum_{j <= m} d_tail[j].
    std::vector<double> d_prob(c, 0.0);
    double acc = 0;
    for (std::size_t m = 0; m < c; ++m) {
      acc += d_tail[p * c + m];
      d_prob[m] = acc;
    }
    double dot = 0;
    for (std::size_t m = 0; m < c; ++m) dot += d_prob[m] * probs[p * c + m];
    for (std::size_t m = 0; m < c; ++m) {
      d_patch.at(p, m) += scale * static_cast<T>(probs[p * c + m] * (d_prob[m] - dot));
    }
  }
  return loss;
}

template double ordinal_pool_ce(const Tensor&, const std::vector<double>&, float, Tensor&, bool);
template double ordinal_pool_ce(const Tensor64&, const std::vector<double>&, double, Tensor64&, bool);

template <class T>
MixedSample<T> acm_mix(const BasicTensor<T>& h_i, const BasicTensor<T>& h_j, int y_i, int y_j,
                       double lambda, int classes) {
  if (std::abs(y_i - y_j) != 1) {
    throw DataError("acm_mix: labels " + std::to_string(y_i) + " and " + std::to_string(y_j) +
                    " are not adjacent");
  }
  return mix_hidden(h_i, h_j, y_i, y_j, lambda, classes);
}

template MixedSample<float> acm_mix(const Tensor&, const Tensor&, int, int, double, int);
template MixedSample<double> acm_mix(const Tensor64&, const Tensor64&, int, int, double, int);

AnnotatorModel<float> train_annotator(const data::Dataset& dataset, const backbone::EncoderDims& dims,
                                      int classes, const AnnotatorConfig& cfg, RngStream rng,
                                      AnnotatorHistory* history) {
  if (dataset.empty()) throw DataError("train_annotator: empty dataset");
  if (cfg.batch_size == 0) throw ConfigError("train_annotator: batch size must be positive");
  if (!(cfg.mix_ratio >= 0.0 && cfg.mix_ratio < 1.0)) throw ConfigError("train_annotator: mix_ratio must be in [0,1)");
  const MixMode mode = cfg.mix_ratio > 0 ? cfg.mix_mode : MixMode::none;
  const std::size_t n_mix =
      mode == MixMode::none ? 0 : static_cast<std::size_t>(std::lround(cfg.mix_ratio * double(cfg.batch_size)));
  const std::size_t n_plain = cfg.batch_size - n_mix;
  if (n_plain == 0) throw ConfigError("train_annotator: mix_ratio leaves no plain samples per batch");

  AnnotatorModel<float> model = init_annotator(dims, classes, rng.derive("init"));
  if (!cfg.patch_context) model.encoder.token_w.fill(0);
  AnnotatorModel<float> grads = zeros_like(model);
  AdamState<float> adam;
  adam.config.lr = cfg.lr;
  const auto params = param_list<float>(model);
  const auto grad_refs = param_list<float>(grads);

  std::vector<int> labels = data::labels_of(dataset);
  std::optional<AdjacentPairSampler> sampler;
  if (mode == MixMode::acm) sampler.emplace(labels);
  RngStream mix_rng = rng.derive("mix");

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream shuffle = rng.derive("shuffle", static_cast<std::uint64_t>(epoch));
    const auto order = shuffle.permutation(dataset.size());
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += n_plain) {
      const std::size_t stop = std::min(order.size(), start + n_plain);
      const std::size_t batch = (stop - start) + n_mix;
      const float weight = 1.0f / static_cast<float>(batch);
      zero_fill(grads);
      double batch_loss = 0;
      for (std::size_t b = start; b < stop; ++b) {
        const auto& s = dataset[order[b]];
        backbone::EncoderCache<float> cache;
        const Tensor h = backbone::encode(s.image, model.encoder, &cache);
        std::vector<double> target(static_cast<std::size_t>(classes), 0.0);
        target[s.label - 1] = 1.0;
        auto pass = heads_pass(model, h, target, cfg.patch_weight, cfg.patch_pooling, weight, grads);
        correct += pass.argmax == s.label ? 1 : 0;
        batch_loss += pass.loss;
        backbone::encode_backward(cache, pass.d_h, model.encoder, grads.encoder);
      }
      for (std::size_t m = 0; m < n_mix; ++m) {
        PairDraw pair;
        if (mode == MixMode::acm) {
          pair = sampler->draw(mix_rng);
        } else {
          pair.i = mix_rng.below(dataset.size());
          pair.j = mix_rng.below(dataset.size());
          pair.y_i = labels[pair.i];
          pair.y_j = labels[pair.j];
        }
        const double lambda = mix_rng.beta(cfg.alpha, cfg.alpha);
        backbone::EncoderCache<float> ci, cj;
        const Tensor hi = backbone::encode(dataset[pair.i].image, model.encoder, &ci);
        const Tensor hj = backbone::encode(dataset[pair.j].image, model.encoder, &cj);
        auto mixed = mode == MixMode::acm ? acm_mix(hi, hj, pair.y_i, pair.y_j, lambda, classes)
                                          : mix_hidden(hi, hj, pair.y_i, pair.y_j, lambda, classes);
        auto pass = heads_pass(model, mixed.h_mix, mixed.y_soft, cfg.patch_weight, cfg.patch_pooling, weight, grads);
        batch_loss += pass.loss;
        Tensor d_hi = pass.d_h, d_hj = pass.d_h;
        scale_inplace(d_hi, static_cast<float>(lambda));
        scale_inplace(d_hj, static_cast<float>(1.0 - lambda));
        backbone::encode_backward(ci, d_hi, model.encoder, grads.encoder);
        backbone::encode_backward(cj, d_hj, model.encoder, grads.encoder);
      }
      batch_loss /= double(batch);
      if (!std::isfinite(batch_loss)) throw NumericError("train_annotator: non-finite loss");
      if (history) history->step_losses.push_back(batch_loss);
      if (!cfg.patch_context) {
        // Token mixing stays off: each row of H sees only its own patch.
        grads.encoder.token_w.fill(0);
        grads.encoder.token_b.fill(0);
      }
      adam_step(adam, params, grad_refs);
    }
    if (history) history->epoch_accuracy.push_back(double(correct) / double(dataset.size()));
  }
  return model;
}

int predict_image(const AnnotatorModel<float>& model, const Tensor& image) {
  const Tensor h = backbone::encode(image, model.encoder);
  const Tensor logits = backbone::image_head(model.image_head, h);
  return static_cast<int>(std::max_element(logits.raw(), logits.raw() + logits.size()) - logits.raw()) + 1;
}

std::vector<int> infer_patch_labels(const AnnotatorModel<float>& model, const Tensor& image) {
  const Tensor h = backbone::encode(image, model.encoder);
  const Tensor logits = backbone::patch_head(model.patch_head, h);
  const std::size_t k = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(k);
  for (std::size_t p = 0; p < k; ++p) {
    const float* row = logits.raw() + p * c;
    // max_element returns the first maximum, i.e. the smaller class on ties.
    out[p] = static_cast<int>(std::max_element(row, row + c) - row) + 1;
  }
  return out;
}

std::vector<PseudoLabelRecord> label_dataset(const AnnotatorModel<float>& model, const data::Dataset& dataset) {
  std::vector<PseudoLabelRecord> out;
  out.reserve(dataset.size());
  for (const auto& s : dataset) {
    PseudoLabelRecord r;
    r.image_id = s.id;
    r.c = infer_patch_labels(model, s.image);
    r.w.assign(r.c.size(), 1.0f);
    r.mask.assign(r.c.size(), 1);
    out.push_back(std::move(r));
  }
  return out;
}

void save_pseudo_labels(const std::filesystem::path& path, const std::vector<PseudoLabelRecord>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os.write("DFPL", 4);
  le::put_u32(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    const std::size_t k = r.c.size();
    if (r.w.size() != k || r.mask.size() != k) {
      throw ShapeError("save_pseudo_labels: record " + r.image_id + " has inconsistent lengths");
    }
    le::put_u32(os, static_cast<std::uint32_t>(r.image_id.size()));
    os.write(r.image_id.data(), static_cast<std::streamsize>(r.image_id.size()));
    le::put_u32(os, static_cast<std::uint32_t>(k));
    for (int c : r.c) {
      if (c < 1 || c > 0xFFFF) throw DataError("save_pseudo_labels: class id out of u16 range");
      le::put_u16(os, static_cast<std::uint16_t>(c));
    }
    for (float w : r.w) le::put_f32(os, w);
    for (auto m : r.mask) le::put_u8(os, m ? 1 : 0);
  }
  if (!os) throw DataError("write failed for " + path.string());
}

std::vector<PseudoLabelRecord> load_pseudo_labels(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::string_view(magic, 4) != "DFPL") {
    throw DataError(path.string() + ": missing DFPL magic");
  }
  const std::uint32_t count = le::get_u32(is);
  std::vector<PseudoLabelRecord> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    PseudoLabelRecord r;
    const std::uint32_t len = le::get_u32(is);
    r.image_id.resize(len);
    if (!is.read(r.image_id.data(), len)) throw DataError(path.string() + ": truncated image id");
    const std::uint32_t k = le::get_u32(is);
    r.c.resize(k);
    r.w.resize(k);
    r.mask.resize(k);
    for (auto& c : r.c) c = le::get_u16(is);
    for (auto& w : r.w) w = le::get_f32(is);
    for (auto& m : r.mask) m = le::get_u8(is);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dfpg::annotator
