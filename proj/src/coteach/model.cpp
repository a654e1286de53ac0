#include "dfpg/coteach/model.hpp"

#include <cmath>

namespace dfpg::coteach {

std::string to_string(ModelKind kind) { return kind == ModelKind::base ? "base" : "dfl"; }

ModelKind parse_model_kind(const std::string& s) {
  if (s == "base") return ModelKind::base;
  if (s == "dfl") return ModelKind::dfl;
  throw ConfigError("unknown model kind '" + s + "' (expected base | dfl)");
}

DfpgModel<float> init_model(const ModelSpec& spec, const std::vector<const Tensor*>& warmup,
                            RngStream rng) {
  DfpgModel<float> m;
  m.kind = spec.kind;
  m.classes = spec.classes;
  m.encoder = backbone::init_encoder<float>(spec.dims, rng.derive("encoder"));
  const std::size_t k = spec.dims.patches(), d = spec.dims.embed_dim;
  if (spec.kind == ModelKind::base) {
    m.base_head = backbone::init_head<float>(k * d, static_cast<std::size_t>(spec.classes),
                                             0.1 / std::sqrt(double(k * d)), rng.derive("base_head"));
    return m;
  }
  double sum = 0, sq = 0;
  std::size_t count = 0;
  for (const Tensor* img : warmup) {
    const Tensor h = backbone::encode(*img, m.encoder);
    for (float v : h.data()) {
      sum += v;
      sq += double(v) * v;
      ++count;
    }
  }
  double h_std = 1.0;
  if (count > 1) {
    const double mean = sum / double(count);
    h_std = std::sqrt(std::max(sq / double(count) - mean * mean, 1e-12));
  }
  m.dfl = fuzzy::init_dfl<float>(spec.dfl, k, d, static_cast<std::size_t>(spec.classes), h_std,
                                 rng.derive("dfl"));
  return m;
}

template <class T>
ModelOutput<T> forward(const DfpgModel<T>& model, const BasicTensor<T>& image, ForwardCache<T>* cache) {
  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  c.h = backbone::encode(image, model.encoder, cache ? &c.encoder : nullptr);
  ModelOutput<T> out;
  if (model.kind == ModelKind::base) {
    out.image_logits = backbone::image_head(model.base_head, c.h);
    return out;
  }
  auto dfl = fuzzy::dfl_forward(c.h, model.dfl, &c.dfl);
  out.image_logits = std::move(dfl.image_logits);
  out.patch_logits = std::move(dfl.patch_logits);
  return out;
}

template <class T>
void backward(const DfpgModel<T>& model, const ForwardCache<T>& cache,
              const BasicTensor<T>& d_image_logits, const BasicTensor<T>& d_patch_logits,
              DfpgModel<T>& grads) {
  BasicTensor<T> d_h(cache.h.shape());
  if (model.kind == ModelKind::base) {
    backbone::image_head_backward(model.base_head, cache.h, d_image_logits, grads.base_head, &d_h);
  } else {
    fuzzy::dfl_backward(cache.h, model.dfl, cache.dfl, d_image_logits, d_patch_logits, grads.dfl, &d_h);
  }
  backbone::encode_backward(cache.encoder, d_h, model.encoder, grads.encoder);
}

template ModelOutput<float> forward(const DfpgModel<float>&, const Tensor&, ForwardCache<float>*);
template ModelOutput<double> forward(const DfpgModel<double>&, const Tensor64&, ForwardCache<double>*);
template void backward(const DfpgModel<float>&, const ForwardCache<float>&, const Tensor&,
                       const Tensor&, DfpgModel<float>&);
template void backward(const DfpgModel<double>&, const ForwardCache<double>&, const Tensor64&,
                       const Tensor64&, DfpgModel<double>&);

}  // namespace dfpg::coteach
