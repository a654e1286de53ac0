#pragma once

#include <string>
#include <vector>

#include "dfpg/backbone/encoder.hpp"
#include "dfpg/backbone/heads.hpp"
#include "dfpg/fuzzy/fuzzy.hpp"
#include "dfpg/numerics/rng.hpp"

namespace dfpg::coteach {

/// base: encoder + one linear head on flatten(H). dfl: encoder + dual-level fuzzy layer.
enum class ModelKind { base, dfl };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& s);

template <class T>
struct DfpgModel {
  ModelKind kind = ModelKind::dfl;
  int classes = 5;
  backbone::EncoderParams<T> encoder;
  fuzzy::DflParams<T> dfl;             // kind == dfl
  backbone::LinearHead<T> base_head;   // kind == base, K*d -> C

  bool has_patch_head() const { return kind == ModelKind::dfl; }

  template <class U>
  DfpgModel<U> cast() const {
    return {kind, classes, encoder.template cast<U>(), dfl.template cast<U>(),
            base_head.template cast<U>()};
  }

  template <class F>
  void visit(F&& fn) { visit_fields(*this, fn); }
  template <class F>
  void visit(F&& fn) const { visit_fields(*this, fn); }

 private:
  template <class Self, class F>
  static void visit_fields(Self& s, F& fn) {
    s.encoder.visit([&](const std::string& n, auto& t) { fn("encoder." + n, t); });
    if (s.kind == ModelKind::dfl) {
      s.dfl.visit(fn);
    } else {
      fn("head.base.w", s.base_head.w);
      fn("head.base.b", s.base_head.b);
    }
  }
};

struct ModelSpec {
  ModelKind kind = ModelKind::dfl;
  backbone::EncoderDims dims;
  fuzzy::DflConfig dfl;
  int classes = 5;
};

/**
 * Fresh model. The fuzzy centres are scaled by the empirical std of H over
 * `warmup` images pushed through the freshly initialised encoder.
 */
DfpgModel<float> init_model(const ModelSpec& spec, const std::vector<const Tensor*>& warmup,
                            RngStream rng);

template <class T>
struct ForwardCache {
  backbone::EncoderCache<T> encoder;
  BasicTensor<T> h;
  fuzzy::DflCache<T> dfl;
};

template <class T>
struct ModelOutput {
  BasicTensor<T> image_logits;  // [C]
  BasicTensor<T> patch_logits;  // [K, C]; empty for the base model
};

template <class T>
ModelOutput<T> forward(const DfpgModel<T>& model, const BasicTensor<T>& image,
                       ForwardCache<T>* cache = nullptr);

/// Accumulates into `grads`. d_patch_logits is ignored for the base model.
template <class T>
void backward(const DfpgModel<T>& model, const ForwardCache<T>& cache,
              const BasicTensor<T>& d_image_logits, const BasicTensor<T>& d_patch_logits,
              DfpgModel<T>& grads);

}  // namespace dfpg::coteach
