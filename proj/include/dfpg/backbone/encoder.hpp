#pragma once

#include <cstddef>
#include <string>

#include "dfpg/numerics/rng.hpp"
#include "dfpg/numerics/tensor.hpp"

namespace dfpg::backbone {

/// Splits image [Ch,H,W] into rows [K, Ch*p*p], patches in row-major grid order.
template <class T>
BasicTensor<T> patchify(const BasicTensor<T>& image, std::size_t patch_size);

/// Inverse of patchify for a known image shape.
template <class T>
BasicTensor<T> unpatchify(const BasicTensor<T>& patches, const Shape& image_shape,
                          std::size_t patch_size);

struct EncoderDims {
  std::size_t channels = 1;
  std::size_t image_side = 56;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 32;

  std::size_t grid() const { return image_side / patch_size; }
  std::size_t patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  void validate() const;
};

/**
 * Toy patch encoder:
 *   A1 = tanh(X Wp + bp)              shared per-patch projection
 *   A2 = A1 + tanh(Wt A1 + bt)        mixing across patches (K x K)
 *   H  = A2 + tanh(A2 Wc + bc)        per-patch feed-forward (d x d)
 * tanh keeps every stage smooth.
 */
template <class T>
struct EncoderParams {
  EncoderDims dims;
  BasicTensor<T> proj_w, proj_b;    // [P,d], [d]
  BasicTensor<T> token_w, token_b;  // [K,K], [K]
  BasicTensor<T> chan_w, chan_b;    // [d,d], [d]

  template <class U>
  EncoderParams<U> cast() const {
    return {dims,
            proj_w.template cast<U>(),  proj_b.template cast<U>(),
            token_w.template cast<U>(), token_b.template cast<U>(),
            chan_w.template cast<U>(),  chan_b.template cast<U>()};
  }

  template <class F>
  void visit(F&& fn) { visit_fields(*this, fn); }
  template <class F>
  void visit(F&& fn) const { visit_fields(*this, fn); }

 private:
  template <class Self, class F>
  static void visit_fields(Self& s, F& fn) {
    fn("proj_w", s.proj_w);
    fn("proj_b", s.proj_b);
    fn("token_w", s.token_w);
    fn("token_b", s.token_b);
    fn("chan_w", s.chan_w);
    fn("chan_b", s.chan_b);
  }
};

template <class T>
EncoderParams<T> init_encoder(const EncoderDims& dims, RngStream rng);

template <class T>
struct EncoderCache {
  BasicTensor<T> patches;    // X
  BasicTensor<T> a1;         // tanh(X Wp + bp)
  BasicTensor<T> token_act;  // tanh(Wt A1 + bt)
  BasicTensor<T> a2;
  BasicTensor<T> chan_act;   // tanh(A2 Wc + bc)
};

/// Shared per-patch projection stage only (before any mixing).
template <class T>
BasicTensor<T> project_patches(const BasicTensor<T>& patches, const EncoderParams<T>& params);

/// H [K,d]. Fills `cache` for backward when non-null.
template <class T>
BasicTensor<T> encode(const BasicTensor<T>& image, const EncoderParams<T>& params,
                      EncoderCache<T>* cache = nullptr);

/// Accumulates parameter gradients into `grads` given dL/dH.
template <class T>
void encode_backward(const EncoderCache<T>& cache, const BasicTensor<T>& d_h,
                     const EncoderParams<T>& params, EncoderParams<T>& grads);

}  // namespace dfpg::backbone
