#include "dfpg/backbone/encoder.hpp"

#include <cmath>

#include "dfpg/numerics/ops.hpp"

namespace dfpg::backbone {

template <class T>
BasicTensor<T> patchify(const BasicTensor<T>& image, std::size_t patch_size) {
  if (image.rank() != 3) throw ShapeError("patchify: expected [Ch,H,W], got " + shape_str(image.shape()));
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (patch_size == 0 || h % patch_size != 0 || w % patch_size != 0) {
    throw ShapeError("patchify: image " + shape_str(image.shape()) +
                     " not divisible by patch size " + std::to_string(patch_size));
  }
  const std::size_t gh = h / patch_size, gw = w / patch_size;
  const std::size_t row_len = ch * patch_size * patch_size;
  BasicTensor<T> out({gh * gw, row_len});
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      T* dst = out.raw() + (py * gw + px) * row_len;
      for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t y = 0; y < patch_size; ++y) {
          const T* src = image.raw() + (c * h + py * patch_size + y) * w + px * patch_size;
          std::copy(src, src + patch_size, dst);
          dst += patch_size;
        }
      }
    }
  }
  return out;
}

template <class T>
BasicTensor<T> unpatchify(const BasicTensor<T>& patches, const Shape& image_shape,
                          std::size_t patch_size) {
  BasicTensor<T> image(image_shape);
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  const std::size_t gh = h / patch_size, gw = w / patch_size;
  const std::size_t row_len = ch * patch_size * patch_size;
  require_shape(patches.shape(), {gh * gw, row_len}, "unpatchify");
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      const T* src = patches.raw() + (py * gw + px) * row_len;
      for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t y = 0; y < patch_size; ++y) {
          T* dst = image.raw() + (c * h + py * patch_size + y) * w + px * patch_size;
          std::copy(src, src + patch_size, dst);
          src += patch_size;
        }
      }
    }
  }
  return image;
}

void EncoderDims::validate() const {
  if (channels == 0 || image_side == 0 || patch_size == 0 || embed_dim == 0) {
    throw ShapeError("encoder dims must be positive");
  }
  if (image_side % patch_size != 0) {
    throw ShapeError("image side " + std::to_string(image_side) + " not divisible by patch size " +
                     std::to_string(patch_size));
  }
}

namespace {
template <class T>
BasicTensor<T> gaussian(Shape shape, double stddev, RngStream& rng) {
  BasicTensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}
}  // namespace

template <class T>
EncoderParams<T> init_encoder(const EncoderDims& dims, RngStream rng) {
  dims.validate();
  const std::size_t p = dims.patch_dim(), d = dims.embed_dim, k = dims.patches();
  EncoderParams<T> params;
  params.dims = dims;
  params.proj_w = gaussian<T>({p, d}, 1.0 / std::sqrt(static_cast<double>(p)), rng);
  params.proj_b = BasicTensor<T>({d});
  params.token_w = gaussian<T>({k, k}, 0.5 / std::sqrt(static_cast<double>(k)), rng);
  params.token_b = BasicTensor<T>({k});
  params.chan_w = gaussian<T>({d, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  params.chan_b = BasicTensor<T>({d});
  return params;
}

template <class T>
BasicTensor<T> project_patches(const BasicTensor<T>& patches, const EncoderParams<T>& params) {
  BasicTensor<T> a1 = affine(patches, params.proj_w, params.proj_b);
  for (T& v : a1.data()) v = std::tanh(v);
  return a1;
}

template <class T>
BasicTensor<T> encode(const BasicTensor<T>& image, const EncoderParams<T>& params,
                      EncoderCache<T>* cache) {
  const auto& dims = params.dims;
  require_shape(image.shape(), {dims.channels, dims.image_side, dims.image_side}, "encode image");
  BasicTensor<T> x = patchify(image, dims.patch_size);
  BasicTensor<T> a1 = project_patches(x, params);
  const std::size_t k = a1.dim(0), d = a1.dim(1);

  BasicTensor<T> token_act({k, d});
  for (std::size_t i = 0; i < k; ++i) {
    T* out = token_act.raw() + i * d;
    std::fill(out, out + d, params.token_b[i]);
    for (std::size_t j = 0; j < k; ++j) {
      const T wij = params.token_w[i * k + j];
      const T* in = a1.raw() + j * d;
      for (std::size_t c = 0; c < d; ++c) out[c] += wij * in[c];
    }
  }
  for (T& v : token_act.data()) v = std::tanh(v);
  BasicTensor<T> a2 = a1;
  add_inplace(a2, token_act);

  BasicTensor<T> chan_act = affine(a2, params.chan_w, params.chan_b);
  for (T& v : chan_act.data()) v = std::tanh(v);
  BasicTensor<T> h = a2;
  add_inplace(h, chan_act);

  if (cache) {
    cache->patches = std::move(x);
    cache->a1 = std::move(a1);
    cache->token_act = std::move(token_act);
    cache->a2 = std::move(a2);
    cache->chan_act = std::move(chan_act);
  }
  return h;
}

template <class T>
void encode_backward(const EncoderCache<T>& cache, const BasicTensor<T>& d_h,
                     const EncoderParams<T>& params, EncoderParams<T>& grads) {
  const std::size_t k = cache.a1.dim(0), d = cache.a1.dim(1);
  require_shape(d_h.shape(), {k, d}, "encode_backward dH");

  // H = A2 + tanh(A2 Wc + bc)
  BasicTensor<T> d_a2 = d_h;
  BasicTensor<T> d_z3({k, d});
  for (std::size_t i = 0; i < d_z3.size(); ++i) {
    d_z3[i] = d_h[i] * (T{1} - cache.chan_act[i] * cache.chan_act[i]);
  }
  affine_backward(cache.a2, params.chan_w, d_z3, grads.chan_w, grads.chan_b, &d_a2);

  // A2 = A1 + tanh(Wt A1 + bt)
  BasicTensor<T> d_a1 = d_a2;
  BasicTensor<T> d_t({k, d});
  for (std::size_t i = 0; i < d_t.size(); ++i) {
    d_t[i] = d_a2[i] * (T{1} - cache.token_act[i] * cache.token_act[i]);
  }
  for (std::size_t i = 0; i < k; ++i) {
    const T* dt = d_t.raw() + i * d;
    T bias_acc = 0;
    for (std::size_t c = 0; c < d; ++c) bias_acc += dt[c];
    grads.token_b[i] += bias_acc;
    for (std::size_t j = 0; j < k; ++j) {
      const T* a = cache.a1.raw() + j * d;
      T* da = d_a1.raw() + j * d;
      const T wij = params.token_w[i * k + j];
      T acc = 0;
      for (std::size_t c = 0; c < d; ++c) {
        acc += dt[c] * a[c];
        da[c] += wij * dt[c];
      }
      grads.token_w[i * k + j] += acc;
    }
  }

  // A1 = tanh(X Wp + bp)
  BasicTensor<T> d_z1({k, d});
  for (std::size_t i = 0; i < d_z1.size(); ++i) {
    d_z1[i] = d_a1[i] * (T{1} - cache.a1[i] * cache.a1[i]);
  }
  affine_backward<T>(cache.patches, params.proj_w, d_z1, grads.proj_w, grads.proj_b, nullptr);
}

#define DFPG_INSTANTIATE(T)                                                                      \
  template BasicTensor<T> patchify(const BasicTensor<T>&, std::size_t);                         \
  template BasicTensor<T> unpatchify(const BasicTensor<T>&, const Shape&, std::size_t);         \
  template EncoderParams<T> init_encoder(const EncoderDims&, RngStream);                        \
  template BasicTensor<T> project_patches(const BasicTensor<T>&, const EncoderParams<T>&);      \
  template BasicTensor<T> encode(const BasicTensor<T>&, const EncoderParams<T>&,                \
                                 EncoderCache<T>*);                                             \
  template void encode_backward(const EncoderCache<T>&, const BasicTensor<T>&,                  \
                                const EncoderParams<T>&, EncoderParams<T>&);
DFPG_INSTANTIATE(float)
DFPG_INSTANTIATE(double)
#undef DFPG_INSTANTIATE

}  // namespace dfpg::backbone
