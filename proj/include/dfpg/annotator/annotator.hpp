#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dfpg/backbone/encoder.hpp"
#include "dfpg/backbone/heads.hpp"
#include "dfpg/data/dataset.hpp"
#include "dfpg/numerics/rng.hpp"

namespace dfpg::annotator {

/// Encoder + image head on flatten(H) + shared per-patch head. No fuzzy layers.
template <class T>
struct AnnotatorModel {
  int classes = 5;
  backbone::EncoderParams<T> encoder;
  backbone::LinearHead<T> image_head;  // K*d -> C
  backbone::LinearHead<T> patch_head;  // d -> C

  template <class F>
  void visit(F&& fn) { visit_fields(*this, fn); }
  template <class F>
  void visit(F&& fn) const { visit_fields(*this, fn); }

 private:
  template <class Self, class F>
  static void visit_fields(Self& s, F& fn) {
    s.encoder.visit([&](const std::string& n, auto& t) { fn("encoder." + n, t); });
    fn("head.image.w", s.image_head.w);
    fn("head.image.b", s.image_head.b);
    fn("head.patch.w", s.patch_head.w);
    fn("head.patch.b", s.patch_head.b);
  }
};

AnnotatorModel<float> init_annotator(const backbone::EncoderDims& dims, int classes, RngStream rng);

/// `acm` pairs adjacent grades only; `manifold` pairs any two samples (plain Manifold Mixup).
enum class MixMode { none, acm, manifold };
std::string to_string(MixMode m);
MixMode parse_mix_mode(const std::string& s);

/**
 * How the patch head learns from image labels. `inherit` trains every patch
 * on the image label. The ordinal modes read P(patch >= c) off each patch's
 * softmax and pool it over the grid into P(image >= c), by max
 * (`ordinal_max`) or noisy-OR (`noisy_or`); CE is taken on the implied
 * image distribution.
 */
enum class PatchPooling { inherit, noisy_or, ordinal_max };
std::string to_string(PatchPooling p);
PatchPooling parse_patch_pooling(const std::string& s);

struct AnnotatorConfig {
  int epochs = 10;
  double lr = 1e-3;
  std::size_t batch_size = 24;
  double mix_ratio = 0.5;   // fraction of each batch made of mixed pairs
  double alpha = 1.0;       // lambda ~ Beta(alpha, alpha)
  double patch_weight = 1.0;
  MixMode mix_mode = MixMode::acm;
  PatchPooling patch_pooling = PatchPooling::ordinal_max;
  bool patch_context = false;  // false: token-mixing weights held at zero
};

/**
 * Pools per-patch tails P(patch_k >= c) into P(y >= c), as the max over the
 * grid (`use_max`) or as noisy-OR 1 - prod_k P(patch_k < c), and returns
 * CE(q, target) for q_c = P(y >= c) - P(y >= c+1). Accumulates
 * scale * dCE/dlogits into d_patch.
 */
template <class T>
double ordinal_pool_ce(const BasicTensor<T>& patch_logits, const std::vector<double>& target, T scale,
                       BasicTensor<T>& d_patch, bool use_max);

struct PairDraw {
  std::size_t i, j;
  int y_i, y_j;
};

/**
 * Uniform over ordered class pairs (a, b) with |a - b| = 1 and both classes
 * present, then uniform within each class. Throws DataError when no such
 * pair exists.
 */
class AdjacentPairSampler {
 public:
  explicit AdjacentPairSampler(const std::vector<int>& labels);
  PairDraw draw(RngStream& rng) const;
  const std::vector<std::pair<int, int>>& class_pairs() const { return pairs_; }

 private:
  std::vector<std::vector<std::size_t>> members_;  // by class id - 1
  std::vector<std::pair<int, int>> pairs_;
  std::vector<int> labels_;
};

template <class T>
struct MixedSample {
  BasicTensor<T> h_mix;                // [K, d]
  std::vector<double> y_soft;          // [C]
};

/// lambda * H_i + (1 - lambda) * H_j with the matching convex label. Requires |y_i - y_j| = 1.
template <class T>
MixedSample<T> acm_mix(const BasicTensor<T>& h_i, const BasicTensor<T>& h_j, int y_i, int y_j,
                       double lambda, int classes);

struct AnnotatorHistory {
  std::vector<double> step_losses;
  std::vector<double> epoch_accuracy;  // plain training-set accuracy after each epoch
};

AnnotatorModel<float> train_annotator(const data::Dataset& dataset, const backbone::EncoderDims& dims,
                                      int classes, const AnnotatorConfig& config, RngStream rng,
                                      AnnotatorHistory* history = nullptr);

/// Image-level prediction (1-based) from the annotator's image head.
int predict_image(const AnnotatorModel<float>& model, const Tensor& image);

/// argmax of the patch head on each row of H; ties go to the smaller class.
std::vector<int> infer_patch_labels(const AnnotatorModel<float>& model, const Tensor& image);

/// Per-image patch pseudo-labels (1..C) with credibility weights and mask.
struct PseudoLabelRecord {
  std::string image_id;
  std::vector<int> c;
  std::vector<float> w;
  std::vector<std::uint8_t> mask;
};

std::vector<PseudoLabelRecord> label_dataset(const AnnotatorModel<float>& model,
                                             const data::Dataset& dataset);

/*
 * DFPL file: "DFPL" | u32 record count | records. Each record:
 *   u32 id byte length | UTF-8 id | u32 K | K x u16 class | K x f32 w | K x u8 mask
 * All integers little-endian.
 */
void save_pseudo_labels(const std::filesystem::path& path, const std::vector<PseudoLabelRecord>& records);
std::vector<PseudoLabelRecord> load_pseudo_labels(const std::filesystem::path& path);

}  // namespace dfpg::annotator
