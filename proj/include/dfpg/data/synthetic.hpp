#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dfpg/data/dataset.hpp"

namespace dfpg::data {

/**
 * Synthetic ordinal grading task with planted lesion patches.
 *
 * An image of class y carries a lesion count drawn uniformly from
 * lesion_bands[y-1]; bands are disjoint and increasing, so the label is a
 * function of the count. Each lesion patch holds a Gaussian blob whose
 * amplitude grows with the class: for class y it is drawn from
 *   [lesion_lo + (y-2-grade_overlap) * step, lesion_lo + (y-1+grade_overlap) * step],
 * step = (lesion_hi - lesion_lo) / (C - 1), clipped to [lesion_lo, lesion_hi].
 * grade_overlap = 0 gives disjoint sub-bands.
 * Background patches get a distractor blob with probability
 * distractor_rate, amplitude in [0, distractor_hi]; distractor_hi above
 * lesion_lo makes the two bands overlap. Every pixel adds N(0, noise_std).
 */
struct SyntheticSpec {
  std::size_t image_side = 56;
  std::size_t grid = 7;
  int classes = 5;
  std::vector<std::pair<int, int>> lesion_bands;  // empty = default_bands(classes)
  double lesion_lo = 0.5;
  double lesion_hi = 1.0;
  double grade_overlap = 0.0;
  double distractor_rate = 0.3;
  double distractor_hi = 0.55;
  double blob_sigma = 1.6;  // pixels
  double noise_std = 0.1;
  std::vector<double> class_mass;  // empty = balanced
  std::size_t samples = 2000;
  std::uint64_t seed = 0;

  std::size_t patches() const { return grid * grid; }
  std::size_t patch_side() const { return image_side / grid; }
};

/// Class 1: no lesions; class c >= 2 takes the next c counts ([1,2], [3,5], [6,9], ...).
std::vector<std::pair<int, int>> default_bands(int classes);

/// Class proportions approximating the diabetic-retinopathy grade skew.
std::vector<double> imbalanced_dr_mass();

SyntheticSpec balanced_preset(std::uint64_t seed);
SyntheticSpec imbalanced_preset(std::uint64_t seed);

/// Throws ConfigError for impossible specs (band beyond K, overlapping bands, ...).
void validate(const SyntheticSpec& spec);

std::vector<OrdinalSample> gen_synthetic(const SyntheticSpec& spec);

/// Class implied by a lesion count under `bands` (1-based); 0 if no band matches.
int class_for_count(const std::vector<std::pair<int, int>>& bands, int count);

/// Per-class sample counts by largest remainder; sums to `samples`.
std::vector<std::size_t> class_quotas(const std::vector<double>& mass, std::size_t samples);

}  // namespace dfpg::data
