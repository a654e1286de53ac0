#include "dfpg/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dfpg/numerics/rng.hpp"

namespace dfpg::data {

std::vector<std::pair<int, int>> default_bands(int classes) {
  std::vector<std::pair<int, int>> bands{{0, 0}};
  int next = 1;
  for (int c = 2; c <= classes; ++c) {
    bands.emplace_back(next, next + c - 1);
    next += c;
  }
  return bands;
}

std::vector<double> imbalanced_dr_mass() { return {0.735, 0.07, 0.15, 0.025, 0.02}; }

SyntheticSpec balanced_preset(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.seed = seed;
  return spec;
}

SyntheticSpec imbalanced_preset(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.class_mass = imbalanced_dr_mass();
  spec.seed = seed;
  return spec;
}

int class_for_count(const std::vector<std::pair<int, int>>& bands, int count) {
  for (std::size_t c = 0; c < bands.size(); ++c) {
    if (count >= bands[c].first && count <= bands[c].second) return static_cast<int>(c) + 1;
  }
  return 0;
}

void validate(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw ConfigError("synthetic: need at least 2 classes");
  if (spec.grid == 0 || spec.image_side % spec.grid != 0) {
    throw ConfigError("synthetic: image side " + std::to_string(spec.image_side) +
                      " not divisible by grid " + std::to_string(spec.grid));
  }
  const auto bands = spec.lesion_bands.empty() ? default_bands(spec.classes) : spec.lesion_bands;
  if (bands.size() != static_cast<std::size_t>(spec.classes)) {
    throw ConfigError("synthetic: need one lesion band per class");
  }
  int prev_hi = -1;
  for (const auto& [lo, hi] : bands) {
    if (lo > hi || lo <= prev_hi) throw ConfigError("synthetic: lesion bands must be disjoint and increasing");
    if (hi > static_cast<int>(spec.patches())) {
      throw ConfigError("synthetic: lesion band upper bound " + std::to_string(hi) +
                        " exceeds patch count " + std::to_string(spec.patches()));
    }
    prev_hi = hi;
  }
  if (!spec.class_mass.empty()) {
    if (spec.class_mass.size() != static_cast<std::size_t>(spec.classes)) {
      throw ConfigError("synthetic: class_mass needs one entry per class");
    }
    for (double m : spec.class_mass) {
      if (!(m >= 0.0)) throw ConfigError("synthetic: class_mass entries must be non-negative");
    }
  }
  if (spec.samples == 0) throw ConfigError("synthetic: sample count must be positive");
  if (!(spec.lesion_hi > spec.lesion_lo)) throw ConfigError("synthetic: empty lesion intensity range");
  if (!(spec.grade_overlap >= 0.0)) throw ConfigError("synthetic: grade_overlap must be >= 0");
}

std::vector<std::size_t> class_quotas(const std::vector<double>& mass, std::size_t samples) {
  double total = 0;
  for (double m : mass) total += m;
  std::vector<std::size_t> quota(mass.size());
  std::vector<std::pair<double, std::size_t>> remainder;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < mass.size(); ++c) {
    const double exact = mass[c] / total * static_cast<double>(samples);
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    remainder.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainder.begin(), remainder.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < samples; ++i, ++assigned) ++quota[remainder[i % remainder.size()].second];
  return quota;
}

namespace {

void add_blob(Tensor& image, std::size_t x0, std::size_t y0, std::size_t side, double amplitude,
              double sigma, RngStream& rng) {
  const double margin = std::min(1.5, side / 2.0);
  const double cx = x0 + rng.uniform(margin, side - margin);
  const double cy = y0 + rng.uniform(margin, side - margin);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t y = y0; y < y0 + side; ++y) {
    for (std::size_t x = x0; x < x0 + side; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      image.at(0, y, x) += static_cast<float>(amplitude * std::exp(-(dx * dx + dy * dy) * inv));
    }
  }
}

}  // namespace

std::vector<OrdinalSample> gen_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  const auto bands = spec.lesion_bands.empty() ? default_bands(spec.classes) : spec.lesion_bands;
  const std::vector<double> mass =
      spec.class_mass.empty() ? std::vector<double>(spec.classes, 1.0) : spec.class_mass;
  const RngStream root(spec.seed);

  std::vector<int> labels;
  const auto quota = class_quotas(mass, spec.samples);
  for (std::size_t c = 0; c < quota.size(); ++c) labels.insert(labels.end(), quota[c], int(c) + 1);
  RngStream order = root.derive("class_order");
  const auto perm = order.permutation(labels.size());

  const std::size_t k = spec.patches();
  const std::size_t ps = spec.patch_side();
  const double step = (spec.lesion_hi - spec.lesion_lo) / std::max(1, spec.classes - 1);

  std::vector<OrdinalSample> out;
  out.reserve(spec.samples);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    RngStream rng = root.derive("sample", i);
    OrdinalSample s;
    char id[32];
    std::snprintf(id, sizeof id, "syn_%06zu", i);
    s.id = id;
    s.label = labels[perm[i]];
    const auto [lo, hi] = bands[s.label - 1];
    s.lesion_count = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
    s.patch_truth.assign(k, 1);
    std::vector<bool> is_lesion(k, false);
    const auto where = rng.permutation(k);
    for (int l = 0; l < s.lesion_count; ++l) {
      is_lesion[where[l]] = true;
      s.patch_truth[where[l]] = s.label;
    }

    s.image = Tensor({1, spec.image_side, spec.image_side});
    const double amp_lo = std::max(spec.lesion_lo, spec.lesion_lo + (s.label - 2 - spec.grade_overlap) * step);
    const double amp_hi = std::min(spec.lesion_hi, spec.lesion_lo + (s.label - 1 + spec.grade_overlap) * step);
    for (std::size_t p = 0; p < k; ++p) {
      const std::size_t x0 = (p % spec.grid) * ps, y0 = (p / spec.grid) * ps;
      if (is_lesion[p]) {
        add_blob(s.image, x0, y0, ps, rng.uniform(amp_lo, amp_hi), spec.blob_sigma, rng);
      } else if (rng.uniform() < spec.distractor_rate) {
        add_blob(s.image, x0, y0, ps, rng.uniform(0.0, spec.distractor_hi), spec.blob_sigma, rng);
      }
    }
    for (float& v : s.image.data()) v += static_cast<float>(rng.normal() * spec.noise_std);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace dfpg::data
