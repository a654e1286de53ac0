#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dfpg/annotator/annotator.hpp"
#include "dfpg/coteach/trainer.hpp"
#include "dfpg/data/dataset.hpp"
#include "dfpg/data/metrics.hpp"

namespace dfpg::coteach {

/*
 * Four configurations, in this order:
 *   base         encoder + linear head, image CE
 *   +DFL         dual-level fuzzy model, image CE
 *   +DFL+PA      co-teaching on raw pseudo-labels (filtering off)
 *   +DFL+PA+NPF  full co-teaching with noise-aware filtering
 * Co-teaching updates model A on every other epoch, so the image-CE runs get
 * ceil(E / 2) passes and the evaluated model sees the same number of updates
 * in every configuration.
 */
inline const std::vector<std::string>& ablation_configs() {
  static const std::vector<std::string> names = {"base", "+DFL", "+DFL+PA", "+DFL+PA+NPF"};
  return names;
}

struct AblationSetup {
  backbone::EncoderDims dims;
  fuzzy::DflConfig dfl;
  int classes = 5;
  annotator::AnnotatorConfig annotator;
  CoteachConfig coteach;
  std::size_t folds = 5;
  std::size_t test_fold = 0;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
};

struct AblationRow {
  std::string config;
  std::uint64_t seed = 0;
  data::MetricsReport metrics;
  std::optional<double> precision_all;       // final-epoch pseudo-label precision (co-teaching rows)
  std::optional<double> precision_retained;
};

/// Runs one seed: split, annotate, then the four configurations.
std::vector<AblationRow> run_ablation_seed(const data::Dataset& dataset,
                                           const std::vector<std::vector<int>>* patch_truth,
                                           const AblationSetup& setup, std::uint64_t seed);

/// Rows grouped by configuration (table order), seeds in the given order.
std::vector<AblationRow> run_ablation(const data::Dataset& dataset,
                                      const std::vector<std::vector<int>>* patch_truth,
                                      const AblationSetup& setup);

struct AblationSummary {
  std::string config;
  double macro_f1 = 0;
  double mae = 0;
  double accuracy = 0;
  std::vector<double> recall;  // per class, averaged over seeds
};

/// Means over seeds, one entry per configuration in table order.
std::vector<AblationSummary> summarize(const std::vector<AblationRow>& rows);

std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace dfpg::coteach
