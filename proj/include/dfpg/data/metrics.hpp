#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dfpg::data {

/**
 * Classification and ordinal metrics. Macro averages divide by C, counting
 * classes absent from both preds and labels as 0 (precision, recall and F1
 * use 0 for empty denominators).
 */
struct MetricsReport {
  int classes = 0;
  std::size_t samples = 0;
  double accuracy = 0;
  double macro_precision = 0;
  double macro_recall = 0;
  double macro_f1 = 0;
  double mae = 0;
  std::vector<double> precision;  // per class, index c-1
  std::vector<double> recall;
  std::vector<double> f1;
};

/// preds/labels in 1..C. Throws DataError on length mismatch, empty input or out-of-range ids.
MetricsReport evaluate(std::span<const int> preds, std::span<const int> labels, int classes);

std::string metrics_json(const MetricsReport& report);

/// Folds partition 0..n-1, sizes differ by at most one, each fold sorted.
std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed);

struct HoldoutSplit {
  std::vector<std::size_t> train;  // sorted
  std::vector<std::size_t> test;
};

/// Fold `test_fold` of kfold_split(n, k, seed) against the union of the rest.
HoldoutSplit holdout_split(std::size_t n, std::size_t k, std::size_t test_fold, std::uint64_t seed);

}  // namespace dfpg::data
