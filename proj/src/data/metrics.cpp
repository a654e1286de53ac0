#include "dfpg/data/metrics.hpp"

#include <algorithm>
#include <cstdlib>
#include "json.hpp"

#include "dfpg/numerics/error.hpp"
#include "dfpg/numerics/rng.hpp"

namespace dfpg::data {

MetricsReport evaluate(std::span<const int> preds, std::span<const int> labels, int classes) {
  if (preds.size() != labels.size()) {
    throw DataError("evaluate: " + std::to_string(preds.size()) + " predictions vs " +
                    std::to_string(labels.size()) + " labels");
  }
  if (preds.empty()) throw DataError("evaluate: no samples");
  if (classes < 1) throw DataError("evaluate: class count must be positive");

  const std::size_t c = static_cast<std::size_t>(classes);
  std::vector<std::size_t> tp(c, 0), pred_count(c, 0), label_count(c, 0);
  std::size_t correct = 0;
  double abs_err = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i], y = labels[i];
    if (p < 1 || p > classes || y < 1 || y > classes) {
      throw DataError("evaluate: class id out of range 1.." + std::to_string(classes) + " at index " +
                      std::to_string(i));
    }
    ++pred_count[p - 1];
    ++label_count[y - 1];
    if (p == y) {
      ++tp[p - 1];
      ++correct;
    }
    abs_err += std::abs(p - y);
  }

  MetricsReport r;
  r.classes = classes;
  r.samples = preds.size();
  const double n = static_cast<double>(preds.size());
  r.accuracy = static_cast<double>(correct) / n;
  r.mae = abs_err / n;
  r.precision.resize(c);
  r.recall.resize(c);
  r.f1.resize(c);
  for (std::size_t k = 0; k < c; ++k) {
    const double prec = pred_count[k] ? double(tp[k]) / double(pred_count[k]) : 0.0;
    const double rec = label_count[k] ? double(tp[k]) / double(label_count[k]) : 0.0;
    r.precision[k] = prec;
    r.recall[k] = rec;
    r.f1[k] = (prec + rec) > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    r.macro_precision += prec;
    r.macro_recall += rec;
    r.macro_f1 += r.f1[k];
  }
  r.macro_precision /= double(c);
  r.macro_recall /= double(c);
  r.macro_f1 /= double(c);
  return r;
}

std::string metrics_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["macro_averaging"] = "unweighted over all C classes; absent classes count as 0";
  j["classes"] = r.classes;
  j["samples"] = r.samples;
  j["accuracy"] = r.accuracy;
  j["macro_precision"] = r.macro_precision;
  j["macro_recall"] = r.macro_recall;
  j["macro_f1"] = r.macro_f1;
  j["mae"] = r.mae;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  return j.dump();
}

std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw DataError("kfold_split: need k >= 2");
  if (k > n) {
    throw DataError("kfold_split: k = " + std::to_string(k) + " exceeds n = " + std::to_string(n));
  }
  RngStream rng = RngStream(seed).derive("kfold");
  const auto perm = rng.permutation(n);
  std::vector<std::vector<std::size_t>> folds(k);
  const std::size_t base = n / k, extra = n % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    folds[f].assign(perm.begin() + pos, perm.begin() + pos + len);
    std::sort(folds[f].begin(), folds[f].end());
    pos += len;
  }
  return folds;
}

HoldoutSplit holdout_split(std::size_t n, std::size_t k, std::size_t test_fold, std::uint64_t seed) {
  if (test_fold >= k) throw ConfigError("holdout_split: test fold out of range");
  auto folds = kfold_split(n, k, seed);
  HoldoutSplit out;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (f != test_fold) out.train.insert(out.train.end(), folds[f].begin(), folds[f].end());
  }
  std::sort(out.train.begin(), out.train.end());
  out.test = std::move(folds[test_fold]);
  return out;
}

}  // namespace dfpg::data
