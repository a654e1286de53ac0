#include "dfpg/coteach/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

namespace dfpg::coteach {

std::vector<AblationRow> run_ablation_seed(const data::Dataset& dataset,
                                           const std::vector<std::vector<int>>* patch_truth,
                                           const AblationSetup& setup, std::uint64_t seed) {
  if (setup.test_fold >= setup.folds) throw ConfigError("ablation: test fold out of range");
  if (patch_truth && patch_truth->size() != dataset.size()) {
    throw DataError("ablation: patch truth count differs from dataset");
  }
  const RngStream root(seed);
  const auto split = data::holdout_split(dataset.size(), setup.folds, setup.test_fold,
                                         root.derive("split").next_u64());
  const auto& train_idx = split.train;
  const data::Dataset train = data::subset(dataset, train_idx);
  const data::Dataset test = data::subset(dataset, split.test);
  std::vector<std::vector<int>> train_truth;
  if (patch_truth) {
    for (auto i : train_idx) train_truth.push_back((*patch_truth)[i]);
  }

  const auto ann = annotator::train_annotator(train, setup.dims, setup.classes, setup.annotator,
                                              root.derive("annotator"));
  const auto labels = annotator::label_dataset(ann, train);

  ModelSpec spec{ModelKind::base, setup.dims, setup.dfl, setup.classes};
  CoteachConfig plain = setup.coteach;
  plain.epochs = (setup.coteach.epochs + 1) / 2;
  const RngStream train_rng = root.derive("train");
  std::vector<AblationRow> rows;

  const auto base = train_plain(spec, train, plain, train_rng);
  rows.push_back({"base", seed, evaluate_model(base.model, test), {}, {}});
  spec.kind = ModelKind::dfl;
  const auto dfl = train_plain(spec, train, plain, train_rng);
  rows.push_back({"+DFL", seed, evaluate_model(dfl.model, test), {}, {}});

  TrainOptions options;
  if (patch_truth) options.patch_truth = &train_truth;
  for (bool filtering : {false, true}) {
    CoteachConfig cfg = setup.coteach;
    cfg.filtering = filtering;
    const auto res = train_coteaching(spec, train, labels, cfg, train_rng, options);
    AblationRow row{filtering ? "+DFL+PA+NPF" : "+DFL+PA", seed,
                    evaluate_model(res.a, test, cfg.ensemble_eval ? &res.b : nullptr), {}, {}};
    if (!res.history.epochs.empty()) {
      row.precision_all = res.history.epochs.back().precision_all;
      row.precision_retained = res.history.epochs.back().precision_retained;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<AblationRow> run_ablation(const data::Dataset& dataset,
                                      const std::vector<std::vector<int>>* patch_truth,
                                      const AblationSetup& setup) {
  std::vector<AblationRow> by_seed;
  for (auto seed : setup.seeds) {
    auto rows = run_ablation_seed(dataset, patch_truth, setup, seed);
    by_seed.insert(by_seed.end(), rows.begin(), rows.end());
  }
  std::vector<AblationRow> out;
  for (const auto& name : ablation_configs()) {
    for (const auto& r : by_seed) {
      if (r.config == name) out.push_back(r);
    }
  }
  return out;
}

std::vector<AblationSummary> summarize(const std::vector<AblationRow>& rows) {
  std::vector<AblationSummary> out;
  for (const auto& name : ablation_configs()) {
    AblationSummary s;
    s.config = name;
    std::size_t n = 0;
    for (const auto& r : rows) {
      if (r.config != name) continue;
      s.macro_f1 += r.metrics.macro_f1;
      s.mae += r.metrics.mae;
      s.accuracy += r.metrics.accuracy;
      if (s.recall.empty()) s.recall.assign(r.metrics.recall.size(), 0.0);
      for (std::size_t c = 0; c < s.recall.size(); ++c) s.recall[c] += r.metrics.recall[c];
      ++n;
    }
    if (n == 0) continue;
    s.macro_f1 /= double(n);
    s.mae /= double(n);
    s.accuracy /= double(n);
    for (auto& v : s.recall) v /= double(n);
    out.push_back(std::move(s));
  }
  return out;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-13s %6s %8s %8s %8s\n", "config", "seed", "macroF1", "MAE", "acc");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-13s %6llu %8.4f %8.4f %8.4f\n", r.config.c_str(),
                  static_cast<unsigned long long>(r.seed), r.metrics.macro_f1, r.metrics.mae, r.metrics.accuracy);
    out += buf;
  }
  for (const auto& s : summarize(rows)) {
    std::snprintf(buf, sizeof buf, "%-13s %6s %8.4f %8.4f %8.4f\n", s.config.c_str(), "mean", s.macro_f1, s.mae,
                  s.accuracy);
    out += buf;
  }
  return out;
}

}  // namespace dfpg::coteach
