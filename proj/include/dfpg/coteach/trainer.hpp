#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dfpg/annotator/annotator.hpp"
#include "dfpg/coteach/losses.hpp"
#include "dfpg/coteach/model.hpp"
#include "dfpg/data/dataset.hpp"
#include "dfpg/data/metrics.hpp"
#include "dfpg/filter/filter.hpp"
#include "dfpg/numerics/adam.hpp"

namespace dfpg::coteach {

struct CoteachConfig {
  int epochs = 50;
  double lr = 1e-3;
  std::size_t batch_size = 24;
  double beta = 1.0;
  double gamma_min = 1e-5;
  double gamma_max = 150.0;
  double tau = 0.9;
  double delta = 0.5;
  bool filtering = true;       // false: w = 1, M = 1 every epoch
  bool ensemble_eval = false;  // average both models' probabilities at evaluation
  filter::GmmFitOptions gmm;
};

/// Throws ConfigError for out-of-range hyperparameters.
void validate(const CoteachConfig& config);

/// gamma for `epoch`; a single-epoch run uses gamma_min.
double epoch_gamma(const CoteachConfig& config, int epoch);

/// Model A is active on even epochs, B on odd.
inline int active_model(int epoch) { return epoch % 2; }
inline char model_name(int id) { return id == 0 ? 'A' : 'B'; }

struct EpochRecord {
  int epoch = 0;
  char active = 'A';
  double gamma = 0;
  double l_cls = 0;  // mean over the epoch's steps
  double l_re = 0;
  double l_total = 0;
  double train_accuracy = 0;
  std::optional<data::MetricsReport> val;
  double retained_fraction = 1.0;
  bool degenerate = false;
  // Present when patch ground truth was supplied.
  std::optional<double> precision_all;
  std::optional<double> precision_retained;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses[2];  // per model, in update order
};

/// One line-delimited JSON record per epoch.
std::string history_jsonl(const TrainHistory& history, int classes);

/// What the active model sees before its pass; `losses` come from `fixed`.
struct FilterEvent {
  int epoch;
  int active_id;
  int loss_source_id;
  const DfpgModel<float>& active;
  const DfpgModel<float>& fixed;
  const std::vector<double>& losses;  // pooled, image-major; empty when filtering is off
  const filter::FilterResult& result;
};

struct TrainOptions {
  const data::Dataset* validation = nullptr;
  const std::vector<std::vector<int>>* patch_truth = nullptr;  // aligned with the training set
  std::filesystem::path snapshot_prefix;  // writes <prefix>.epochN DFPL files when set
  std::function<void(const FilterEvent&)> on_filter;
};

struct CoteachResult {
  DfpgModel<float> a, b;
  TrainHistory history;
  std::vector<annotator::PseudoLabelRecord> labels;  // w and M from the last epoch
};

/// Matches records to images by id; throws DataError on any mismatch.
std::vector<annotator::PseudoLabelRecord> align_labels(const data::Dataset& dataset,
                                                       const std::vector<annotator::PseudoLabelRecord>& labels);

/// Per-patch CE of the model's patch predictions against the pseudo-labels, image-major.
std::vector<double> patch_losses(const DfpgModel<float>& model, const data::Dataset& dataset,
                                 const std::vector<annotator::PseudoLabelRecord>& labels,
                                 std::vector<Tensor64>* patch_probs = nullptr);

/// Fraction of pseudo-labels equal to the truth, over all patches or only where mask = 1.
double pseudo_label_precision(const std::vector<annotator::PseudoLabelRecord>& labels,
                              const std::vector<std::vector<int>>& truth, bool retained_only);

CoteachResult train_coteaching(const ModelSpec& spec, const data::Dataset& train,
                               const std::vector<annotator::PseudoLabelRecord>& labels,
                               const CoteachConfig& config, RngStream rng, const TrainOptions& options = {});

struct PlainResult {
  DfpgModel<float> model;
  TrainHistory history;
};

/**
 * Image-level CE only, sharing initialisation, shuffling and update code with
 * model A of the co-teaching trainer. `config.epochs` passes.
 */
PlainResult train_plain(const ModelSpec& spec, const data::Dataset& train, const CoteachConfig& config,
                        RngStream rng, const TrainOptions& options = {});

int predict(const DfpgModel<float>& model, const Tensor& image);
/// Averages the two models' class probabilities.
int predict_ensemble(const DfpgModel<float>& a, const DfpgModel<float>& b, const Tensor& image);

data::MetricsReport evaluate_model(const DfpgModel<float>& model, const data::Dataset& dataset,
                                   const DfpgModel<float>* partner = nullptr);

}  // namespace dfpg::coteach
