#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dfpg/annotator/annotator.hpp"
#include "dfpg/coteach/ablation.hpp"
#include "dfpg/coteach/trainer.hpp"
#include "dfpg/data/synthetic.hpp"
#include "dfpg/fuzzy/fuzzy.hpp"

namespace dfpg::cli {

/*
 * Run configuration. On disk it is JSON with line and block comments allowed;
 * every section and key is optional and missing keys keep their defaults.
 * Unknown keys are rejected.
 *
 *   seed
 *   data      image_side channels grid classes samples class_mass lesion_bands
 *             lesion_lo lesion_hi grade_overlap distractor_rate distractor_hi
 *             blob_sigma noise_std folds test_fold
 *   backbone  embed_dim
 *   fuzzy     rules_patch rules_channel fusion f1_representation f2_representation
 *   annotator epochs lr batch_size mix_ratio alpha patch_weight mix_mode
 *             patch_pooling patch_context
 *   filter    tau delta gmm_max_iters gmm_tol
 *   coteach   epochs lr batch_size beta gamma_min gamma_max filtering
 *   eval      ensemble ablation_seeds
 *
 * Seeds: everything random derives from RngStream(seed) by label.
 *   "data"       synthetic generator seed (next_u64 of the derived stream)
 *   "split"      k-fold assignment seed (next_u64)
 *   "annotator"  annotator init, mixing and shuffling
 *   "train"      co-teaching / plain model init and shuffling
 * The ablation uses the same scheme with each ablation seed as the root.
 */
struct RunConfig {
  std::uint64_t seed = 1;

  struct Data {
    std::size_t image_side = 56;
    std::size_t channels = 1;
    std::size_t grid = 7;
    int classes = 5;
    std::size_t samples = 2000;
    std::vector<double> class_mass;  // empty = balanced
    std::vector<std::pair<int, int>> lesion_bands;  // empty = default bands
    double lesion_lo = 0.5;
    double lesion_hi = 1.0;
    double grade_overlap = 0.0;
    double distractor_rate = 0.3;
    double distractor_hi = 0.55;
    double blob_sigma = 1.6;
    double noise_std = 0.1;
    std::size_t folds = 5;
    std::size_t test_fold = 0;
  } data;

  struct Backbone {
    std::size_t embed_dim = 32;
  } backbone;

  fuzzy::DflConfig fuzzy;

  annotator::AnnotatorConfig annotator{.epochs = 50};

  struct Filter {
    double tau = 0.9;
    double delta = 0.5;
    int gmm_max_iters = 100;
    double gmm_tol = 1e-8;
  } filter;

  struct Coteach {
    int epochs = 50;
    double lr = 1e-3;
    std::size_t batch_size = 24;
    double beta = 1.0;
    double gamma_min = 1e-5;
    double gamma_max = 150.0;
    bool filtering = true;
  } coteach;

  struct Eval {
    bool ensemble = false;
    std::vector<std::uint64_t> ablation_seeds = {1, 2, 3, 4, 5};
  } eval;
};

/// "paper": defaults above. "desk": 10 epochs per stage.
RunConfig preset(const std::string& name);

/// Applies a parsed document on top of `base`. Throws ConfigError on unknown keys or bad types.
RunConfig apply_json(RunConfig base, const nlohmann::ordered_json& doc);
nlohmann::ordered_json to_json(const RunConfig& config);

/// Comment-tolerant parse of a config file's text.
RunConfig parse_config(const std::string& text, const RunConfig& base = RunConfig{});
RunConfig load_config(const std::string& path, const RunConfig& base = RunConfig{});
std::string serialize(const RunConfig& config);

/// Throws ConfigError for out-of-range values.
void validate(const RunConfig& config);

std::uint64_t sub_seed(std::uint64_t seed, const std::string& label);

data::SyntheticSpec synthetic_spec(const RunConfig& config);
data::FolderOptions folder_options(const RunConfig& config);
backbone::EncoderDims encoder_dims(const RunConfig& config);
coteach::ModelSpec model_spec(const RunConfig& config, coteach::ModelKind kind);
coteach::CoteachConfig coteach_config(const RunConfig& config);
coteach::AblationSetup ablation_setup(const RunConfig& config);

}  // namespace dfpg::cli
