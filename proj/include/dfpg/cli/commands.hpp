#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dfpg/cli/config.hpp"
#include "dfpg/cli/gradcheck_suite.hpp"
#include "dfpg/coteach/ablation.hpp"
#include "dfpg/data/metrics.hpp"

namespace dfpg::cli {

namespace fs = std::filesystem;

/*
 * Pipeline commands. Data directories follow the generator layout:
 * labels.csv (filename,label), the images it names, and optionally
 * patch_truth.csv, which is only used to report pseudo-label precision.
 * Training commands fit on the holdout train split of data.folds /
 * data.test_fold (split seed from "split") and validate on the test fold.
 * Every command writes the resolved config next to its outputs as
 * config.json (or <checkpoint>.config.json).
 */

struct LoadedData {
  data::Dataset images;
  std::vector<std::vector<int>> patch_truth;  // empty unless patch_truth.csv is present
};

/// Throws DataError when labels.csv is missing or patch_truth.csv does not match the images.
LoadedData load_data_dir(const fs::path& dir, const data::FolderOptions& options);

struct SplitData {
  data::Dataset train, test;
  std::vector<std::vector<int>> train_truth;  // aligned with train when truth is known
};
SplitData split_data(const RunConfig& config, const LoadedData& data);

enum class EvalSplit { train, test, all };
EvalSplit parse_eval_split(const std::string& s);

void cmd_gen_data(const RunConfig& config, const fs::path& out_dir);

/// Writes the checkpoint, its manifest and <checkpoint>.log.jsonl (one line per epoch).
void cmd_train_annotator(const RunConfig& config, const fs::path& data_dir, const fs::path& out_checkpoint);

void cmd_label_patches(const fs::path& checkpoint, const fs::path& data_dir, const fs::path& out_labels);

/**
 * Co-teaching. Writes model_a.ckpt, model_b.ckpt (with manifests),
 * history.jsonl, pseudo_labels.dfpl.epochN snapshots and the final
 * pseudo_labels.dfpl.
 */
void cmd_train(const RunConfig& config, const fs::path& data_dir, const fs::path& labels, const fs::path& out_dir);

/// `force_labels` replaces predictions with the labels (debug path for checking the metric plumbing).
data::MetricsReport cmd_eval(const RunConfig& config, const fs::path& checkpoint, const fs::path& data_dir,
                             EvalSplit split, bool force_labels = false);

std::vector<GradcheckRow> cmd_gradcheck();

/// Writes ablation.csv and ablation.jsonl under `out_dir` when it is non-empty.
std::vector<coteach::AblationRow> cmd_ablate(const RunConfig& config, const fs::path& data_dir,
                                             const fs::path& out_dir);

std::string metrics_table(const data::MetricsReport& report);

}  // namespace dfpg::cli
