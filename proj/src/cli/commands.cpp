#include "dfpg/cli/commands.hpp"

#include <cstdio>
#include <fstream>
#include <map>

#include "json.hpp"

#include "dfpg/annotator/annotator.hpp"
#include "dfpg/coteach/checkpoint.hpp"
#include "dfpg/coteach/trainer.hpp"
#include "dfpg/data/synthetic.hpp"
#include "dfpg/numerics/error.hpp"

namespace dfpg::cli {

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

void require_exists(const fs::path& path, const char* what) {
  if (!fs::exists(path)) throw DataError(std::string(what) + " not found: " + path.string());
}

fs::path sibling(const fs::path& path, const std::string& suffix) { return fs::path(path.string() + suffix); }

}  // namespace

LoadedData load_data_dir(const fs::path& dir, const data::FolderOptions& options) {
  require_exists(dir / "labels.csv", "labels.csv");
  LoadedData out;
  out.images = data::load_folder(dir, dir / "labels.csv", options);
  const fs::path truth_csv = dir / "patch_truth.csv";
  if (!fs::exists(truth_csv)) return out;
  std::map<std::string, std::vector<int>> by_id;
  for (auto& [id, truth] : data::load_patch_truth(truth_csv)) by_id[id] = std::move(truth);
  for (const auto& img : out.images) {
    auto it = by_id.find(img.id);
    if (it == by_id.end()) throw DataError("patch_truth.csv has no row for image " + img.id);
    out.patch_truth.push_back(it->second);
  }
  return out;
}

SplitData split_data(const RunConfig& config, const LoadedData& data) {
  const auto split = data::holdout_split(data.images.size(), config.data.folds, config.data.test_fold,
                                         sub_seed(config.seed, "split"));
  SplitData out{data::subset(data.images, split.train), data::subset(data.images, split.test), {}};
  if (!data.patch_truth.empty()) {
    for (auto i : split.train) out.train_truth.push_back(data.patch_truth[i]);
  }
  return out;
}

EvalSplit parse_eval_split(const std::string& s) {
  if (s == "train") return EvalSplit::train;
  if (s == "test") return EvalSplit::test;
  if (s == "all") return EvalSplit::all;
  throw ConfigError("unknown split '" + s + "' (expected train | test | all)");
}

void cmd_gen_data(const RunConfig& config, const fs::path& out_dir) {
  const auto samples = data::gen_synthetic(synthetic_spec(config));
  data::save_synthetic(out_dir, samples);
  write_text(out_dir / "config.json", serialize(config));
}

void cmd_train_annotator(const RunConfig& config, const fs::path& data_dir, const fs::path& out_checkpoint) {
  const auto loaded = load_data_dir(data_dir, folder_options(config));
  const auto split = split_data(config, loaded);
  annotator::AnnotatorHistory history;
  const auto model = annotator::train_annotator(split.train, encoder_dims(config), config.data.classes,
                                                config.annotator, RngStream(config.seed).derive("annotator"),
                                                &history);
  coteach::save_annotator(out_checkpoint, model);

  const std::size_t epochs = history.epoch_accuracy.size();
  const std::size_t steps = epochs ? history.step_losses.size() / epochs : 0;
  std::string log;
  for (std::size_t e = 0; e < epochs; ++e) {
    double loss = 0;
    for (std::size_t s = 0; s < steps; ++s) loss += history.step_losses[e * steps + s];
    nlohmann::ordered_json line;
    line["epoch"] = e;
    line["mean_loss"] = steps ? loss / double(steps) : 0.0;
    line["train_accuracy"] = history.epoch_accuracy[e];
    log += line.dump() + "\n";
  }
  write_text(sibling(out_checkpoint, ".log.jsonl"), log);
  write_text(sibling(out_checkpoint, ".config.json"), serialize(config));
}

void cmd_label_patches(const fs::path& checkpoint, const fs::path& data_dir, const fs::path& out_labels) {
  require_exists(checkpoint, "annotator checkpoint");
  backbone::EncoderDims dims;
  const auto model = coteach::load_annotator(checkpoint, &dims);
  const auto loaded = load_data_dir(data_dir, {dims.image_side, dims.channels, model.classes});
  annotator::save_pseudo_labels(out_labels, annotator::label_dataset(model, loaded.images));
}

void cmd_train(const RunConfig& config, const fs::path& data_dir, const fs::path& labels, const fs::path& out_dir) {
  require_exists(labels, "pseudo-label file");
  const auto loaded = load_data_dir(data_dir, folder_options(config));
  const auto split = split_data(config, loaded);
  const auto records = annotator::load_pseudo_labels(labels);
  fs::create_directories(out_dir);

  coteach::TrainOptions options;
  options.validation = &split.test;
  if (!split.train_truth.empty()) options.patch_truth = &split.train_truth;
  options.snapshot_prefix = out_dir / "pseudo_labels.dfpl";
  const auto result = coteach::train_coteaching(model_spec(config, coteach::ModelKind::dfl), split.train, records,
                                                coteach_config(config), RngStream(config.seed).derive("train"),
                                                options);
  coteach::save_model(out_dir / "model_a.ckpt", result.a);
  coteach::save_model(out_dir / "model_b.ckpt", result.b);
  annotator::save_pseudo_labels(out_dir / "pseudo_labels.dfpl", result.labels);
  write_text(out_dir / "history.jsonl", coteach::history_jsonl(result.history, config.data.classes));
  write_text(out_dir / "config.json", serialize(config));
}

data::MetricsReport cmd_eval(const RunConfig& config, const fs::path& checkpoint, const fs::path& data_dir,
                             EvalSplit which, bool force_labels) {
  require_exists(checkpoint, "model checkpoint");
  backbone::EncoderDims dims;
  const auto model = coteach::load_model(checkpoint, &dims);
  const auto loaded = load_data_dir(data_dir, {dims.image_side, dims.channels, model.classes});
  data::Dataset images;
  if (which == EvalSplit::all) {
    images = loaded.images;
  } else {
    auto split = split_data(config, loaded);
    images = which == EvalSplit::train ? std::move(split.train) : std::move(split.test);
  }
  if (!force_labels) return coteach::evaluate_model(model, images);
  const auto labels = data::labels_of(images);
  return data::evaluate(labels, labels, model.classes);
}

std::vector<GradcheckRow> cmd_gradcheck() { return run_gradcheck_suite(); }

std::vector<coteach::AblationRow> cmd_ablate(const RunConfig& config, const fs::path& data_dir,
                                             const fs::path& out_dir) {
  const auto loaded = load_data_dir(data_dir, folder_options(config));
  const auto rows = coteach::run_ablation(loaded.images, loaded.patch_truth.empty() ? nullptr : &loaded.patch_truth,
                                          ablation_setup(config));
  if (out_dir.empty()) return rows;
  std::string csv = "config,seed,accuracy,macro_precision,macro_recall,macro_f1,mae";
  for (int c = 1; c <= config.data.classes; ++c) csv += ",recall_" + std::to_string(c);
  csv += "\n";
  std::string jsonl;
  for (const auto& r : rows) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%llu,%.17g,%.17g,%.17g,%.17g,%.17g", r.config.c_str(),
                  static_cast<unsigned long long>(r.seed), r.metrics.accuracy, r.metrics.macro_precision,
                  r.metrics.macro_recall, r.metrics.macro_f1, r.metrics.mae);
    csv += buf;
    for (double v : r.metrics.recall) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      csv += buf;
    }
    csv += "\n";
    nlohmann::ordered_json line;
    line["config"] = r.config;
    line["seed"] = r.seed;
    line["metrics"] = nlohmann::ordered_json::parse(data::metrics_json(r.metrics));
    if (r.precision_all) line["precision_all"] = *r.precision_all;
    if (r.precision_retained) line["precision_retained"] = *r.precision_retained;
    jsonl += line.dump() + "\n";
  }
  write_text(out_dir / "ablation.csv", csv);
  write_text(out_dir / "ablation.jsonl", jsonl);
  write_text(out_dir / "config.json", serialize(config));
  return rows;
}

std::string metrics_table(const data::MetricsReport& r) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "samples %zu  accuracy %.4f  macro P %.4f  R %.4f  F1 %.4f  MAE %.4f\n", r.samples,
                r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1, r.mae);
  out += buf;
  out += "class  precision  recall      f1\n";
  for (std::size_t c = 0; c < r.recall.size(); ++c) {
    std::snprintf(buf, sizeof buf, "%5zu  %9.4f  %6.4f  %6.4f\n", c + 1, r.precision[c], r.recall[c], r.f1[c]);
    out += buf;
  }
  return out;
}

}  // namespace dfpg::cli
