// dfpg: synthetic data, annotator, co-teaching, evaluation and diagnostics.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "dfpg/cli/commands.hpp"
#include "dfpg/numerics/error.hpp"

namespace {

using namespace dfpg;
using namespace dfpg::cli;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string preset = "paper";
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool needs_out) {
  cmd->add_option("--config", flags.config, "config file (JSON with comments)");
  cmd->add_option("--seed", flags.seed, "overrides the config seed");
  cmd->add_option("--preset", flags.preset, "defaults to start from")->check(CLI::IsMember({"desk", "paper"}));
  auto* out = cmd->add_option("--out", flags.out, "output path");
  if (needs_out) out->required();
}

RunConfig resolve(const CommonFlags& flags) {
  RunConfig config = preset(flags.preset);
  if (!flags.config.empty()) config = load_config(flags.config, config);
  if (flags.seed) config.seed = *flags.seed;
  validate(config);
  return config;
}

int run(int argc, char** argv) {
  CLI::App app{"dual-level fuzzy patch grading pipeline"};
  app.require_subcommand(1);
  CommonFlags flags;
  std::string data_dir, labels, checkpoint, split = "test";
  bool force_labels = false;

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset to --out");
  add_common(gen, flags, true);

  auto* ann = app.add_subcommand("train-annotator", "train the patch annotator; --out is the checkpoint");
  add_common(ann, flags, true);
  ann->add_option("--data", data_dir, "dataset directory")->required();

  auto* lab = app.add_subcommand("label-patches", "write patch pseudo-labels (DFPL) to --out");
  add_common(lab, flags, true);
  lab->add_option("--checkpoint", checkpoint, "annotator checkpoint")->required();
  lab->add_option("--data", data_dir, "dataset directory")->required();

  auto* train = app.add_subcommand("train", "co-teaching; --out is a directory");
  add_common(train, flags, true);
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--labels", labels, "DFPL pseudo-label file")->required();

  auto* eval = app.add_subcommand("eval", "metrics for a model checkpoint");
  add_common(eval, flags, false);
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--split", split, "train | test | all")->check(CLI::IsMember({"train", "test", "all"}));
  eval->add_flag("--force-labels", force_labels, "debug: predict the true label for every image");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");

  auto* abl = app.add_subcommand("ablate", "base / +DFL / +DFL+PA / +DFL+PA+NPF over the ablation seeds");
  add_common(abl, flags, false);
  abl->add_option("--data", data_dir, "dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (gen->parsed()) {
    cmd_gen_data(resolve(flags), flags.out);
  } else if (ann->parsed()) {
    cmd_train_annotator(resolve(flags), data_dir, flags.out);
  } else if (lab->parsed()) {
    cmd_label_patches(checkpoint, data_dir, flags.out);
  } else if (train->parsed()) {
    cmd_train(resolve(flags), data_dir, labels, flags.out);
  } else if (eval->parsed()) {
    const auto report = cmd_eval(resolve(flags), checkpoint, data_dir, parse_eval_split(split), force_labels);
    std::cout << metrics_table(report);
    const std::string record = data::metrics_json(report);
    std::cout << record << "\n";
    if (!flags.out.empty()) {
      std::ofstream out(flags.out);
      out << record << "\n";
      if (!out) throw DataError("cannot write " + flags.out);
    }
  } else if (grad->parsed()) {
    const auto rows = cmd_gradcheck();
    std::cout << gradcheck_table(rows);
    for (const auto& r : rows) {
      if (!r.passed) return 4;
    }
  } else if (abl->parsed()) {
    const auto rows = cmd_ablate(resolve(flags), data_dir, flags.out);
    std::cout << coteach::ablation_table(rows);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dfpg::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const dfpg::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const dfpg::ShapeError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const dfpg::NumericError& e) {
    std::fprintf(stderr, "numeric abort: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
