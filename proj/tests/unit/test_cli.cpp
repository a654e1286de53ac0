#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "dfpg/cli/commands.hpp"
#include "dfpg/cli/config.hpp"

using namespace dfpg;
using namespace dfpg::cli;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dfpg_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig tiny_config() {
  return parse_config(R"({
    // small enough for a unit test
    "seed": 2,
    "data": { "image_side": 16, "grid": 4, "samples": 40, "folds": 4 },
    "backbone": { "embed_dim": 6 },
    "fuzzy": { "rules_patch": 5, "rules_channel": 5 },
    "annotator": { "epochs": 2, "batch_size": 8 },
    "coteach": { "epochs": 3, "batch_size": 8 },
    "eval": { "ablation_seeds": [4] }
  })", preset("desk"));
}

}  // namespace

TEST_CASE("config round trips through JSON") {
  RunConfig c = preset("paper");
  c.seed = 77;
  c.data.class_mass = {0.5, 0.5};
  c.data.classes = 2;
  c.data.lesion_bands = {{0, 0}, {1, 4}};
  c.fuzzy.fusion = fuzzy::Fusion::image_only;
  c.annotator.mix_mode = annotator::MixMode::manifold;
  c.eval.ablation_seeds = {9, 8};
  const std::string text = serialize(c);
  const RunConfig back = parse_config(text);
  CHECK(serialize(back) == text);
  CHECK(back.seed == 77);
  CHECK(back.data.lesion_bands == c.data.lesion_bands);
  CHECK(back.fuzzy.fusion == fuzzy::Fusion::image_only);
}

TEST_CASE("unknown keys are rejected with their path") {
  try {
    parse_config(R"({"coteach": {"epoch": 3}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("coteach.epoch") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config(R"({"nonsense": 1})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"coteach": {"epochs": "ten"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config("{ not json"), ConfigError);
}

TEST_CASE("comments are allowed and missing keys keep the base") {
  const RunConfig c = parse_config("/* block */ {\n // line\n \"filter\": {\"tau\": 0.8}\n}", preset("desk"));
  CHECK(c.filter.tau == 0.8);
  CHECK(c.filter.delta == 0.5);
  CHECK(c.coteach.epochs == 10);
}

TEST_CASE("presets carry the stage lengths and hyperparameter defaults") {
  const RunConfig paper = preset("paper"), desk = preset("desk");
  CHECK(paper.annotator.epochs == 50);
  CHECK(paper.coteach.epochs == 50);
  CHECK(desk.annotator.epochs == 10);
  CHECK(desk.coteach.epochs == 10);
  CHECK(paper.filter.tau == 0.9);
  CHECK(paper.filter.delta == 0.5);
  CHECK(paper.coteach.beta == 1.0);
  CHECK(paper.coteach.gamma_min == 1e-5);
  CHECK(paper.coteach.gamma_max == 150);
  CHECK(paper.coteach.batch_size == 24);
  CHECK(encoder_dims(paper).patches() == 49);
  CHECK_THROWS_AS(preset("huge"), ConfigError);
}

TEST_CASE("validation rejects out-of-range values") {
  RunConfig c = preset("desk");
  c.filter.tau = 1.5;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = preset("desk");
  c.data.test_fold = 5;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = preset("desk");
  c.data.grid = 9;
  CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("sub seeds differ by label and are stable") {
  CHECK(sub_seed(1, "data") == sub_seed(1, "data"));
  CHECK(sub_seed(1, "data") != sub_seed(1, "split"));
  CHECK(sub_seed(1, "data") != sub_seed(2, "data"));
  CHECK(synthetic_spec(preset("paper")).seed == sub_seed(1, "data"));
}

TEST_CASE("full pipeline through the commands") {
  const RunConfig cfg = tiny_config();
  const fs::path root = scratch("pipeline");
  cmd_gen_data(cfg, root / "data");
  CHECK(fs::exists(root / "data" / "labels.csv"));
  CHECK(fs::exists(root / "data" / "patch_truth.csv"));
  CHECK(parse_config(slurp(root / "data" / "config.json")).seed == 2);

  cmd_train_annotator(cfg, root / "data", root / "ann.ckpt");
  const std::string log = slurp(root / "ann.ckpt.log.jsonl");
  CHECK(std::count(log.begin(), log.end(), '\n') == 2);
  CHECK(log.find("\"train_accuracy\"") != std::string::npos);

  cmd_label_patches(root / "ann.ckpt", root / "data", root / "labels.dfpl");
  const auto labels = annotator::load_pseudo_labels(root / "labels.dfpl");
  CHECK(labels.size() == 40);
  CHECK(labels[0].c.size() == 16);

  cmd_train(cfg, root / "data", root / "labels.dfpl", root / "run1");
  cmd_train(cfg, root / "data", root / "labels.dfpl", root / "run2");
  for (const char* f : {"history.jsonl", "model_a.ckpt", "model_b.ckpt", "pseudo_labels.dfpl"}) {
    INFO(f);
    REQUIRE(fs::exists(root / "run1" / f));
    CHECK(slurp(root / "run1" / f) == slurp(root / "run2" / f));
  }
  CHECK(fs::exists(root / "run1" / "pseudo_labels.dfpl.epoch0"));
  const std::string hist = slurp(root / "run1" / "history.jsonl");
  CHECK(std::count(hist.begin(), hist.end(), '\n') == 3);
  CHECK(hist.find("\"active\":\"B\"") != std::string::npos);

  const auto forced = cmd_eval(cfg, root / "run1" / "model_a.ckpt", root / "data", EvalSplit::test, true);
  CHECK(forced.accuracy == 1.0);
  CHECK(forced.mae == 0.0);
  CHECK(forced.samples == 10);
  const auto real = cmd_eval(cfg, root / "run1" / "model_a.ckpt", root / "data", EvalSplit::all);
  CHECK(real.samples == 40);
  CHECK(metrics_table(real).find("macro") != std::string::npos);
}

TEST_CASE("missing data directory is a data error") {
  CHECK_THROWS_AS(load_data_dir(fs::temp_directory_path() / "dfpg_cli_nowhere", {}), DataError);
  CHECK_THROWS_AS(parse_eval_split("validation"), ConfigError);
}

TEST_CASE("gradcheck command reports every row passing") {
  const auto rows = cmd_gradcheck();
  CHECK(rows.size() >= 13);
  for (const auto& r : rows) {
    INFO(r.module);
    CHECK(r.passed);
    CHECK(r.seeds == 10);
  }
}

TEST_CASE("ablation rows come in table order") {
  RunConfig cfg = tiny_config();
  cfg.coteach.epochs = 2;
  cfg.annotator.epochs = 1;
  const fs::path root = scratch("ablate");
  cmd_gen_data(cfg, root / "data");
  const auto rows = cmd_ablate(cfg, root / "data", root / "out");
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(rows[i].config == coteach::ablation_configs()[i]);
    CHECK(rows[i].seed == 4);
  }
  CHECK(rows[2].precision_all.has_value());
  CHECK(fs::exists(root / "out" / "ablation.csv"));
  const std::string csv = slurp(root / "out" / "ablation.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') >= 5);
}
