#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"

#include "dfpg/data/dataset.hpp"
#include "dfpg/data/metrics.hpp"
#include "dfpg/data/synthetic.hpp"
#include "dfpg/numerics/rng.hpp"
#include "dfpg/numerics/tensor_io.hpp"

using namespace dfpg;
using namespace dfpg::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dfpg_unit_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

SyntheticSpec small_spec(std::uint64_t seed) {
  SyntheticSpec s;
  s.samples = 200;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("every synthetic sample has 49 patch labels consistent with its class") {
  const auto samples = gen_synthetic(small_spec(1));
  REQUIRE(samples.size() == 200);
  const auto bands = default_bands(5);
  for (const auto& s : samples) {
    CHECK(s.patch_truth.size() == 49);
    CHECK(s.image.shape() == Shape{1, 56, 56});
    const int lesions = static_cast<int>(std::count(s.patch_truth.begin(), s.patch_truth.end(), s.label));
    if (s.label == 1) {
      CHECK(s.lesion_count == 0);
      CHECK(std::all_of(s.patch_truth.begin(), s.patch_truth.end(), [](int c) { return c == 1; }));
    } else {
      CHECK(lesions == s.lesion_count);
      CHECK(std::all_of(s.patch_truth.begin(), s.patch_truth.end(),
                        [&](int c) { return c == 1 || c == s.label; }));
    }
    CHECK(class_for_count(bands, s.lesion_count) == s.label);
  }
}

TEST_CASE("sorting by lesion count never decreases the label") {
  auto samples = gen_synthetic(small_spec(2));
  std::sort(samples.begin(), samples.end(),
            [](const OrdinalSample& a, const OrdinalSample& b) { return a.lesion_count < b.lesion_count; });
  for (std::size_t i = 1; i < samples.size(); ++i) CHECK(samples[i].label >= samples[i - 1].label);
}

TEST_CASE("generator is deterministic and seed sensitive") {
  const auto a = gen_synthetic(small_spec(3)), b = gen_synthetic(small_spec(3)), c = gen_synthetic(small_spec(4));
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].patch_truth == b[i].patch_truth);
  }
  CHECK(!(a[0].image == c[0].image));
}

TEST_CASE("imbalanced preset follows the DR class mass") {
  const auto mass = imbalanced_dr_mass();
  REQUIRE(mass.size() == 5);
  CHECK(mass[0] == doctest::Approx(0.735));
  const auto quotas = class_quotas(mass, 2000);
  std::size_t total = 0;
  for (auto q : quotas) total += q;
  CHECK(total == 2000);
  CHECK(quotas[0] == 1470);
  CHECK(quotas[4] == 40);
  SyntheticSpec s = imbalanced_preset(1);
  s.samples = 400;
  std::vector<int> counts(5);
  for (const auto& x : gen_synthetic(s)) ++counts[x.label - 1];
  CHECK(counts[0] == 294);
}

TEST_CASE("impossible specs are rejected") {
  SyntheticSpec s = small_spec(1);
  s.lesion_bands = {{0, 0}, {1, 2}, {3, 5}, {6, 9}, {10, 50}};
  CHECK_THROWS_AS(validate(s), ConfigError);
  s.lesion_bands = {{0, 0}, {1, 3}, {3, 5}, {6, 9}, {10, 14}};
  CHECK_THROWS_AS(validate(s), ConfigError);
  s = small_spec(1);
  s.image_side = 50;
  CHECK_THROWS_AS(validate(s), ConfigError);
}

TEST_CASE("training view drops patch truth") {
  const auto samples = gen_synthetic(small_spec(5));
  const Dataset ds = strip_truth(samples);
  REQUIRE(ds.size() == samples.size());
  CHECK(ds[7].id == samples[7].id);
  CHECK(labels_of(ds)[7] == samples[7].label);
}

TEST_CASE("load_folder: empty CSV gives an empty dataset") {
  const auto dir = scratch("empty");
  write_file(dir / "labels.csv", "filename,label\n");
  CHECK(load_folder(dir, dir / "labels.csv", {}).empty());
}

TEST_CASE("load_folder: missing file is named") {
  const auto dir = scratch("missing");
  write_file(dir / "labels.csv", "filename,label\nghost.dfpt,2\n");
  try {
    load_folder(dir, dir / "labels.csv", {});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("ghost.dfpt") != std::string::npos);
  }
}

TEST_CASE("load_folder: rows come back sorted by filename") {
  const auto dir = scratch("three");
  const Tensor img({1, 56, 56}, 0.5f);
  for (const char* n : {"b.dfpt", "a.dfpt", "c.dfpt"}) save_tensors(dir / n, {img});
  write_file(dir / "labels.csv", "filename,label\nc.dfpt,3\na.dfpt,1\nb.dfpt,2\n");
  const auto ds = load_folder(dir, dir / "labels.csv", {});
  REQUIRE(ds.size() == 3);
  CHECK(ds[0].id == "a");
  CHECK(ds[1].id == "b");
  CHECK(ds[2].id == "c");
  CHECK(labels_of(ds) == std::vector<int>{1, 2, 3});
}

TEST_CASE("load_folder: malformed rows report the line") {
  const auto dir = scratch("bad");
  write_file(dir / "labels.csv", "filename,label\na.dfpt,1\nb.dfpt,seven\n");
  try {
    load_folder(dir, dir / "labels.csv", {});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
  write_file(dir / "labels.csv", "filename,label\na.dfpt,9\n");
  CHECK_THROWS_AS(load_folder(dir, dir / "labels.csv", {}), DataError);
}

TEST_CASE("PNG images are read and resized") {
  const auto dir = scratch("png");
  Tensor img({1, 28, 28});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = float(i % 28) / 27.0f;
  write_png_gray(dir / "x.png", img);
  const Tensor back = read_png(dir / "x.png", 56, 1);
  CHECK(back.shape() == Shape{1, 56, 56});
  CHECK(back.at(0, 10, 0) < 0.05f);
  CHECK(back.at(0, 10, 55) > 0.95f);
  write_file(dir / "labels.csv", "filename,label\nx.png,4\n");
  CHECK(load_folder(dir, dir / "labels.csv", {})[0].label == 4);
}

TEST_CASE("synthetic datasets round trip through the folder format") {
  const auto dir = scratch("roundtrip");
  SyntheticSpec s = small_spec(6);
  s.samples = 12;
  const auto samples = gen_synthetic(s);
  save_synthetic(dir, samples);
  const auto ds = load_folder(dir, dir / "labels.csv", {});
  const auto truth = load_patch_truth(dir / "patch_truth.csv");
  REQUIRE(ds.size() == 12);
  REQUIRE(truth.size() == 12);
  for (const auto& s : samples) {
    const auto it = std::find_if(ds.begin(), ds.end(), [&](const LabeledImage& x) { return x.id == s.id; });
    REQUIRE(it != ds.end());
    CHECK(it->image == s.image);
    CHECK(it->label == s.label);
  }
  CHECK(truth[0].second.size() == 49);
}

TEST_CASE("k-fold partitions with balanced sizes") {
  const auto f = kfold_split(10, 5, 1);
  REQUIRE(f.size() == 5);
  std::set<std::size_t> all;
  for (const auto& fold : f) {
    CHECK(fold.size() == 2);
    CHECK(std::is_sorted(fold.begin(), fold.end()));
    all.insert(fold.begin(), fold.end());
  }
  CHECK(all.size() == 10);

  const auto big = kfold_split(35126, 10, 7);
  std::size_t total = 0;
  for (const auto& fold : big) {
    CHECK((fold.size() == 3512 || fold.size() == 3513));
    total += fold.size();
  }
  CHECK(total == 35126);
  CHECK(kfold_split(35126, 10, 7) == big);
  CHECK(kfold_split(35126, 10, 8) != big);
  CHECK_THROWS(kfold_split(3, 5, 1));
  CHECK_THROWS(kfold_split(10, 1, 1));
}

TEST_CASE("holdout split is one fold against the rest") {
  const auto folds = kfold_split(23, 5, 4);
  const auto h = holdout_split(23, 5, 2, 4);
  CHECK(h.test == folds[2]);
  CHECK(h.train.size() + h.test.size() == 23);
  CHECK(std::is_sorted(h.train.begin(), h.train.end()));
  CHECK_THROWS_AS(holdout_split(23, 5, 5, 4), ConfigError);
}

TEST_CASE("evaluate: perfect and off-by-one predictions") {
  const std::vector<int> y = {1, 2, 3, 3, 2};
  const auto perfect = evaluate(y, y, 3);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.macro_f1 == 1.0);
  CHECK(perfect.macro_precision == 1.0);
  CHECK(perfect.mae == 0.0);
  const std::vector<int> off = {2, 1, 2, 2, 3};
  CHECK(evaluate(off, y, 3).mae == 1.0);
  CHECK(evaluate(off, y, 3).accuracy == 0.0);
}

TEST_CASE("evaluate: hand-countable 6-sample case") {
  // Confusion (row = truth, col = pred):
  //   1: [2 1 0]   2: [0 1 1]   3: [0 0 1]
  const std::vector<int> labels = {1, 1, 1, 2, 2, 3};
  const std::vector<int> preds = {1, 1, 2, 2, 3, 3};
  const auto r = evaluate(preds, labels, 3);
  CHECK(r.accuracy == doctest::Approx(4.0 / 6));
  CHECK(r.precision[0] == 1.0);
  CHECK(r.precision[1] == 0.5);
  CHECK(r.precision[2] == 0.5);
  CHECK(r.recall[0] == doctest::Approx(2.0 / 3));
  CHECK(r.recall[1] == 0.5);
  CHECK(r.recall[2] == 1.0);
  CHECK(r.f1[0] == doctest::Approx(0.8));
  CHECK(r.f1[1] == doctest::Approx(0.5));
  CHECK(r.f1[2] == doctest::Approx(2.0 / 3));
  CHECK(r.macro_f1 == doctest::Approx((0.8 + 0.5 + 2.0 / 3) / 3));
  CHECK(r.mae == doctest::Approx(2.0 / 6));
}

TEST_CASE("evaluate: absent classes count as zero in macro averages") {
  const std::vector<int> y = {1, 2, 1, 2};
  const auto r = evaluate(y, y, 4);
  CHECK(r.macro_f1 == 0.5);
  CHECK(r.recall[3] == 0.0);
}

TEST_CASE("evaluate: MAE bounds accuracy and inputs are checked") {
  RngStream rng(9);
  for (int t = 0; t < 200; ++t) {
    const int c = 2 + static_cast<int>(rng.below(6));
    const std::size_t n = 1 + rng.below(40);
    std::vector<int> p(n), y(n);
    std::size_t same = 0;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = 1 + static_cast<int>(rng.below(c));
      y[i] = 1 + static_cast<int>(rng.below(c));
      same += p[i] == y[i];
    }
    const auto r = evaluate(p, y, c);
    CHECK(r.accuracy == double(same) / double(n));
    CHECK(r.mae >= 1 - r.accuracy - 1e-12);
    CHECK(r.mae <= c - 1);
    for (double v : {r.macro_precision, r.macro_recall, r.macro_f1}) CHECK((v >= 0 && v <= 1));
  }
  CHECK_THROWS_AS(evaluate(std::vector<int>{1, 2}, std::vector<int>{1}, 3), DataError);
  CHECK_THROWS_AS(evaluate(std::vector<int>{}, std::vector<int>{}, 3), DataError);
  CHECK_THROWS_AS(evaluate(std::vector<int>{4}, std::vector<int>{1}, 3), DataError);
}
