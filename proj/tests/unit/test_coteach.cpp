#include <cmath>
#include <filesystem>

#include "doctest.h"

#include "dfpg/cli/gradcheck_suite.hpp"
#include "dfpg/coteach/checkpoint.hpp"
#include "dfpg/coteach/losses.hpp"
#include "dfpg/coteach/trainer.hpp"
#include "dfpg/data/synthetic.hpp"
#include "dfpg/numerics/ops.hpp"

using namespace dfpg;
using namespace dfpg::coteach;

namespace {

struct Tiny {
  data::Dataset train;
  std::vector<std::vector<int>> truth;
  std::vector<annotator::PseudoLabelRecord> labels;
  ModelSpec spec;
};

Tiny tiny(std::size_t n = 24, std::uint64_t seed = 3) {
  data::SyntheticSpec s;
  s.image_side = 16;
  s.grid = 4;
  s.samples = n;
  s.seed = seed;
  const auto samples = data::gen_synthetic(s);
  Tiny t;
  t.train = data::strip_truth(samples);
  for (const auto& x : samples) t.truth.push_back(x.patch_truth);
  // Noisy pseudo-labels: truth with every fifth patch flipped up one grade.
  for (std::size_t i = 0; i < samples.size(); ++i) {
    annotator::PseudoLabelRecord r{samples[i].id, samples[i].patch_truth, {}, {}};
    for (std::size_t k = 0; k < r.c.size(); k += 5) r.c[k] = std::min(r.c[k] + 1, 5);
    r.w.assign(r.c.size(), 1.0f);
    r.mask.assign(r.c.size(), 1);
    t.labels.push_back(std::move(r));
  }
  t.spec.kind = ModelKind::dfl;
  t.spec.dims = backbone::EncoderDims{1, 16, 4, 6};
  t.spec.dfl = fuzzy::DflConfig{5, 5};
  return t;
}

CoteachConfig quick(int epochs) {
  CoteachConfig c;
  c.epochs = epochs;
  c.batch_size = 6;
  return c;
}

}  // namespace

TEST_CASE("loss_cls reduces to image CE and ignores an empty retained set") {
  const std::vector<double> p_img = {0.2, 0.5, 0.3};
  const Tensor64 probs({2, 3}, std::vector<double>{0.1, 0.8, 0.1, 0.3, 0.3, 0.4});
  const Tensor64 targets({2, 3}, std::vector<double>{0, 1, 0, 0.2, 0.2, 0.6});
  const std::vector<std::uint8_t> all = {1, 1}, none = {0, 0};
  CHECK(loss_cls(p_img, 2, probs, targets, all, 0.0) == -std::log(0.5));
  CHECK(loss_cls(p_img, 2, probs, targets, none, 1.0) == -std::log(0.5));
}

TEST_CASE("loss_cls matches a scalar evaluation") {
  const std::vector<double> p_img = {0.7, 0.3};
  const Tensor64 probs({2, 2}, std::vector<double>{0.6, 0.4, 0.25, 0.75});
  const Tensor64 targets({2, 2}, std::vector<double>{1, 0, 0.3, 0.7});
  const double want = -std::log(0.3) + 0.5 * (0.5 * (-std::log(0.6)) + 0.5 * (-0.3 * std::log(0.25) - 0.7 * std::log(0.75)));
  CHECK(loss_cls(p_img, 2, probs, targets, std::vector<std::uint8_t>{1, 1}, 0.5) ==
        doctest::Approx(want).epsilon(1e-14));
  const double only_second = -std::log(0.3) + 2.0 * (-0.3 * std::log(0.25) - 0.7 * std::log(0.75));
  CHECK(loss_cls(p_img, 2, probs, targets, std::vector<std::uint8_t>{0, 1}, 2.0) ==
        doctest::Approx(only_second).epsilon(1e-14));
}

TEST_CASE("loss_re examples") {
  const Tensor64 probs({2, 2}, std::vector<double>{1, 0, 0.5, 0.5});
  const Tensor64 c_bar({2, 2}, std::vector<double>{0, 1, 0.5, 0.5});
  CHECK(loss_re(probs, c_bar, std::vector<std::uint8_t>{0, 1}) == 1.0);
  CHECK(loss_re(probs, c_bar, std::vector<std::uint8_t>{1, 1}) == 0.0);
  CHECK(loss_re(probs, probs, std::vector<std::uint8_t>{0, 0}) == 0.0);
  CHECK(loss_re(probs, c_bar, std::vector<std::uint8_t>{0, 0}) == 0.5);
}

TEST_CASE("total loss") {
  CHECK(total_loss(1.5, 0.2, 10) == doctest::Approx(3.5).epsilon(1e-15));
  CHECK(total_loss(1.5, 0.2, 0) == 1.5);
  CHECK(total_loss(1.5, 0.0, 10) == 1.5);
}

TEST_CASE("gamma ramp endpoints, midpoint and monotonicity") {
  CHECK(gamma_schedule(0, 50, 1e-5, 150) == 1e-5);
  CHECK(gamma_schedule(49, 50, 1e-5, 150) == 150.0);
  CHECK(std::abs(gamma_schedule(5, 11, 1e-5, 150) - (1e-5 + 150) / 2) < 1e-9);
  double prev = -1;
  for (int e = 0; e < 50; ++e) {
    const double g = gamma_schedule(e, 50, 1e-5, 150);
    CHECK(g > prev);
    prev = g;
  }
  CHECK_THROWS_AS(gamma_schedule(0, 1, 1e-5, 150), ConfigError);
  CHECK_THROWS_AS(gamma_schedule(3, 3, 1e-5, 150), ConfigError);
}

TEST_CASE("composite loss from logits agrees with the probability-space form") {
  RngStream rng(8);
  const std::size_t k = 4, c = 3;
  Tensor64 img({c}), patch({k, c});
  for (double& v : img.data()) v = rng.normal();
  for (double& v : patch.data()) v = rng.normal();
  PatchTargets<double> t{Tensor64({k, c}), Tensor64({k, c}), {1, 0, 1, 0}};
  for (std::size_t i = 0; i < k; ++i) {
    const int cls = static_cast<int>(rng.below(c));
    t.reliable.at(i, static_cast<std::size_t>(cls)) = 1;
    for (std::size_t j = 0; j < c; ++j) t.unreliable.at(i, j) = 1.0 / c;
  }
  const LossValue lv = composite_loss<double>(img, 3, &patch, &t, 0.8, 2.5, nullptr, nullptr);
  const Tensor64 p_img = softmax(img), probs = softmax(patch);
  const double cls = loss_cls(p_img.data(), 3, probs, t.reliable, t.mask, 0.8);
  const double re = loss_re(probs, t.unreliable, t.mask);
  CHECK(lv.cls == doctest::Approx(cls).epsilon(1e-12));
  CHECK(lv.re == doctest::Approx(re).epsilon(1e-12));
  CHECK(lv.total == doctest::Approx(total_loss(cls, re, 2.5)).epsilon(1e-12));
}

TEST_CASE("composite loss passes gradcheck") {
  for (const auto& r : cli::run_gradcheck_suite(10)) {
    if (r.module.rfind("total_loss", 0) != 0) continue;
    INFO(r.module);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("co-teaching alternates models and ramps gamma") {
  const Tiny t = tiny();
  const auto res = train_coteaching(t.spec, t.train, t.labels, quick(5), RngStream(4));
  const auto& ep = res.history.epochs;
  REQUIRE(ep.size() == 5);
  for (std::size_t e = 0; e < ep.size(); ++e) {
    CHECK(ep[e].active == (e % 2 == 0 ? 'A' : 'B'));
    CHECK(std::isfinite(ep[e].l_total));
    if (e > 0) CHECK(ep[e].gamma > ep[e - 1].gamma);
  }
  CHECK(ep.front().gamma == 1e-5);
  CHECK(ep.back().gamma == 150.0);
  for (const auto& steps : res.history.step_losses) {
    CHECK(!steps.empty());
    for (double l : steps) CHECK(std::isfinite(l));
  }
  CHECK(!(res.a.dfl.patch.mu == res.b.dfl.patch.mu));
}

TEST_CASE("masks for the active model come from the fixed model's losses") {
  const Tiny t = tiny();
  int events = 0;
  TrainOptions opt;
  opt.on_filter = [&](const FilterEvent& ev) {
    ++events;
    CHECK(ev.active_id == active_model(ev.epoch));
    CHECK(ev.loss_source_id == 1 - ev.active_id);
    CHECK(&ev.active != &ev.fixed);
    CHECK(ev.losses.size() == t.train.size() * 16);
    CHECK(ev.result.w.size() == ev.losses.size());
  };
  (void)train_coteaching(t.spec, t.train, t.labels, quick(3), RngStream(2), opt);
  CHECK(events == 3);
}

TEST_CASE("degenerate configuration reproduces plain image CE training") {
  const Tiny t = tiny();
  CoteachConfig c = quick(4);
  c.beta = 0;
  c.gamma_min = c.gamma_max = 0;
  c.filtering = false;
  const auto co = train_coteaching(t.spec, t.train, t.labels, c, RngStream(9));
  CoteachConfig p = c;
  p.epochs = 2;  // model A's share of four alternating epochs
  const auto plain = train_plain(t.spec, t.train, p, RngStream(9));
  REQUIRE(!co.history.step_losses[0].empty());
  CHECK(co.history.step_losses[0] == plain.history.step_losses[0]);
  CHECK(co.a.dfl.image_head.w == plain.model.dfl.image_head.w);
}

TEST_CASE("co-teaching is deterministic given the seed") {
  const Tiny t = tiny(18, 5);
  const auto a = train_coteaching(t.spec, t.train, t.labels, quick(2), RngStream(1));
  const auto b = train_coteaching(t.spec, t.train, t.labels, quick(2), RngStream(1));
  CHECK(a.history.step_losses[0] == b.history.step_losses[0]);
  CHECK(a.history.step_losses[1] == b.history.step_losses[1]);
  CHECK(history_jsonl(a.history, 5) == history_jsonl(b.history, 5));
}

TEST_CASE("filtering off keeps every patch with unit weight") {
  const Tiny t = tiny();
  CoteachConfig c = quick(2);
  c.filtering = false;
  const auto res = train_coteaching(t.spec, t.train, t.labels, c, RngStream(3));
  for (const auto& r : res.labels) {
    for (float w : r.w) CHECK(w == 1.0f);
    for (auto m : r.mask) CHECK(m == 1);
  }
  for (const auto& e : res.history.epochs) CHECK(e.retained_fraction == 1.0);
}

TEST_CASE("pseudo-label precision over all and retained patches") {
  std::vector<annotator::PseudoLabelRecord> recs = {{"a", {1, 2, 3, 1}, {1, 1, 1, 1}, {1, 0, 1, 1}}};
  const std::vector<std::vector<int>> truth = {{1, 1, 3, 2}};
  CHECK(pseudo_label_precision(recs, truth, false) == 0.5);
  CHECK(pseudo_label_precision(recs, truth, true) == doctest::Approx(2.0 / 3));
}

TEST_CASE("label alignment rejects unknown or missing ids") {
  const Tiny t = tiny(6);
  auto labels = t.labels;
  CHECK(align_labels(t.train, labels).size() == t.train.size());
  std::swap(labels[0], labels[3]);
  const auto aligned = align_labels(t.train, labels);
  CHECK(aligned[0].image_id == t.train[0].id);
  labels[1].image_id = "nope";
  CHECK_THROWS_AS(align_labels(t.train, labels), DataError);
}

TEST_CASE("checkpoint round trip preserves predictions") {
  const Tiny t = tiny(8);
  for (auto kind : {ModelKind::dfl, ModelKind::base}) {
    ModelSpec spec = t.spec;
    spec.kind = kind;
    std::vector<const Tensor*> warm;
    for (const auto& s : t.train) warm.push_back(&s.image);
    const auto model = init_model(spec, warm, RngStream(7));
    const auto path = std::filesystem::temp_directory_path() / "dfpg_unit_model.ckpt";
    save_model(path, model);
    backbone::EncoderDims dims;
    const auto back = load_model(path, &dims);
    CHECK(dims.embed_dim == spec.dims.embed_dim);
    CHECK(back.kind == kind);
    for (const auto& s : t.train) {
      const auto x = forward(model, s.image), y = forward(back, s.image);
      CHECK(x.image_logits == y.image_logits);
      CHECK(x.patch_logits == y.patch_logits);
    }
    std::filesystem::remove(path);
    std::filesystem::remove(manifest_path(path));
  }
}

TEST_CASE("base model has no patch head") {
  const Tiny t = tiny(4);
  ModelSpec spec = t.spec;
  spec.kind = ModelKind::base;
  const auto model = init_model(spec, {&t.train[0].image}, RngStream(1));
  CHECK(!model.has_patch_head());
  CHECK(forward(model, t.train[0].image).patch_logits.empty());
}

TEST_CASE("config validation") {
  CoteachConfig c;
  CHECK_NOTHROW(validate(c));
  c.tau = 0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = CoteachConfig{};
  c.gamma_min = 2;
  c.gamma_max = 1;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = CoteachConfig{};
  c.delta = 0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  CHECK(epoch_gamma(quick(1), 0) == 1e-5);
}
