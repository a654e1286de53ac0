#include <cmath>

#include "doctest.h"

#include "dfpg/cli/gradcheck_suite.hpp"
#include "dfpg/fuzzy/fuzzy.hpp"
#include "dfpg/numerics/ops.hpp"
#include "dfpg/numerics/params.hpp"

using namespace dfpg;
using namespace dfpg::fuzzy;

namespace {

Tensor64 random_h(std::size_t k, std::size_t d, std::uint64_t seed, double scale = 1.0) {
  RngStream rng(seed);
  Tensor64 h({k, d});
  for (double& v : h.data()) v = rng.normal() * scale;
  return h;
}

/// Branch with sigma set exactly (sigma_raw from the softplus inverse).
FuzzyBranchParams<double> branch_with(BranchAxis axis, std::size_t rules, std::size_t len, double sigma,
                                      std::uint64_t seed) {
  auto b = init_branch<double>(axis, rules, len, 1.0, RngStream(seed));
  b.sigma_raw.fill(softplus_inverse(sigma - kSigmaMin));
  return b;
}

double gradcheck_row(const std::string& module) {
  for (const auto& r : cli::run_gradcheck_suite(10)) {
    if (r.module == module) return r.max_rel_error;
  }
  return 1;
}

}  // namespace

TEST_CASE("element at the centre has grade 1; one sigma away has grade 1/e") {
  auto b = branch_with(BranchAxis::patch, 1, 2, 0.7, 1);
  Tensor64 h({2, 1});
  h[0] = b.mu.at(0, 0);
  h[1] = b.mu.at(0, 1) + b.sigma(0, 1);
  const Tensor64 g = membership(h, b);
  CHECK(g.at(0, 0, 0) == 1.0);
  CHECK(g.at(0, 1, 0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(std::abs(g.at(0, 1, 0) - 0.367879) < 1e-6);
}

TEST_CASE("membership matches scalar re-evaluation") {
  for (auto axis : {BranchAxis::patch, BranchAxis::channel}) {
    const std::size_t k = 5, d = 4, rules = 3;
    const Tensor64 h = random_h(k, d, 7);
    auto b = init_branch<double>(axis, rules, axis == BranchAxis::patch ? k : d, 1.0, RngStream(8));
    RngStream jitter(9);
    for (double& v : b.sigma_raw.data()) v += jitter.normal() * 0.5;
    const Tensor64 g = membership(h, b);
    for (std::size_t m = 0; m < rules; ++m)
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < d; ++j) {
          const std::size_t a = axis == BranchAxis::patch ? p : j;
          const double s = std::log1p(std::exp(b.sigma_raw.at(m, a))) + 1e-3;
          const double diff = h.at(p, j) - b.mu.at(m, a);
          CHECK(g.at(m, p, j) == doctest::Approx(std::exp(-diff * diff / (s * s))).epsilon(1e-12));
        }
  }
}

TEST_CASE("grades lie in (0,1] and fall with distance") {
  RngStream rng(3);
  auto b = branch_with(BranchAxis::channel, 1, 1, 0.8, 2);
  const double mu = b.mu[0];
  for (int trial = 0; trial < 200; ++trial) {
    const double near = rng.uniform(0, 2), far = near + rng.uniform(0, 2);
    const double sign = rng.uniform() < 0.5 ? -1 : 1;
    Tensor64 h({2, 1});
    h[0] = mu + sign * near;
    h[1] = mu - sign * far;
    const Tensor64 g = membership(h, b);
    CHECK(g[0] > 0);
    CHECK(g[0] <= 1);
    CHECK(g[1] <= g[0]);
  }
}

TEST_CASE("effective sigma never drops below the floor") {
  FuzzyBranchParams<double> b{BranchAxis::patch, Tensor64({1, 3}), Tensor64({1, 3})};
  b.sigma_raw[0] = -50;
  b.sigma_raw[1] = -1e3;
  b.sigma_raw[2] = 0;
  for (std::size_t a = 0; a < 3; ++a) CHECK(b.sigma(0, a) >= kSigmaMin);
}

TEST_CASE("all grades 1 give activation 1") {
  const Tensor64 grades({2, 49, 3}, 1.0);
  const auto act = rule_activation(grades, BranchAxis::patch);
  for (double v : act.value.data()) CHECK(v == 1.0);
  for (double v : act.log_value.data()) CHECK(v == 0.0);
}

TEST_CASE("49 grades of 1/e give log activation -49") {
  const Tensor64 grades({1, 49, 2}, std::exp(-1.0));
  const auto act = rule_activation(grades, BranchAxis::patch);
  for (double v : act.log_value.data()) CHECK(v == doctest::Approx(-49.0).epsilon(1e-14));
  for (double v : act.value.data()) CHECK(v == doctest::Approx(std::exp(-49.0)).epsilon(1e-12));
  // float: -1 per factor summed exactly
  const Tensor fgrades({1, 49, 2}, std::exp(-1.0f));
  const auto fact = rule_activation(fgrades, BranchAxis::patch);
  CHECK(std::abs(fact.log_value[0] + 49.0f) < 1e-4);
}

TEST_CASE("a zero grade annihilates the rule") {
  Tensor64 grades({1, 4, 3}, 0.5);
  grades.at(0, 2, 1) = 0.0;
  const auto act = rule_activation(grades, BranchAxis::patch);
  CHECK(act.value.at(0, 1) == doctest::Approx(0.0));
  CHECK(act.value.at(0, 1) < 1e-30);
  CHECK(act.log_value.at(0, 1) <= -80.0);
  const auto chan = rule_activation(grades, BranchAxis::channel);
  CHECK(chan.log_value.at(2, 0) <= -80.0);
}

TEST_CASE("log-domain aggregation equals the direct product") {
  RngStream rng(12);
  for (auto axis : {BranchAxis::patch, BranchAxis::channel}) {
    Tensor64 grades({3, 6, 5});
    for (double& g : grades.data()) g = rng.uniform(0.05, 1.0);
    const auto act = rule_activation(grades, axis);
    for (std::size_t m = 0; m < 3; ++m) {
      if (axis == BranchAxis::patch) {
        for (std::size_t j = 0; j < 5; ++j) {
          double prod = 1;
          for (std::size_t p = 0; p < 6; ++p) prod *= grades.at(m, p, j);
          if (prod > 1e-30) CHECK(act.value.at(m, j) == doctest::Approx(prod).epsilon(1e-6));
        }
      } else {
        for (std::size_t p = 0; p < 6; ++p) {
          double prod = 1;
          for (std::size_t j = 0; j < 5; ++j) prod *= grades.at(m, p, j);
          if (prod > 1e-30) CHECK(act.value.at(p, m) == doctest::Approx(prod).epsilon(1e-6));
        }
      }
    }
  }
}

TEST_CASE("fused branch forward equals membership followed by rule activation") {
  for (auto axis : {BranchAxis::patch, BranchAxis::channel}) {
    const Tensor64 h = random_h(7, 4, 21);
    const auto b = init_branch<double>(axis, 5, axis == BranchAxis::patch ? 7 : 4, 1.0, RngStream(22));
    const auto fused = branch_forward(h, b);
    const auto staged = rule_activation(membership(h, b), axis);
    for (std::size_t i = 0; i < fused.log_value.size(); ++i) {
      CHECK(fused.log_value[i] == doctest::Approx(staged.log_value[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("activations stay in [0,1] in float even for far-off inputs") {
  const Tensor64 h64 = random_h(49, 32, 4, 6.0);
  const Tensor h = h64.cast<float>();
  const auto params = init_dfl<float>(DflConfig{16, 16}, 49, 32, 5, 1.0, RngStream(1));
  DflCache<float> cache;
  const auto out = dfl_forward(h, params, &cache);
  CHECK(out.image_logits.all_finite());
  CHECK(out.patch_logits.all_finite());
  for (const auto* act : {&cache.f1, &cache.f2}) {
    for (float v : act->value.data()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("zero heads give zero logits") {
  auto params = init_dfl<float>(DflConfig{8, 8}, 49, 32, 5, 1.0, RngStream(3));
  zero_fill(params.image_head);
  zero_fill(params.patch_head);
  const auto out = dfl_forward(random_h(49, 32, 5).cast<float>(), params);
  REQUIRE(out.patch_logits.dim(0) == 49);
  REQUIRE(out.patch_logits.dim(1) == 5);
  for (float v : out.image_logits.data()) CHECK(v == 0.0f);
  for (float v : out.patch_logits.data()) CHECK(v == 0.0f);
}

TEST_CASE("sum_mean fusion adds the mean patch logits to the image head") {
  DflConfig cfg{6, 6};
  auto params = init_dfl<double>(cfg, 4, 3, 3, 1.0, RngStream(6));
  RngStream rng(7);
  for (double& v : params.patch_head.w.data()) v = rng.normal();
  for (double& v : params.image_head.w.data()) v = rng.normal();
  const Tensor64 h = random_h(4, 3, 8);
  const auto fused = dfl_forward(h, params);
  params.config.fusion = Fusion::image_only;
  const auto plain = dfl_forward(h, params);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0;
    for (std::size_t k = 0; k < 4; ++k) mean += plain.patch_logits.at(k, c) / 4;
    CHECK(fused.image_logits[c] == doctest::Approx(plain.image_logits[c] + mean).epsilon(1e-12));
  }
}

TEST_CASE("patch parameters are shared across images") {
  const auto params = init_dfl<double>(DflConfig{4, 4}, 4, 3, 3, 1.0, RngStream(9));
  const Tensor64 mu_before = params.patch.mu;
  (void)dfl_forward(random_h(4, 3, 1), params);
  (void)dfl_forward(random_h(4, 3, 2), params);
  CHECK(params.patch.mu == mu_before);
  CHECK(params.patch.mu.dim(1) == 4);  // one column per spatial position
}

TEST_CASE("centres are scaled by the warm-up spread and sigma starts at 1") {
  const auto b = init_branch<double>(BranchAxis::patch, 2000, 3, 0.25, RngStream(4));
  double sq = 0;
  for (double v : b.mu.data()) sq += v * v;
  CHECK(std::sqrt(sq / double(b.mu.size())) == doctest::Approx(0.25).epsilon(0.05));
  CHECK(b.sigma(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("fuzzy layer passes gradcheck") {
  for (const char* m : {"membership.patch", "membership.channel", "rule_activation.patch",
                        "rule_activation.channel", "dfl_forward.mean_log", "dfl_forward.linear"}) {
    INFO(m);
    CHECK(gradcheck_row(m) < 1e-6);
  }
}

TEST_CASE("enum names round trip") {
  CHECK(parse_fusion(to_string(Fusion::image_only)) == Fusion::image_only);
  CHECK(parse_representation(to_string(Representation::linear)) == Representation::linear);
  CHECK_THROWS_AS(parse_fusion("concat"), ConfigError);
}
