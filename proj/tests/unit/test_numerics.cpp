#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "doctest.h"

#include "dfpg/cli/gradcheck_suite.hpp"
#include "dfpg/numerics/adam.hpp"
#include "dfpg/numerics/gradcheck.hpp"
#include "dfpg/numerics/ops.hpp"
#include "dfpg/numerics/rng.hpp"
#include "dfpg/numerics/tensor.hpp"
#include "dfpg/numerics/tensor_io.hpp"

using namespace dfpg;

TEST_CASE("softmax of zeros is uniform") {
  const Tensor p = softmax(Tensor({3}));
  for (float v : p.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-7));
}

TEST_CASE("softmax saturates without overflow") {
  const Tensor p = softmax(Tensor({3}, std::vector<float>{1000, 0, 0}));
  CHECK(std::abs(p[0] - 1.0) < 1e-6);
  CHECK(std::abs(p[1]) < 1e-6);
  CHECK(std::abs(p[2]) < 1e-6);
}

TEST_CASE("softmax of 1,2,3 matches long double evaluation") {
  const Tensor64 p = softmax(Tensor64({3}, std::vector<double>{1, 2, 3}));
  long double z = 0;
  for (int i = 1; i <= 3; ++i) z += std::exp(static_cast<long double>(i));
  for (int i = 0; i < 3; ++i) {
    const long double want = std::exp(static_cast<long double>(i + 1)) / z;
    CHECK(std::abs(p[i] - static_cast<double>(want)) < 1e-15);
  }
}

TEST_CASE("softmax is shift invariant") {
  RngStream rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x({4, 6});
    for (float& v : x.data()) v = static_cast<float>(rng.normal() * 3);
    const float c = static_cast<float>(rng.uniform(-50, 50));
    Tensor shifted = x;
    for (float& v : shifted.data()) v += c;
    const Tensor a = softmax(x), b = softmax(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-6);
  }
}

TEST_CASE("rng streams are reproducible and derived streams differ") {
  RngStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  RngStream c = RngStream(42).derive("x"), d = RngStream(42).derive("y");
  CHECK(c.next_u64() != d.next_u64());
  // Deriving does not advance the parent.
  RngStream p(9), q(9);
  (void)p.derive("child");
  CHECK(p.next_u64() == q.next_u64());
}

TEST_CASE("splitmix64 reference values") {
  // First outputs of SplitMix64 seeded with 0, from the reference C implementation.
  RngStream r(0);
  CHECK(r.next_u64() == 0xe220a8397b1dcdafULL);
  CHECK(r.next_u64() == 0x6e789e6aa1b965f4ULL);
  CHECK(r.next_u64() == 0x06c45d188009454fULL);
}

TEST_CASE("same seed gives bitwise identical tensors") {
  auto fill = [](std::uint64_t seed) {
    RngStream rng(seed);
    Tensor t({8, 8});
    for (float& v : t.data()) v = static_cast<float>(rng.normal());
    return t;
  };
  CHECK(fill(3) == fill(3));
  CHECK(!(fill(3) == fill(4)));
}

TEST_CASE("rng distributions have the right moments") {
  RngStream rng(11);
  const int n = 200000;
  double s = 0, s2 = 0, u = 0, bsum = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
    u += rng.uniform();
    bsum += rng.beta(2.0, 3.0);
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1) < 0.02);
  CHECK(std::abs(u / n - 0.5) < 0.01);
  CHECK(std::abs(bsum / n - 0.4) < 0.01);
  const auto perm = rng.permutation(10);
  std::vector<std::size_t> sorted(perm.begin(), perm.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("gradcheck on an exact quadratic") {
  Tensor64 w({1}, std::vector<double>{3.0});
  const auto report = gradcheck([&] { return w[0] * w[0]; }, {{"w", &w}},
                                {Tensor64({1}, std::vector<double>{6.0})}, 1e-5);
  CHECK(report.max_rel_error < 1e-8);
}

TEST_CASE("gradcheck flags a biased gradient") {
  Tensor64 w({2}, std::vector<double>{0.7, -1.2});
  auto f = [&] { return std::sin(w[0]) * w[1] + w[1] * w[1]; };
  const Tensor64 biased({2}, std::vector<double>{std::cos(0.7) * -1.2 + 0.1, std::sin(0.7) + 2 * -1.2 + 0.1});
  CHECK(gradcheck(f, {{"w", &w}}, {biased}).max_rel_error > 1e-2);
  const Tensor64 exact({2}, std::vector<double>{std::cos(0.7) * -1.2, std::sin(0.7) + 2 * -1.2});
  CHECK(gradcheck(f, {{"w", &w}}, {exact}).max_rel_error < 1e-9);
}

TEST_CASE("gradcheck restores parameters and rejects non-finite losses") {
  Tensor64 w({3}, std::vector<double>{1, 2, 3});
  const Tensor64 before = w;
  gradcheck([&] { return w[0] + w[1] * w[2]; }, {{"w", &w}}, {Tensor64({3}, std::vector<double>{1, 3, 2})});
  CHECK(w == before);
  CHECK_THROWS_AS(gradcheck([&] { return std::log(w[0] - 1); }, {{"w", &w}}, {Tensor64({3})}), NumericError);
}

TEST_CASE("membership passes gradcheck on random inputs across seeds") {
  const auto rows = cli::run_gradcheck_suite(10);
  for (const auto& r : rows) {
    if (r.module.rfind("membership", 0) != 0) continue;
    INFO(r.module);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("adam with zero gradient leaves params and decays moments") {
  Tensor64 q({2}, std::vector<double>{1.0, -2.0});
  Tensor64 zero({2});
  AdamState<double> fresh;
  adam_step(fresh, {{"q", &q}}, {{"q", &zero}});
  CHECK(q[0] == 1.0);
  CHECK(q[1] == -2.0);

  Tensor64 p({2}, std::vector<double>{1.0, -2.0});
  Tensor64 g({2}, std::vector<double>{0.5, -0.5});
  AdamState<double> state;
  adam_step(state, {{"p", &p}}, {{"p", &g}});
  const double m = state.first_moment[0][0], v = state.second_moment[0][0];
  g.fill(0);
  adam_step(state, {{"p", &p}}, {{"p", &g}});
  CHECK(state.first_moment[0][0] == doctest::Approx(0.9 * m).epsilon(1e-14));
  CHECK(state.second_moment[0][0] == doctest::Approx(0.999 * v).epsilon(1e-14));
}

TEST_CASE("adam with constant gradient approaches lr * sign(g)") {
  Tensor64 p({2}, std::vector<double>{0, 0});
  const Tensor64 g({2}, std::vector<double>{3.0, -0.01});
  AdamState<double> state;
  state.config.lr = 1e-2;
  Tensor64 prev = p;
  Tensor64 grad = g;
  for (int i = 0; i < 2000; ++i) {
    prev = p;
    adam_step(state, {{"p", &p}}, {{"p", &grad}});
  }
  CHECK((p[0] - prev[0]) == doctest::Approx(-1e-2).epsilon(1e-3));
  CHECK((p[1] - prev[1]) == doctest::Approx(1e-2).epsilon(1e-3));
}

TEST_CASE("adam single step matches the formulas") {
  Tensor64 p({1}, std::vector<double>{0.5});
  Tensor64 g({1}, std::vector<double>{0.2});
  AdamState<double> state;
  state.config = {0.1, 0.9, 0.999, 1e-8};
  adam_step(state, {{"p", &p}}, {{"p", &g}});
  g[0] = -0.4;
  adam_step(state, {{"p", &p}}, {{"p", &g}});
  // Hand evaluation of two steps.
  double m = 0, v = 0, x = 0.5;
  const double grads[2] = {0.2, -0.4};
  for (int t = 1; t <= 2; ++t) {
    m = 0.9 * m + 0.1 * grads[t - 1];
    v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
  }
  CHECK(p[0] == doctest::Approx(x).epsilon(1e-12));
  CHECK(state.step == 2);
}

TEST_CASE("adam rejects non-finite gradients without touching params") {
  Tensor p({2}, std::vector<float>{1, 2});
  Tensor g({2}, std::vector<float>{0.1f, NAN});
  AdamState<float> state;
  CHECK_THROWS_AS(adam_step(state, {{"p", &p}}, {{"p", &g}}), NumericError);
  CHECK(p[0] == 1.0f);
  CHECK(p[1] == 2.0f);
}

TEST_CASE("DFPT round trip is bit exact") {
  RngStream rng(2);
  Tensor t({2, 3, 4});
  for (float& v : t.data()) v = static_cast<float>(rng.normal());
  t[5] = -0.0f;
  t[6] = 1e-40f;  // subnormal
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "DFPT");
  CHECK(static_cast<unsigned char>(bytes[4]) == kDfptVersion);
  CHECK(static_cast<unsigned char>(bytes[5]) == kDtypeF32);
  CHECK(static_cast<unsigned char>(bytes[6]) == 3);
  CHECK(bytes.size() == 7 + 3 * 4 + t.size() * 4);
  // dims little-endian
  CHECK(static_cast<unsigned char>(bytes[7]) == 2);
  CHECK(static_cast<unsigned char>(bytes[11]) == 3);
  const Tensor back = read_tensor(ss);
  CHECK(back.shape() == t.shape());
  CHECK(std::memcmp(back.raw(), t.raw(), t.size() * sizeof(float)) == 0);

  const auto path = std::filesystem::temp_directory_path() / "dfpg_unit_tensors.dfpt";
  save_tensors(path, {t, back});
  const auto many = load_tensors(path);
  REQUIRE(many.size() == 2);
  CHECK(many[1] == t);
  std::filesystem::remove(path);
}

TEST_CASE("DFPT reader rejects bad magic and truncation") {
  std::stringstream bad("XXXX\x01\x00\x01\x01\x00\x00\x00");
  CHECK_THROWS_AS(read_tensor(bad), DataError);
  Tensor t({4});
  std::stringstream ss;
  write_tensor(ss, t);
  std::string cut = ss.str().substr(0, ss.str().size() - 3);
  std::stringstream truncated(cut);
  CHECK_THROWS_AS(read_tensor(truncated), DataError);
}

TEST_CASE("tensor shape checks") {
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}).reshaped({3}), ShapeError);
  const Tensor empty;
  CHECK(empty.cast<double>().empty());
}
