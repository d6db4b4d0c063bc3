#include <doctest.h>

#include <cmath>

#include "tandem/errors.hpp"
#include "tandem/osdt.hpp"
#include "test_util.hpp"

using namespace tandem;
using testutil::random_tensor;

namespace {

OsdtEncoder make(std::size_t dim, std::size_t trees, std::size_t depth, bool gated,
                 std::uint64_t seed) {
  Rng t = stream(seed, "trees"), g = stream(seed, "gates");
  return OsdtEncoder(dim, trees, depth, gated, 0, 0.5, t, g);
}

void scramble_all(OsdtEncoder& enc, std::mt19937_64& rng) {
  for (std::size_t t = 0; t < enc.num_trees(); ++t) {
    auto& tree = enc.tree(t);
    testutil::scramble(tree.thresholds, rng, 0.5);
    testutil::scramble(tree.log_temperatures, rng, 1.0);
    if (enc.gated())
      for (std::size_t l = 0; l < enc.depth(); ++l) testutil::scramble_gate(enc.gate(t, l), rng, 1.0);
  }
}

}  // namespace

TEST_CASE("leaf distributions and ensemble outputs lie on the simplex") {
  std::mt19937_64 rng(1);
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    auto enc = make(7, 3, 1 + seed % 4, seed % 2 == 0, seed);
    scramble_all(enc, rng);
    const ad::Var x = ad::constant(random_tensor(20, 7, rng, -2.0, 2.0));
    Rng noise = stream(seed, "noise");
    for (std::size_t t = 0; t < enc.num_trees(); ++t) {
      const Tensor p = enc.route(x, t, GateMode::kStochastic, &noise).value();
      for (std::size_t r = 0; r < p.rows(); ++r) {
        double s = 0.0;
        for (double v : p.row_span(r)) {
          CHECK(v >= 0.0);
          s += v;
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
      }
    }
    const Tensor z = enc.encode(x, GateMode::kDeterministic, nullptr).value();
    CHECK(z.cols() == enc.latent_dim());
    for (std::size_t r = 0; r < z.rows(); ++r) {
      double s = 0.0;
      for (double v : z.row_span(r)) s += v;
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("route matches an independent per-leaf product") {
  std::mt19937_64 rng(2);
  auto enc = make(4, 1, 3, false, 2);
  scramble_all(enc, rng);
  const Tensor x = random_tensor(5, 4, rng);
  const auto& tree = enc.tree(0);
  const Tensor p = enc.route(ad::constant(x), 0, GateMode::kDeterministic, nullptr).value();
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t leaf = 0; leaf < 8; ++leaf) {
      double want = 1.0;
      for (std::size_t l = 0; l < 3; ++l) {
        double s = -tree.thresholds.value()[l];
        for (std::size_t d = 0; d < 4; ++d) s += x(r, d) * tree.projections[l].value()[d];
        const double u = s / tree.temperature(l);
        const bool bit = (leaf >> (2 - l)) & 1u;
        want *= 1.0 / (1.0 + std::exp(bit ? -u : u));
      }
      CHECK(p(r, leaf) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("near-zero temperature recovers the hard route") {
  std::mt19937_64 rng(3);
  std::size_t agree = 0, cases = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto enc = make(6, 2, 3, true, seed + 10);
    scramble_all(enc, rng);
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t l = 0; l < 3; ++l) enc.tree(t).set_temperature(l, 1e-4);
    const Tensor x = random_tensor(40, 6, rng, -1.0, 1.0);
    for (std::size_t t = 0; t < 2; ++t) {
      const Tensor s = enc.split_scores(ad::constant(x), t, GateMode::kDeterministic, nullptr).value();
      const Tensor p = enc.route(ad::constant(x), t, GateMode::kDeterministic, nullptr).value();
      const auto hard = enc.hard_route(x, t);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        bool clear = true;
        for (std::size_t l = 0; l < 3; ++l) clear = clear && std::abs(s(r, l)) > 0.01;
        if (!clear) continue;
        ++cases;
        std::size_t best = 0;
        for (std::size_t k = 1; k < p.cols(); ++k)
          if (p(r, k) > p(r, best)) best = k;
        agree += best == hard[r];
      }
    }
  }
  CHECK(cases > 100);
  CHECK(agree == cases);
}

TEST_CASE("temperature and boundary errors") {
  auto enc = make(3, 1, 2, false, 4);
  CHECK_THROWS_AS(enc.tree(0).set_temperature(0, 0.0), RouteError);
  CHECK_THROWS_AS(enc.tree(0).set_temperature(0, -1.0), RouteError);
  CHECK_THROWS_AS(make(3, 0, 2, false, 0), RouteError);
  CHECK_THROWS_AS(make(3, 1, 0, false, 0), RouteError);
  // Zero input and zero thresholds put every level exactly on its boundary.
  CHECK_THROWS_AS(enc.hard_route(Tensor(1, 3, 0.0), 0), BoundaryError);
  CHECK_THROWS_AS(enc.encode(ad::constant(Tensor(1, 4)), GateMode::kDeterministic, nullptr),
                  RouteError);
}

TEST_CASE("aggregate gate is the mean of every level's deterministic mask") {
  std::mt19937_64 rng(5);
  auto enc = make(5, 2, 3, true, 5);
  const Tensor x = random_tensor(4, 5, rng);
  CHECK(enc.aggregate_gate(x) == Tensor(4, 5, 0.5));
  scramble_all(enc, rng);
  Tensor want(4, 5, 0.0);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t l = 0; l < 3; ++l) {
      const Tensor g = enc.gate(t, l).mask(x).g;
      for (std::size_t i = 0; i < want.size(); ++i) want[i] += g[i] / 6.0;
    }
  const Tensor got = enc.aggregate_gate(x);
  CHECK(testutil::max_abs_diff(got, want) < 1e-14);
  for (std::size_t i = 0; i < got.size(); ++i) CHECK((got[i] >= 0.0 && got[i] <= 1.0));
  auto single = make(5, 1, 1, true, 6);
  testutil::scramble_gate(single.gate(0, 0), rng);
  CHECK(single.aggregate_gate(x) == single.gate(0, 0).mask(x).g);
  auto ungated = make(5, 2, 2, false, 7);
  CHECK(ungated.aggregate_gate(x) == Tensor(4, 5, 1.0));
}

TEST_CASE("ensemble gradients through trees and gates") {
  std::mt19937_64 rng(6);
  auto enc = make(4, 2, 2, true, 8);
  scramble_all(enc, rng);
  const ad::Var x = ad::constant(random_tensor(4, 4, rng));
  ParamList named;
  enc.collect("osdt", named);
  auto params = vars_of(named);
  const ad::Var w = ad::constant(random_tensor(4, 4, rng));
  ad::GradCheckOptions opt;
  opt.tol = 1e-5;
  const auto report = ad::grad_check(
      [&] {
        Rng noise = stream(3, "fixed");
        return ad::sum(ad::mul(enc.encode(x, GateMode::kStochastic, &noise), w));
      },
      params, opt);
  CHECK(report.passed);
}
