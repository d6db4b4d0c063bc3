#include <doctest.h>

#include <cmath>

#include "tandem/errors.hpp"
#include "tandem/gating.hpp"
#include "test_util.hpp"

using namespace tandem;
using testutil::random_tensor;

TEST_CASE("a fresh gate net gates every feature at exactly one half") {
  Rng init = stream(1, "gate");
  GateNet net(7, 0, kDefaultGateNoise, init);
  CHECK(net.hidden() == 32);
  CHECK(net.noise_sigma() == 0.5);
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor(5, 7, rng, -3.0, 3.0);
  const GateMask m = net.mask(x);
  for (std::size_t i = 0; i < m.g.size(); ++i) CHECK(m.g[i] == 0.5);
}

TEST_CASE("default hidden width is max(32, D)") {
  CHECK(GateNet::default_hidden(10) == 32);
  CHECK(GateNet::default_hidden(32) == 32);
  CHECK(GateNet::default_hidden(54) == 54);
}

TEST_CASE("gate values stay in [0,1] for arbitrary nets and noise") {
  std::mt19937_64 rng(3);
  std::size_t probes = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Rng init = stream(trial, "gate");
    GateNet net(6, 8, 0.5, init);
    testutil::scramble_gate(net, rng, 3.0);
    const Tensor x = random_tensor(50, 6, rng, -5.0, 5.0);
    Rng noise = stream(trial, "noise");
    for (GateMode mode : {GateMode::kDeterministic, GateMode::kStochastic}) {
      const Tensor g = net.mask(x, mode, &noise).g;
      for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK((g[i] >= 0.0 && g[i] <= 1.0));
        ++probes;
      }
    }
  }
  CHECK(probes == 20 * 2 * 50 * 6);
}

TEST_CASE("deterministic gate equals clip(0.5 + mu)") {
  std::mt19937_64 rng(4);
  Rng init = stream(4, "gate");
  GateNet net(5, 6, 0.5, init);
  testutil::scramble_gate(net, rng, 1.5);
  const Tensor x = random_tensor(8, 5, rng);
  const Tensor mu = net.mu(ad::constant(x)).value();
  const Tensor g = net.mask(x).g;
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == std::clamp(0.5 + mu[i], 0.0, 1.0));
}

TEST_CASE("stochastic gating needs a generator and is reproducible from it") {
  Rng init = stream(5, "gate");
  GateNet net(4, 0, 0.5, init);
  const Tensor x(3, 4, 0.2);
  CHECK_THROWS_AS(net.mask(x, GateMode::kStochastic, nullptr), GateError);
  Rng a = stream(9, "noise"), b = stream(9, "noise");
  const Tensor ga = net.mask(x, GateMode::kStochastic, &a).g;
  const Tensor gb = net.mask(x, GateMode::kStochastic, &b).g;
  CHECK(ga == gb);
  // Oracle: the same normal draws added to 0.5 and clipped.
  Rng c = stream(9, "noise");
  std::normal_distribution<double> eps(0.0, 0.5);
  for (std::size_t i = 0; i < ga.size(); ++i) CHECK(ga[i] == std::clamp(0.5 + eps(c), 0.0, 1.0));
  // Zero sigma ignores the generator.
  net.set_noise_sigma(0.0);
  CHECK(net.mask(x, GateMode::kStochastic, nullptr).g == Tensor(3, 4, 0.5));
}

TEST_CASE("gate gradients reach the net through mu only") {
  std::mt19937_64 rng(6);
  Rng init = stream(6, "gate");
  GateNet net(4, 5, 0.3, init);
  testutil::scramble_gate(net, rng, 0.3);
  const ad::Var x = ad::constant(random_tensor(6, 4, rng));
  std::vector<ad::Var> params{net.w1, net.b1, net.w2, net.b2};
  ad::GradCheckOptions opt;
  opt.tol = 1e-6;
  const auto report = ad::grad_check(
      [&] {
        Rng noise = stream(1, "fixed");
        return ad::sum(ad::square(apply_gate(x, net.gate(x, GateMode::kStochastic, &noise))));
      },
      params, opt);
  CHECK(report.passed);
  CHECK(report.checked > 0);
}

TEST_CASE("apply_gate multiplies elementwise and checks shapes") {
  const Tensor x = Tensor::row({2.0, -1.0, 4.0});
  const GateMask m{Tensor::row({0.5, 1.0, 0.0})};
  CHECK(apply_gate(x, m) == Tensor::row({1.0, -1.0, 0.0}));
  CHECK_THROWS_AS(apply_gate(x, GateMask{Tensor(1, 2)}), GateError);
  Rng init = stream(0, "gate");
  GateNet net(3, 0, 0.5, init);
  CHECK_THROWS_AS(net.mask(Tensor(2, 4)), GateError);
}

TEST_CASE("mean_activation averages the deterministic gate over a subset") {
  std::mt19937_64 rng(7);
  Rng init = stream(7, "gate");
  GateNet net(5, 4, 0.5, init);
  testutil::scramble_gate(net, rng, 1.0);
  const Tensor x = random_tensor(9, 5, rng);
  const Tensor g = net.mask(x).g;
  const std::vector<std::size_t> subset{1, 4};
  double want = 0.0;
  for (std::size_t r = 0; r < 9; ++r) want += g(r, 1) + g(r, 4);
  CHECK(mean_activation(net, x, subset) == doctest::Approx(want / 18).epsilon(1e-14));
  CHECK_THROWS_AS(mean_activation(net, x, std::vector<std::size_t>{}), DiagnosticsError);
  CHECK_THROWS_AS(mean_activation(net, x, std::vector<std::size_t>{5}), DiagnosticsError);
}
