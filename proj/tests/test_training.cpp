#include <doctest.h>

#include <cmath>

#include "tandem/errors.hpp"
#include "tandem/training.hpp"
#include "test_util.hpp"

using namespace tandem;
using testutil::random_tensor;

namespace {

ModelDims small_dims(std::size_t d) {
  ModelDims dims;
  dims.input_dim = d;
  dims.trees = 2;
  dims.depth = 2;
  return dims;
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig c;
  c.pretrain_epochs = epochs;
  c.batch_size = 16;
  c.finetune_epochs_frozen = 3;
  c.finetune_epochs_tuned = 3;
  return c;
}

std::vector<Tensor> snapshot(const ParamList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.var.value());
  return out;
}

bool same(const ParamList& params, const std::vector<Tensor>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!(params[i].var.value() == snap[i])) return false;
  return true;
}

// Two Gaussian blobs, far apart in the first two coordinates.
void blobs(std::size_t n, std::size_t d, std::uint64_t seed, Tensor& x, data::Targets& y) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.1);
  x = Tensor(n, d);
  y = data::Targets{};
  y.classes = {"a", "b"};
  for (std::size_t r = 0; r < n; ++r) {
    const int label = static_cast<int>(r % 2);
    y.labels.push_back(label);
    for (std::size_t c = 0; c < d; ++c) x(r, c) = 0.5 + noise(rng) + (c < 2 ? (label ? 0.3 : -0.3) : 0.0);
  }
}

}  // namespace

TEST_CASE("latent similarity loss examples") {
  const ad::Var z = ad::constant(Tensor(2, 3, std::vector<double>{1, 2, 3, -1, 0.5, 2}));
  const ad::Var neg = ad::constant(Tensor(2, 3, std::vector<double>{-1, -2, -3, 1, -0.5, -2}));
  const ad::Var orth = ad::constant(Tensor(2, 3, std::vector<double>{3, 0, -1, 0.5, 1, 0}));
  CHECK(std::abs(loss_lrs(z, z).value().item()) < 1e-10);
  CHECK(std::abs(loss_lrs(z, neg).value().item() - 2.0) < 1e-10);
  CHECK(std::abs(loss_lrs(z, orth).value().item() - 1.0) < 1e-10);
  CHECK_THROWS_AS(loss_lrs(z, ad::constant(Tensor(2, 2))), LossError);
}

TEST_CASE("reconstruction and alignment losses") {
  const ad::Var x = ad::constant(Tensor(2, 2, std::vector<double>{1, 0, 0, 1}));
  const ad::Var a = ad::constant(Tensor(2, 2, std::vector<double>{1, 1, 0, 1}));
  const ad::Var b = ad::constant(Tensor(2, 2, std::vector<double>{0, 0, 0, 0}));
  CHECK(loss_recon(x, &x, &x).value().item() == 0.0);
  CHECK(loss_recon(x, &a, nullptr).value().item() == 0.5);
  CHECK(loss_recon(x, &a, &b).value().item() == 0.5 + 1.0);
  CHECK(loss_align(a, b).value().item() == 1.5);
  CHECK(loss_align(a, a).value().item() == 0.0);
  CHECK_THROWS_AS(loss_recon(x, nullptr, nullptr), LossError);
}

TEST_CASE("total loss decomposes exactly into its weighted terms") {
  std::mt19937_64 rng(1);
  const Tensor batch = random_tensor(6, 5, rng, 0.0, 1.0);
  for (double la : {0.0, 0.3, 1.0, 2.5})
    for (double ll : {0.0, 1.0, 0.7}) {
      auto model = build_variant(Variant::kTandem, small_dims(5), {la, ll}, 3);
      Rng noise = stream(3, "noise");
      const LossTerms t = total_loss(model, batch, GateMode::kStochastic, &noise);
      const double want = t.recon.value().item() + la * t.align.value().item() + ll * t.lrs.value().item();
      CHECK(std::abs(t.total.value().item() - want) < 1e-12);
    }
}

TEST_CASE("no-consistency variant differs from the full model by the weighted terms") {
  std::mt19937_64 rng(2);
  const Tensor batch = random_tensor(8, 6, rng, 0.0, 1.0);
  const LossWeights w{0.8, 1.3};
  auto full = build_variant(Variant::kTandem, small_dims(6), w, 4);
  auto ablated = build_variant(Variant::kTandemNoLrsAlign, small_dims(6), w, 4);
  CHECK(ablated.weights().align == 0.0);
  CHECK(ablated.weights().lrs == 0.0);
  Rng n1 = stream(4, "noise"), n2 = stream(4, "noise");
  const LossTerms a = total_loss(full, batch, GateMode::kStochastic, &n1);
  const LossTerms b = total_loss(ablated, batch, GateMode::kStochastic, &n2);
  CHECK(a.recon.value().item() == b.recon.value().item());
  CHECK(b.total.value().item() == b.recon.value().item());
  const double diff = a.total.value().item() - b.total.value().item();
  CHECK(std::abs(diff - (w.align * a.align.value().item() + w.lrs * a.lrs.value().item())) < 1e-12);
}

TEST_CASE("variant structure") {
  const auto dims = small_dims(4);
  struct Want {
    Variant v;
    bool nn, gate_nn, osdt, osdt_gated;
  };
  for (const Want& w : {Want{Variant::kSsAe, true, false, false, false},
                        Want{Variant::kSsAeGated, true, true, false, false},
                        Want{Variant::kOsdtAeGated, false, false, true, true},
                        Want{Variant::kTandemNoGate, true, false, true, false},
                        Want{Variant::kTandemNoLrsAlign, true, true, true, true},
                        Want{Variant::kTandem, true, true, true, true}}) {
    CAPTURE(to_string(w.v));
    auto m = build_variant(w.v, dims, {}, 0);
    CHECK(m.has_nn() == w.nn);
    CHECK(m.gate_nn.has_value() == w.gate_nn);
    CHECK(m.has_osdt() == w.osdt);
    if (m.osdt) CHECK(m.osdt->gated() == w.osdt_gated);
    CHECK(parse_variant(to_string(w.v)) == w.v);
    std::mt19937_64 rng(5);
    const Tensor batch = random_tensor(4, 4, rng, 0.0, 1.0);
    Rng noise = stream(0, "noise");
    const LossTerms t = total_loss(m, batch, GateMode::kStochastic, &noise);
    if (!(w.nn && w.osdt)) {
      CHECK(t.align.value().item() == 0.0);
      CHECK(t.lrs.value().item() == 0.0);
      CHECK(t.total.value().item() == t.recon.value().item());
    }
  }
  CHECK_THROWS_AS(parse_variant("tandem_plus"), ConfigError);
}

TEST_CASE("shared components start identical across variants") {
  auto a = build_variant(Variant::kTandem, small_dims(5), {}, 11);
  auto b = build_variant(Variant::kSsAe, small_dims(5), {}, 11);
  CHECK(a.enc_nn->blocks()[0].dense.weight.value() == b.enc_nn->blocks()[0].dense.weight.value());
  CHECK(a.decoder.output_layer().weight.value() == b.decoder.output_layer().weight.value());
}

TEST_CASE("total loss gradients for small full models") {
  std::mt19937_64 rng(6);
  const Tensor batch = random_tensor(4, 5, rng, 0.0, 1.0);
  auto model = build_variant(Variant::kTandem, small_dims(5), {}, 6);
  for (auto& p : model.gate_parameters()) testutil::scramble(p.var, rng, 0.3);
  auto params = vars_of(model.pretrain_parameters());
  ad::GradCheckOptions opt;
  opt.tol = 1e-4;
  opt.max_probes = 120;
  opt.abs_floor = 1e-6;
  const auto report = ad::grad_check(
      [&] {
        Rng noise = stream(6, "noise");
        return total_loss(model, batch, GateMode::kStochastic, &noise).total;
      },
      params, opt);
  CHECK(report.passed);
}

TEST_CASE("rmsprop hand-computed step") {
  auto p = ad::parameter(Tensor::row({1.0}));
  p.grad() = Tensor::row({1.0});
  std::vector<ad::Var> ps{p};
  OptimizerState state;
  rmsprop_step(ps, state, OptimizerConfig{0.1, 0.9, 1e-8, 0.0});
  CHECK(state.sq_avg[0][0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(p.value()[0] == doctest::Approx(1.0 - 0.1 / (std::sqrt(0.1) + 1e-8)).epsilon(1e-15));
  CHECK(p.value()[0] == doctest::Approx(0.68377).epsilon(1e-5));

  // Decoupled weight decay: p <- p - lr*g/(sqrt(v)+eps) - lr*wd*p with the old p.
  auto q = ad::parameter(Tensor::row({2.0}));
  q.grad() = Tensor::row({0.0});
  std::vector<ad::Var> qs{q};
  OptimizerState s2;
  rmsprop_step(qs, s2, OptimizerConfig{0.1, 0.9, 1e-8, 0.5});
  CHECK(q.value()[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
}

TEST_CASE("rmsprop refuses non-finite gradients without touching anything") {
  auto a = ad::parameter(Tensor::row({1.0, 2.0}));
  auto b = ad::parameter(Tensor::row({3.0}));
  a.grad() = Tensor::row({0.5, 0.5});
  b.grad() = Tensor::row({std::nan("")});
  std::vector<ad::Var> ps{a, b};
  OptimizerState state;
  CHECK_THROWS_AS(rmsprop_step(ps, state, OptimizerConfig{}), OptimizerError);
  CHECK(a.value() == Tensor::row({1.0, 2.0}));
  CHECK(state.sq_avg.empty());
}

TEST_CASE("batches cover every row once and drop only a lone trailing row") {
  Rng rng = stream(0, "b");
  auto batches = make_batches(10, 4, rng);
  CHECK(batches.size() == 3);
  CHECK(batches[2].size() == 2);
  std::vector<int> seen(10, 0);
  for (const auto& b : batches)
    for (std::size_t i : b) ++seen[i];
  CHECK(seen == std::vector<int>(10, 1));
  Rng rng2 = stream(0, "b");
  auto odd = make_batches(9, 4, rng2);
  CHECK(odd.size() == 2);
  CHECK(odd[0].size() + odd[1].size() == 8);
}

TEST_CASE("zero epochs leaves the model bit-identical") {
  std::mt19937_64 rng(7);
  const Tensor pool = random_tensor(20, 5, rng, 0.0, 1.0);
  auto model = build_variant(Variant::kTandem, small_dims(5), {}, 7);
  const auto before = snapshot(model.parameters());
  const auto result = pretrain(model, pool, quick(0));
  CHECK(result.history.empty());
  CHECK(same(model.parameters(), before));
}

TEST_CASE("pretraining is deterministic and reduces the loss") {
  std::mt19937_64 rng(8);
  const Tensor pool = random_tensor(64, 6, rng, 0.0, 1.0);
  auto a = build_variant(Variant::kTandem, small_dims(6), {}, 8);
  auto b = build_variant(Variant::kTandem, small_dims(6), {}, 8);
  const auto ra = pretrain(a, pool, quick(15));
  const auto rb = pretrain(b, pool, quick(15));
  REQUIRE(ra.history.size() == 15);
  CHECK_FALSE(ra.error.has_value());
  for (std::size_t e = 0; e < 15; ++e) CHECK(ra.history[e].total == rb.history[e].total);
  CHECK(same(a.parameters(), snapshot(b.parameters())));
  CHECK(ra.history.back().total < ra.history.front().total);
  for (const auto& h : ra.history)
    CHECK(std::abs(h.total - (h.recon + h.align + h.lrs)) < 1e-9);
}

TEST_CASE("freeze-then-tune contracts are bit-exact") {
  Tensor x, xv;
  data::Targets y, yv;
  blobs(40, 6, 1, x, y);
  blobs(20, 6, 2, xv, yv);
  auto model = build_variant(Variant::kTandem, small_dims(6), {}, 9);
  pretrain(model, x, quick(3));
  const auto gates = snapshot(model.gate_parameters());
  const auto enc = snapshot(model.downstream_encoder_parameters());
  const auto osdt_trees = [&] {
    ParamList p;
    model.osdt->collect_trees("osdt", p);
    return p;
  };
  const auto trees = snapshot(osdt_trees());
  ParamList dec;
  BufferList bufs;
  model.decoder.collect("decoder", dec, bufs);
  const auto decoder = snapshot(dec);

  // Phase 1 only: the encoder cannot move.
  TrainConfig phase1 = quick(0);
  phase1.finetune_epochs_tuned = 0;
  finetune(model, x, y, xv, yv, phase1);
  CHECK(model.head.has_value());
  CHECK(same(model.gate_parameters(), gates));
  CHECK(same(model.downstream_encoder_parameters(), enc));

  // Both phases: gates, trees and decoder stay frozen; the encoder moves.
  model.head.reset();
  const auto result = finetune(model, x, y, xv, yv, quick(0));
  CHECK(same(model.gate_parameters(), gates));
  CHECK(same(osdt_trees(), trees));
  CHECK(same(dec, decoder));
  CHECK(result.history.front().phase == 1);
  bool saw_phase2 = false;
  for (const auto& h : result.history) saw_phase2 = saw_phase2 || h.phase == 2;
  CHECK(saw_phase2);
  // Every parameter is trainable again afterwards.
  for (const auto& p : model.parameters()) CHECK(p.var.requires_grad());
}

TEST_CASE("fine-tuning separates an easy problem") {
  Tensor x, xv, xt;
  data::Targets y, yv, yt;
  blobs(200, 6, 3, x, y);
  blobs(60, 6, 4, xv, yv);
  blobs(200, 6, 5, xt, yt);
  auto model = build_variant(Variant::kSsAe, small_dims(6), {}, 10);
  TrainConfig c = quick(10);
  c.finetune_epochs_frozen = 25;
  c.finetune_epochs_tuned = 25;
  c.lr = 1e-2;
  pretrain(model, x, c);
  const auto result = finetune(model, x, y, xv, yv, c);
  CHECK(result.best_metric >= 0.95);
  const auto pred = predict_labels(model, xt);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == yt.labels[i];
  CHECK(static_cast<double>(ok) / pred.size() >= 0.95);
}

TEST_CASE("fine-tuning input errors") {
  Tensor x, xv;
  data::Targets y, yv;
  blobs(10, 4, 1, x, y);
  blobs(6, 4, 2, xv, yv);
  auto model = build_variant(Variant::kSsAe, small_dims(4), {}, 0);
  data::Targets wrong_task = y;
  wrong_task.task = data::Task::kRegression;
  wrong_task.values.assign(10, 0.0);
  CHECK_THROWS_AS(finetune(model, x, wrong_task, xv, yv, quick(0)), FinetuneError);
  data::Targets short_y = y;
  short_y.labels.pop_back();
  CHECK_THROWS_AS(finetune(model, x, short_y, xv, yv, quick(0)), FinetuneError);
  data::Targets bad_label = y;
  bad_label.labels[0] = 5;
  CHECK_THROWS_AS(finetune(model, x, bad_label, xv, yv, quick(0)), FinetuneError);
  CHECK_THROWS_AS(predict(model, x), PredictError);
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.finetune_lr_factor = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
