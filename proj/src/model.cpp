#include "tandem/model.hpp"

#include "tandem/errors.hpp"

namespace tandem {
namespace {

bool variant_has_nn(Variant v) { return v != Variant::kOsdtAeGated; }
bool variant_has_osdt(Variant v) { return v != Variant::kSsAe && v != Variant::kSsAeGated; }
bool variant_gates_nn(Variant v) {
  return v == Variant::kTandem || v == Variant::kSsAeGated || v == Variant::kTandemNoLrsAlign;
}
bool variant_gates_osdt(Variant v) {
  return v == Variant::kTandem || v == Variant::kOsdtAeGated || v == Variant::kTandemNoLrsAlign;
}

ad::Var zero_scalar() { return ad::constant(Tensor::scalar(0.0)); }

Rng init_stream(std::uint64_t seed, const char* name) { return stream(seed, name); }

}  // namespace

const char* to_string(Variant v) {
  switch (v) {
    case Variant::kTandem: return "tandem";
    case Variant::kSsAe: return "ss_ae";
    case Variant::kSsAeGated: return "ss_ae_gated";
    case Variant::kOsdtAeGated: return "osdt_ae_gated";
    case Variant::kTandemNoGate: return "tandem_no_gate";
    case Variant::kTandemNoLrsAlign: return "tandem_no_lrs_align";
  }
  return "?";
}

Variant parse_variant(const std::string& tag) {
  for (Variant v : kAllVariants)
    if (tag == to_string(v)) return v;
  throw ConfigError("unknown variant '" + tag + "'");
}

TandemModel::TandemModel(Variant variant, const ModelDims& dims, const LossWeights& weights,
                         std::uint64_t seed)
    : decoder([&] {
        if (dims.input_dim == 0) throw ConfigError("input dimension must be positive");
        if (dims.depth == 0 || dims.depth > 16) throw ConfigError("depth must lie in [1,16]");
        Rng r = init_stream(seed, "decoder");
        return SharedDecoder(dims.latent_dim(), dims.input_dim, r);
      }()),
      variant_(variant),
      seed_(seed),
      dims_(dims),
      weights_(weights) {
  if (weights.align < 0.0 || weights.lrs < 0.0) throw ConfigError("loss weights must be >= 0");
  if (variant == Variant::kTandemNoLrsAlign) weights_ = LossWeights{0.0, 0.0};
  // Each component draws from its own stream, so components shared between
  // variants start identical under one seed.
  if (variant_gates_nn(variant)) {
    Rng r = init_stream(seed, "gate_nn");
    gate_nn.emplace(dims.input_dim, dims.gate_hidden, dims.noise_sigma, r);
  }
  if (variant_has_nn(variant)) {
    Rng r = init_stream(seed, "enc_nn");
    enc_nn.emplace(dims.input_dim, dims.latent_dim(), r);
  }
  if (variant_has_osdt(variant)) {
    Rng trees = init_stream(seed, "osdt_trees");
    Rng gates = init_stream(seed, "osdt_gates");
    osdt.emplace(dims.input_dim, dims.trees, dims.depth, variant_gates_osdt(variant),
                 dims.gate_hidden, dims.noise_sigma, trees, gates);
  }
}

ParamList TandemModel::gate_parameters() {
  ParamList out;
  if (gate_nn) gate_nn->collect("gate_nn", out);
  if (osdt) osdt->collect_gates("osdt", out);
  return out;
}

ParamList TandemModel::pretrain_parameters() {
  ParamList out;
  BufferList unused;
  if (gate_nn) gate_nn->collect("gate_nn", out);
  if (enc_nn) enc_nn->collect("enc_nn", out, unused);
  if (osdt) osdt->collect("osdt", out);
  decoder.collect("decoder", out, unused);
  return out;
}

ParamList TandemModel::downstream_encoder_parameters() {
  ParamList out;
  BufferList unused;
  if (predicts_with_osdt())
    osdt->collect_trees("osdt", out);
  else
    enc_nn->collect("enc_nn", out, unused);
  return out;
}

ParamList TandemModel::head_parameters() {
  ParamList out;
  if (head) head->collect("head", out);
  return out;
}

ParamList TandemModel::parameters() {
  ParamList out = pretrain_parameters();
  for (auto& p : head_parameters()) out.push_back(std::move(p));
  return out;
}

BufferList TandemModel::buffers() {
  ParamList unused;
  BufferList out;
  if (enc_nn) enc_nn->collect("enc_nn", unused, out);
  decoder.collect("decoder", unused, out);
  return out;
}

TandemModel build_variant(Variant variant, const ModelDims& dims, const LossWeights& weights,
                          std::uint64_t seed) {
  return TandemModel(variant, dims, weights, seed);
}

ad::Var loss_recon(const ad::Var& x, const ad::Var* xhat_osdt, const ad::Var* xhat_nn) {
  if (x.rows() == 0) throw LossError("empty batch");
  if (!xhat_osdt && !xhat_nn) throw LossError("reconstruction loss needs at least one branch");
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  auto term = [&](const ad::Var& xhat) {
    if (!xhat.value().same_shape(x.value()))
      throw LossError("reconstruction shape " + xhat.value().shape_str() + " vs input " +
                      x.value().shape_str());
    return ad::sum(ad::square(ad::sub(x, xhat)));
  };
  ad::Var total;
  if (xhat_osdt) total = term(*xhat_osdt);
  if (xhat_nn) total = total ? ad::add(total, term(*xhat_nn)) : term(*xhat_nn);
  return ad::scalar_mul(total, inv_n);
}

ad::Var loss_align(const ad::Var& xhat_osdt, const ad::Var& xhat_nn) {
  if (!xhat_osdt.value().same_shape(xhat_nn.value()))
    throw LossError("alignment between shapes " + xhat_osdt.value().shape_str() + " and " +
                    xhat_nn.value().shape_str());
  if (xhat_nn.rows() == 0) throw LossError("empty batch");
  return ad::scalar_mul(ad::sum(ad::square(ad::sub(xhat_osdt, xhat_nn))),
                        1.0 / static_cast<double>(xhat_nn.rows()));
}

ad::Var loss_lrs(const ad::Var& z_nn, const ad::Var& z_osdt) {
  if (!z_nn.value().same_shape(z_osdt.value()))
    throw LossError("latent shapes " + z_nn.value().shape_str() + " and " +
                    z_osdt.value().shape_str() + " differ");
  if (z_nn.rows() == 0) throw LossError("empty batch");
  return ad::mean(ad::add_scalar(ad::scalar_mul(ad::cosine_similarity(z_nn, z_osdt), -1.0), 1.0));
}

LossTerms total_loss(TandemModel& model, const Tensor& batch, GateMode mode, Rng* noise,
                     bool train) {
  if (batch.rows() == 0) throw LossError("empty batch");
  if (batch.cols() != model.dims().input_dim)
    throw LossError("batch has " + std::to_string(batch.cols()) + " features, model expects " +
                    std::to_string(model.dims().input_dim));
  LossTerms t;
  const ad::Var x = ad::constant(batch);
  if (model.enc_nn) {
    const ad::Var xg = model.gate_nn ? apply_gate(x, model.gate_nn->gate(x, mode, noise)) : x;
    t.z_nn = model.enc_nn->forward(xg, train);
    t.xhat_nn = model.decoder.forward(t.z_nn, train);
  }
  if (model.osdt) {
    t.z_osdt = model.osdt->encode(x, mode, noise);
    t.xhat_osdt = model.decoder.forward(t.z_osdt, train);
  }
  t.recon = loss_recon(x, t.xhat_osdt ? &t.xhat_osdt : nullptr, t.xhat_nn ? &t.xhat_nn : nullptr);
  if (t.xhat_nn && t.xhat_osdt) {
    t.align = loss_align(t.xhat_osdt, t.xhat_nn);
    t.lrs = loss_lrs(t.z_nn, t.z_osdt);
    const LossWeights& w = model.weights();
    t.total = ad::add(ad::add(t.recon, ad::scalar_mul(t.align, w.align)),
                      ad::scalar_mul(t.lrs, w.lrs));
  } else {
    t.align = zero_scalar();
    t.lrs = zero_scalar();
    t.total = t.recon;
  }
  return t;
}

ad::Var embed(TandemModel& model, const ad::Var& x, bool train) {
  if (x.cols() != model.dims().input_dim)
    throw ShapeError("input has " + std::to_string(x.cols()) + " features, model expects " +
                     std::to_string(model.dims().input_dim));
  if (model.predicts_with_osdt()) return model.osdt->encode(x, GateMode::kDeterministic, nullptr);
  const ad::Var xg =
      model.gate_nn ? apply_gate(x, model.gate_nn->gate(x, GateMode::kDeterministic, nullptr)) : x;
  return model.enc_nn->forward(xg, train);
}

Tensor embed(TandemModel& model, const Tensor& x) {
  return embed(model, ad::constant(x), false).value();
}

Tensor predict(TandemModel& model, const Tensor& x) {
  if (!model.head) throw PredictError("model has no fine-tuned head");
  return model.head->forward(embed(model, ad::constant(x), false)).value();
}

std::vector<int> predict_labels(TandemModel& model, const Tensor& x) {
  if (model.head && model.head->task() != data::Task::kClassification)
    throw PredictError("labels requested from a regression head");
  return argmax_rows(predict(model, x));
}

Tensor nn_gate_field(const TandemModel& model, const Tensor& x) {
  if (!model.gate_nn) return Tensor(x.rows(), x.cols(), 1.0);
  return model.gate_nn->mask(x).g;
}

}  // namespace tandem
