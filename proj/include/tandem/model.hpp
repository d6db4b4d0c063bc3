#pragma once

// Full dual-encoder autoencoder and its ablation variants.

#include <array>
#include <optional>
#include <string>

#include "tandem/gating.hpp"
#include "tandem/nnet.hpp"
#include "tandem/osdt.hpp"

namespace tandem {

enum class Variant {
  kTandem,            // both encoders, all gates, all losses
  kSsAe,              // neural encoder + decoder, no gates
  kSsAeGated,         // neural encoder + decoder + neural gate
  kOsdtAeGated,       // tree encoder + decoder + per-level tree gates
  kTandemNoGate,      // both encoders, every gate replaced by identity
  kTandemNoLrsAlign,  // full architecture, consistency weights forced to 0
};

const char* to_string(Variant v);
Variant parse_variant(const std::string& tag);  // throws ConfigError
constexpr std::array<Variant, 6> kAllVariants{Variant::kSsAe,        Variant::kSsAeGated,
                                             Variant::kOsdtAeGated, Variant::kTandemNoGate,
                                             Variant::kTandemNoLrsAlign, Variant::kTandem};

struct ModelDims {
  std::size_t input_dim = 0;
  std::size_t trees = 8;
  std::size_t depth = 5;
  std::size_t gate_hidden = 0;  // 0 = max(32, input_dim)
  double noise_sigma = kDefaultGateNoise;
  std::size_t latent_dim() const { return std::size_t{1} << depth; }
};

struct LossWeights {
  double align = 1.0;
  double lrs = 1.0;
};

class TandemModel {
 public:
  TandemModel(Variant variant, const ModelDims& dims, const LossWeights& weights,
              std::uint64_t seed);
  // Parameters are shared handles; a copy would alias them.
  TandemModel(const TandemModel&) = delete;
  TandemModel& operator=(const TandemModel&) = delete;
  TandemModel(TandemModel&&) = default;
  TandemModel& operator=(TandemModel&&) = default;

  Variant variant() const { return variant_; }
  std::uint64_t seed() const { return seed_; }
  const ModelDims& dims() const { return dims_; }
  // Effective weights: zero for the no-consistency variant.
  const LossWeights& weights() const { return weights_; }
  std::size_t latent_dim() const { return dims_.latent_dim(); }
  bool has_nn() const { return enc_nn.has_value(); }
  bool has_osdt() const { return osdt.has_value(); }
  // Downstream prediction runs through the tree encoder only for the
  // tree-only variant; every other variant predicts with the neural encoder.
  bool predicts_with_osdt() const { return variant_ == Variant::kOsdtAeGated; }

  std::optional<GateNet> gate_nn;
  std::optional<OsdtEncoder> osdt;
  std::optional<MlpEncoder> enc_nn;
  SharedDecoder decoder;
  std::optional<DownstreamHead> head;

  // Every parameter in a fixed order (head last, when present).
  ParamList parameters();
  ParamList pretrain_parameters();
  ParamList gate_parameters();
  // Encoder tuned in the second fine-tuning phase.
  ParamList downstream_encoder_parameters();
  ParamList head_parameters();
  BufferList buffers();

 private:
  Variant variant_;
  std::uint64_t seed_;
  ModelDims dims_;
  LossWeights weights_;
};

TandemModel build_variant(Variant variant, const ModelDims& dims, const LossWeights& weights,
                          std::uint64_t seed);

// ---- objective ---------------------------------------------------------------
// (1/N) sum_m (|x_m - xhat_osdt_m|^2 + |x_m - xhat_nn_m|^2); an absent branch
// contributes no term.
ad::Var loss_recon(const ad::Var& x, const ad::Var* xhat_osdt, const ad::Var* xhat_nn);
// (1/N) sum_m |xhat_osdt_m - xhat_nn_m|^2
ad::Var loss_align(const ad::Var& xhat_osdt, const ad::Var& xhat_nn);
// (1/N) sum_m (1 - cos(z_nn_m, z_osdt_m)), norms floored at 1e-12
ad::Var loss_lrs(const ad::Var& z_nn, const ad::Var& z_osdt);

struct LossTerms {
  ad::Var total;
  ad::Var recon;
  ad::Var align;  // constant 0 unless both branches exist
  ad::Var lrs;
  ad::Var z_nn, z_osdt, xhat_nn, xhat_osdt;  // empty for absent branches
};

// total = recon + w.align * align + w.lrs * lrs. `train` selects batchnorm
// batch statistics (and updates running stats).
LossTerms total_loss(TandemModel& model, const Tensor& batch, GateMode mode, Rng* noise,
                     bool train = true);

// ---- inference ---------------------------------------------------------------
// Gated, eval-mode downstream embedding (no noise, no grad to constants).
ad::Var embed(TandemModel& model, const ad::Var& x, bool train);
Tensor embed(TandemModel& model, const Tensor& x);
// Head outputs: BxC logits or Bx1 regression values. Throws PredictError
// without a fine-tuned head.
Tensor predict(TandemModel& model, const Tensor& x);
std::vector<int> predict_labels(TandemModel& model, const Tensor& x);

// Deterministic neural gate field (all ones when the variant has no neural gate).
Tensor nn_gate_field(const TandemModel& model, const Tensor& x);

}  // namespace tandem
