#pragma once

// Sample-specific stochastic feature gates:
//   mu(x) = W2 tanh(W1 x + b1) + b2
//   g(x)  = clip01(0.5 + mu(x) + eps),  eps ~ N(0, sigma^2), eps = 0 when deterministic
// Noise is a constant of the graph; gradients reach the net only through mu.

#include <span>

#include "tandem/autodiff.hpp"
#include "tandem/params.hpp"
#include "tandem/rng.hpp"

namespace tandem {

enum class GateMode { kStochastic, kDeterministic };

constexpr double kDefaultGateNoise = 0.5;

struct GateMask {
  Tensor g;  // B x D, every entry in [0,1]
  GateMode mode = GateMode::kDeterministic;
};

class GateNet {
 public:
  // hidden == 0 selects default_hidden(dim). The output layer starts at zero,
  // so a fresh net gates every feature at exactly 0.5.
  GateNet(std::size_t dim, std::size_t hidden, double noise_sigma, Rng& init);

  static std::size_t default_hidden(std::size_t dim) { return dim > 32 ? dim : 32; }

  std::size_t dim() const { return dim_; }
  std::size_t hidden() const { return hidden_; }
  double noise_sigma() const { return noise_sigma_; }
  void set_noise_sigma(double sigma) { noise_sigma_ = sigma; }

  ad::Var mu(const ad::Var& x) const;
  // Stochastic mode draws eps from `noise`, which must then be non-null.
  ad::Var gate(const ad::Var& x, GateMode mode, Rng* noise) const;
  GateMask mask(const Tensor& x, GateMode mode = GateMode::kDeterministic,
                Rng* noise = nullptr) const;

  void collect(const std::string& prefix, ParamList& out) const;

  ad::Var w1, b1, w2, b2;

 private:
  std::size_t dim_;
  std::size_t hidden_;
  double noise_sigma_;
};

// x ⊙ g
ad::Var apply_gate(const ad::Var& x, const ad::Var& g);
Tensor apply_gate(const Tensor& x, const GateMask& g);

// Mean deterministic gate value over all rows of X and the given features.
double mean_activation(const GateNet& net, const Tensor& x, std::span<const std::size_t> features);

}  // namespace tandem
