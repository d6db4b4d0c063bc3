#include "tandem/gating.hpp"

#include <cmath>

#include "tandem/errors.hpp"

namespace tandem {

GateNet::GateNet(std::size_t dim, std::size_t hidden, double noise_sigma, Rng& init)
    : dim_(dim), hidden_(hidden == 0 ? default_hidden(dim) : hidden), noise_sigma_(noise_sigma) {
  if (dim_ == 0) throw GateError("gate net needs a positive input dimension");
  std::normal_distribution<double> n01(0.0, 1.0);
  Tensor w(dim_, hidden_);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = scale * n01(init);
  w1 = ad::parameter(std::move(w));
  b1 = ad::parameter(Tensor(1, hidden_));
  w2 = ad::parameter(Tensor(hidden_, dim_));
  b2 = ad::parameter(Tensor(1, dim_));
}

ad::Var GateNet::mu(const ad::Var& x) const {
  if (x.cols() != dim_)
    throw GateError("gate input has " + std::to_string(x.cols()) + " features, net expects " +
                    std::to_string(dim_));
  ad::Var h = ad::tanh(ad::add_row(ad::matmul(x, w1), b1));
  return ad::add_row(ad::matmul(h, w2), b2);
}

ad::Var GateNet::gate(const ad::Var& x, GateMode mode, Rng* noise) const {
  ad::Var pre = ad::add_scalar(mu(x), 0.5);
  if (mode == GateMode::kStochastic && noise_sigma_ > 0.0) {
    if (noise == nullptr) throw GateError("stochastic gating needs a noise generator");
    std::normal_distribution<double> eps(0.0, noise_sigma_);
    Tensor e(x.rows(), dim_);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = eps(*noise);
    pre = ad::add(pre, ad::constant(std::move(e)));
  }
  return ad::clip01(pre);
}

GateMask GateNet::mask(const Tensor& x, GateMode mode, Rng* noise) const {
  return GateMask{gate(ad::constant(x), mode, noise).value(), mode};
}

void GateNet::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w1", w1});
  out.push_back({prefix + ".b1", b1});
  out.push_back({prefix + ".w2", w2});
  out.push_back({prefix + ".b2", b2});
}

ad::Var apply_gate(const ad::Var& x, const ad::Var& g) {
  if (!x.value().same_shape(g.value()))
    throw GateError("gate shape " + g.value().shape_str() + " does not match input " +
                    x.value().shape_str());
  return ad::mul(x, g);
}

Tensor apply_gate(const Tensor& x, const GateMask& g) {
  return apply_gate(ad::constant(x), ad::constant(g.g)).value();
}

double mean_activation(const GateNet& net, const Tensor& x, std::span<const std::size_t> features) {
  if (features.empty()) throw DiagnosticsError("empty feature subset");
  if (x.rows() == 0) throw DiagnosticsError("no samples");
  const Tensor g = net.mask(x).g;
  double total = 0.0;
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t f : features) {
      if (f >= g.cols()) throw DiagnosticsError("feature index out of range");
      total += g(r, f);
    }
  return total / static_cast<double>(g.rows() * features.size());
}

}  // namespace tandem
