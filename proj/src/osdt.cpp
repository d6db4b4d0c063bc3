#include "tandem/osdt.hpp"

#include <cmath>

#include "tandem/errors.hpp"

namespace tandem {

double ObliviousTree::temperature(std::size_t level) const {
  return std::exp(log_temperatures.value()[level]);
}

void ObliviousTree::set_temperature(std::size_t level, double t) {
  if (!(t > 0.0) || !std::isfinite(t))
    throw RouteError("temperature must be positive and finite, got " + std::to_string(t));
  log_temperatures.mutable_value()[level] = std::log(t);
}

OsdtEncoder::OsdtEncoder(std::size_t dim, std::size_t trees, std::size_t depth, bool gated,
                         std::size_t gate_hidden, double noise_sigma, Rng& tree_init,
                         Rng& gate_init)
    : dim_(dim), depth_(depth) {
  if (trees == 0) throw RouteError("the ensemble needs at least one tree");
  if (depth == 0 || depth > 16) throw RouteError("tree depth must lie in [1,16]");
  std::normal_distribution<double> proj(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  for (std::size_t t = 0; t < trees; ++t) {
    ObliviousTree tree;
    for (std::size_t l = 0; l < depth; ++l) {
      Tensor w(dim, 1);
      for (std::size_t i = 0; i < dim; ++i) w[i] = proj(tree_init);
      tree.projections.push_back(ad::parameter(std::move(w)));
    }
    tree.thresholds = ad::parameter(Tensor(1, depth, 0.0));
    tree.log_temperatures = ad::parameter(Tensor(1, depth, 0.0));  // T = 1
    trees_.push_back(std::move(tree));
  }
  if (gated) {
    gates_.resize(trees);
    for (auto& levels : gates_)
      for (std::size_t l = 0; l < depth; ++l) levels.emplace_back(dim, gate_hidden, noise_sigma, gate_init);
  }
}

ad::Var OsdtEncoder::split_scores(const ad::Var& x, std::size_t t, GateMode mode,
                                  Rng* noise) const {
  if (x.cols() != dim_)
    throw RouteError("input has " + std::to_string(x.cols()) + " features, encoder expects " +
                     std::to_string(dim_));
  const ObliviousTree& tree = trees_.at(t);
  std::vector<ad::Var> levels;
  levels.reserve(depth_);
  for (std::size_t l = 0; l < depth_; ++l) {
    ad::Var xl = gated() ? apply_gate(x, gates_[t][l].gate(x, mode, noise)) : x;
    levels.push_back(ad::matmul(xl, tree.projections[l]));
  }
  return ad::add_row(ad::concat_cols(levels), ad::scalar_mul(tree.thresholds, -1.0));
}

ad::Var OsdtEncoder::route(const ad::Var& x, std::size_t t, GateMode mode, Rng* noise) const {
  const ObliviousTree& tree = trees_.at(t);
  for (std::size_t l = 0; l < depth_; ++l) {
    const double temp = tree.temperature(l);
    if (!(temp > 0.0) || !std::isfinite(temp))
      throw RouteError("tree " + std::to_string(t) + " level " + std::to_string(l) +
                       " has non-positive temperature");
  }
  ad::Var inv_temp = ad::exp(ad::scalar_mul(tree.log_temperatures, -1.0));
  return ad::leaf_probabilities(ad::mul_row(split_scores(x, t, mode, noise), inv_temp));
}

ad::Var OsdtEncoder::encode(const ad::Var& x, GateMode mode, Rng* noise) const {
  if (trees_.empty()) throw RouteError("empty ensemble");
  std::vector<ad::Var> per_tree;
  per_tree.reserve(trees_.size());
  for (std::size_t t = 0; t < trees_.size(); ++t) per_tree.push_back(route(x, t, mode, noise));
  return ad::average(per_tree);
}

std::vector<std::size_t> OsdtEncoder::hard_route(const Tensor& x, std::size_t t) const {
  const Tensor s = split_scores(ad::constant(x), t, GateMode::kDeterministic, nullptr).value();
  std::vector<std::size_t> leaves(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::size_t leaf = 0;
    for (std::size_t l = 0; l < depth_; ++l) {
      const double v = s(r, l);
      if (v == 0.0)
        throw BoundaryError("row " + std::to_string(r) + " sits on the level-" +
                            std::to_string(l) + " split boundary");
      leaf = (leaf << 1) | (v > 0.0 ? 1U : 0U);
    }
    leaves[r] = leaf;
  }
  return leaves;
}

Tensor OsdtEncoder::aggregate_gate(const Tensor& x) const {
  if (!gated()) return Tensor(x.rows(), x.cols(), 1.0);
  Tensor acc(x.rows(), x.cols());
  for (const auto& levels : gates_)
    for (const GateNet& g : levels) {
      const Tensor m = g.mask(x).g;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m[i];
    }
  const double w = 1.0 / static_cast<double>(trees_.size() * depth_);
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] *= w;
  return acc;
}

void OsdtEncoder::collect_trees(const std::string& prefix, ParamList& out) const {
  for (std::size_t t = 0; t < trees_.size(); ++t) {
    const std::string base = prefix + ".tree" + std::to_string(t);
    for (std::size_t l = 0; l < depth_; ++l)
      out.push_back({base + ".w" + std::to_string(l), trees_[t].projections[l]});
    out.push_back({base + ".tau", trees_[t].thresholds});
    out.push_back({base + ".log_temp", trees_[t].log_temperatures});
  }
}

void OsdtEncoder::collect_gates(const std::string& prefix, ParamList& out) const {
  for (std::size_t t = 0; t < gates_.size(); ++t)
    for (std::size_t l = 0; l < gates_[t].size(); ++l)
      gates_[t][l].collect(prefix + ".gate" + std::to_string(t) + "_" + std::to_string(l), out);
}

void OsdtEncoder::collect(const std::string& prefix, ParamList& out) const {
  collect_trees(prefix, out);
  collect_gates(prefix, out);
}

}  // namespace tandem
