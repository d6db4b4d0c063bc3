#pragma once

// Ensemble of oblivious soft decision trees.
//
// Level l of a tree has one projection w_l, threshold tau_l and temperature
// T_l = exp(rho_l) shared by every node at that depth. With a per-level gate
// g_l, s_l = <w_l, x ⊙ g_l(x)> - tau_l and the probability of leaf code
// b = (b_1..b_L) is prod_l sigmoid(+s_l/T_l)^b_l sigmoid(-s_l/T_l)^(1-b_l).
// Leaf index = sum_l b_l 2^(L-l): b_1 is the most significant bit and b_l = 1
// follows the sigmoid(+) branch. The encoder output is the mean leaf
// distribution over trees.

#include <optional>
#include <vector>

#include "tandem/gating.hpp"

namespace tandem {

struct ObliviousTree {
  std::vector<ad::Var> projections;  // depth x (D x 1)
  ad::Var thresholds;                // 1 x depth
  ad::Var log_temperatures;          // 1 x depth

  std::size_t depth() const { return projections.size(); }
  double temperature(std::size_t level) const;
  // Throws RouteError unless t > 0.
  void set_temperature(std::size_t level, double t);
};

class OsdtEncoder {
 public:
  // `gated` gives every (tree, level) its own GateNet; otherwise inputs pass
  // through unchanged.
  OsdtEncoder(std::size_t dim, std::size_t trees, std::size_t depth, bool gated,
              std::size_t gate_hidden, double noise_sigma, Rng& tree_init, Rng& gate_init);

  std::size_t dim() const { return dim_; }
  std::size_t num_trees() const { return trees_.size(); }
  std::size_t depth() const { return depth_; }
  std::size_t latent_dim() const { return std::size_t{1} << depth_; }
  bool gated() const { return !gates_.empty(); }

  ObliviousTree& tree(std::size_t t) { return trees_.at(t); }
  const ObliviousTree& tree(std::size_t t) const { return trees_.at(t); }
  const GateNet& gate(std::size_t t, std::size_t level) const { return gates_.at(t).at(level); }
  GateNet& gate(std::size_t t, std::size_t level) { return gates_.at(t).at(level); }

  // B x depth matrix of unscaled split scores s_l for tree t.
  ad::Var split_scores(const ad::Var& x, std::size_t t, GateMode mode, Rng* noise) const;
  // B x 2^depth leaf distribution of tree t.
  ad::Var route(const ad::Var& x, std::size_t t, GateMode mode, Rng* noise) const;
  // B x 2^depth ensemble mean.
  ad::Var encode(const ad::Var& x, GateMode mode, Rng* noise) const;

  // Zero-temperature leaf of tree t per row (deterministic gates). Throws
  // BoundaryError if any s_l is exactly zero.
  std::vector<std::size_t> hard_route(const Tensor& x, std::size_t t) const;

  // Mean deterministic gate over all trees and levels; all ones when ungated.
  Tensor aggregate_gate(const Tensor& x) const;

  void collect(const std::string& prefix, ParamList& out) const;
  void collect_trees(const std::string& prefix, ParamList& out) const;
  void collect_gates(const std::string& prefix, ParamList& out) const;

 private:
  std::size_t dim_;
  std::size_t depth_;
  std::vector<ObliviousTree> trees_;
  std::vector<std::vector<GateNet>> gates_;  // [tree][level]
};

}  // namespace tandem
