#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A forward pass builds a DAG of Nodes; parameters are long-lived leaves
// shared by every graph that reads them. backward() walks the graph in
// reverse topological order and accumulates d(root)/d(leaf) into each
// requires_grad leaf's grad buffer. All ops are row-major 2-D; a "vector" is
// a 1xN tensor and a batch is BxN.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tandem/tensor.hpp"

namespace tandem::ad {

struct Node {
  Tensor value;
  Tensor grad;  // empty until first needed
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  const char* op = "leaf";
  bool requires_grad = false;
  bool is_leaf = true;
  // Piecewise ops record which branch each element took. grad_check uses this
  // to reject probes that straddle a kink.
  std::vector<std::uint8_t> regime;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad() { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  const char* op() const { return node_->op; }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

// Trainable leaf.
Var parameter(Tensor value);
// Leaf that never receives gradient (inputs, sampled noise, targets).
Var constant(Tensor value);

// ---- primitives --------------------------------------------------------------
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
// a (BxC) combined with a 1xC row broadcast over the batch.
Var add_row(const Var& a, const Var& row);
Var mul_row(const Var& a, const Var& row);
Var scalar_mul(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var leaky_relu(const Var& a, double slope);
// Projection onto [0,1]; derivative 1 on the open interval, 0 elsewhere.
Var clip01(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
// sqrt(a + eps)
Var sqrt(const Var& a, double eps);
Var sum(const Var& a);   // -> 1x1
Var mean(const Var& a);  // -> 1x1
Var sum_rows(const Var& a);  // BxC -> Bx1
Var l2_norm(const Var& a);   // BxC -> Bx1, row-wise
// Row-wise cosine similarity with each norm floored at 1e-12. -> Bx1
Var cosine_similarity(const Var& a, const Var& b);
Var concat_cols(std::span<const Var> parts);
// Elementwise mean of same-shaped tensors.
Var average(std::span<const Var> parts);

// U (BxL) of scaled split scores -> BxL^2 leaf probabilities where column
// index sum_l b_l 2^(L-1-l) gets prod_l sigmoid(+u_l)^b_l sigmoid(-u_l)^(1-b_l).
Var leaf_probabilities(const Var& u);

// Mean softmax cross-entropy of BxC logits against integer labels.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

constexpr double kCosineNormFloor = 1e-12;

struct BatchNormStats {
  Tensor running_mean;  // 1xC
  Tensor running_var;   // 1xC
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormStats(std::size_t width = 0)
      : running_mean(1, width, 0.0), running_var(1, width, 1.0) {}
};

// Per-feature normalization with scale/shift. Training mode normalizes with
// the batch's biased variance and updates the running statistics (unbiased
// variance); evaluation mode uses the running statistics. The normalizer is
// 1/sqrt(max(var, eps)), so eval mode with running (0,1) and unit scale is
// exactly the identity.
Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, bool train);

// ---- driving the graph ------------------------------------------------------
// Accumulates d(root)/d(leaf) into every requires_grad leaf. Root must be 1x1.
void backward(const Var& root);
void zero_grad(std::span<Var> params);

// One line per node in topological order: "id op shape <- parent ids".
std::string dump_graph(const Var& root);

// Concatenated branch records of every piecewise node reachable from root.
std::vector<std::uint8_t> regime_signature(const Var& root);

// ---- finite-difference verification -----------------------------------------
struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-5;
  // 0 probes every coordinate; otherwise a seeded uniform sample.
  std::size_t max_probes = 0;
  std::uint64_t seed = 0;
  // Relative error denominator is max(|analytic|, |numeric|, abs_floor).
  double abs_floor = 1e-8;
};

struct GradCheckProbe {
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool on_kink = false;  // branch pattern changed within +-h; excluded
};

struct GradCheckReport {
  std::vector<GradCheckProbe> probes;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

// `build` must be a pure function of the parameter values: any noise it uses
// has to be re-drawn from a fixed seed on every call.
GradCheckReport grad_check(const std::function<Var()>& build, std::span<Var> params,
                           const GradCheckOptions& options = {});

}  // namespace tandem::ad
