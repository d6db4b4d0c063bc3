#include "tandem/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "tandem/errors.hpp"
#include "tandem/kernels.hpp"

namespace tandem::ad {
namespace {

using NodePtr = std::shared_ptr<Node>;

Var make_node(Tensor value, const char* op, std::vector<NodePtr> parents,
              std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  n->is_leaf = false;
  n->requires_grad = std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr& p) { return p->requires_grad; });
  n->parents = std::move(parents);
  if (n->requires_grad) n->backward = std::move(bw);
  return Var(std::move(n));
}

// Grad buffer of a parent, allocated on first touch; null if it takes no grad.
Tensor* grad_buffer(Node& n) {
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
  return &n.grad;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw ShapeError(std::string(op) + ": shapes " + a.value().shape_str() + " and " +
                     b.value().shape_str() + " differ");
}

void require_row(const Var& a, const Var& row, const char* op) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw ShapeError(std::string(op) + ": row operand " + row.value().shape_str() +
                     " does not broadcast over " + a.value().shape_str());
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <class F, class G>
Var unary(const Var& a, const char* op, F&& forward, G&& dydx) {
  const Tensor& x = a.value();
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = forward(x[i]);
  return make_node(std::move(y), op, {a.ptr()}, [dydx](Node& self) {
    Node& p = *self.parents[0];
    Tensor* g = grad_buffer(p);
    if (!g) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      (*g)[i] += self.grad[i] * dydx(p.value[i], self.value[i]);
  });
}

std::vector<Node*> topo_order(const Var& root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

}  // namespace

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "const";
  return Var(std::move(n));
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows())
    throw ShapeError("matmul: " + A.shape_str() + " x " + B.shape_str());
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C(m, n);
  kernels::gemm_nn(m, n, k, A.data(), B.data(), C.data());
  return make_node(std::move(C), "matmul", {a.ptr(), b.ptr()}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (Tensor* ga = grad_buffer(pa))
      kernels::gemm_nt(m, k, n, self.grad.data(), pb.value.data(), ga->data());
    if (Tensor* gb = grad_buffer(pb))
      kernels::gemm_tn(k, n, m, pa.value.data(), self.grad.data(), gb->data());
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor y = a.value();
  kernels::axpy(1.0, b.value().data(), y.data(), y.size());
  return make_node(std::move(y), "add", {a.ptr(), b.ptr()}, [](Node& self) {
    for (auto& p : self.parents)
      if (Tensor* g = grad_buffer(*p)) kernels::axpy(1.0, self.grad.data(), g->data(), g->size());
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor y = a.value();
  kernels::axpy(-1.0, b.value().data(), y.data(), y.size());
  return make_node(std::move(y), "sub", {a.ptr(), b.ptr()}, [](Node& self) {
    if (Tensor* g = grad_buffer(*self.parents[0]))
      kernels::axpy(1.0, self.grad.data(), g->data(), g->size());
    if (Tensor* g = grad_buffer(*self.parents[1]))
      kernels::axpy(-1.0, self.grad.data(), g->data(), g->size());
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[i];
  return make_node(std::move(y), "mul", {a.ptr(), b.ptr()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (Tensor* g = grad_buffer(pa))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * pb.value[i];
    if (Tensor* g = grad_buffer(pb))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * pa.value[i];
  });
}

Var add_row(const Var& a, const Var& row) {
  require_row(a, row, "add_row");
  Tensor y = a.value();
  const std::size_t c = y.cols();
  for (std::size_t r = 0; r < y.rows(); ++r)
    kernels::axpy(1.0, row.value().data(), y.data() + r * c, c);
  return make_node(std::move(y), "add_row", {a.ptr(), row.ptr()}, [](Node& self) {
    if (Tensor* g = grad_buffer(*self.parents[0]))
      kernels::axpy(1.0, self.grad.data(), g->data(), g->size());
    if (Tensor* g = grad_buffer(*self.parents[1])) {
      const std::size_t c = g->cols();
      for (std::size_t r = 0; r < self.grad.rows(); ++r)
        kernels::axpy(1.0, self.grad.data() + r * c, g->data(), c);
    }
  });
}

Var mul_row(const Var& a, const Var& row) {
  require_row(a, row, "mul_row");
  const Tensor& x = a.value();
  const Tensor& w = row.value();
  Tensor y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = x(r, c) * w[c];
  return make_node(std::move(y), "mul_row", {a.ptr(), row.ptr()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pw = *self.parents[1];
    const std::size_t rows = self.grad.rows(), cols = self.grad.cols();
    if (Tensor* g = grad_buffer(pa))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*g)(r, c) += self.grad(r, c) * pw.value[c];
    if (Tensor* g = grad_buffer(pw))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*g)[c] += self.grad(r, c) * pa.value(r, c);
  });
}

Var scalar_mul(const Var& a, double s) {
  return unary(a, "scalar_mul", [s](double x) { return s * x; },
               [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, "add_scalar", [s](double x) { return x + s; },
               [](double, double) { return 1.0; });
}

Var sigmoid(const Var& a) {
  return unary(a, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var leaky_relu(const Var& a, double slope) {
  Var out = unary(a, "leaky_relu", [slope](double x) { return x > 0 ? x : slope * x; },
                  [slope](double x, double) { return x > 0 ? 1.0 : slope; });
  const Tensor& x = a.value();
  auto& regime = out.node()->regime;
  regime.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) regime[i] = x[i] > 0 ? 1 : 0;
  return out;
}

Var clip01(const Var& a) {
  Var out = unary(a, "clip01", [](double x) { return std::clamp(x, 0.0, 1.0); },
                  [](double x, double) { return (x > 0.0 && x < 1.0) ? 1.0 : 0.0; });
  const Tensor& x = a.value();
  auto& regime = out.node()->regime;
  regime.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) regime[i] = x[i] <= 0.0 ? 0 : (x[i] >= 1.0 ? 2 : 1);
  return out;
}

Var exp(const Var& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, "log", [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var square(const Var& a) {
  return unary(a, "square", [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Var sqrt(const Var& a, double eps) {
  return unary(a, "sqrt", [eps](double x) { return std::sqrt(x + eps); },
               [](double, double y) { return 0.5 / y; });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_node(Tensor::scalar(s), "sum", {a.ptr()}, [](Node& self) {
    if (Tensor* g = grad_buffer(*self.parents[0])) {
      const double up = self.grad[0];
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += up;
    }
  });
}

Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_node(Tensor::scalar(s / static_cast<double>(n)), "mean", {a.ptr()},
                   [n](Node& self) {
                     if (Tensor* g = grad_buffer(*self.parents[0])) {
                       const double up = self.grad[0] / static_cast<double>(n);
                       for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += up;
                     }
                   });
}

Var sum_rows(const Var& a) {
  const Tensor& x = a.value();
  Tensor y(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row_span(r)) s += v;
    y[r] = s;
  }
  return make_node(std::move(y), "sum_rows", {a.ptr()}, [](Node& self) {
    if (Tensor* g = grad_buffer(*self.parents[0]))
      for (std::size_t r = 0; r < g->rows(); ++r)
        for (double& v : g->row_span(r)) v += self.grad[r];
  });
}

Var l2_norm(const Var& a) {
  const Tensor& x = a.value();
  Tensor y(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row_span(r);
    y[r] = std::sqrt(kernels::dot(row.data(), row.data(), row.size()));
  }
  return make_node(std::move(y), "l2_norm", {a.ptr()}, [](Node& self) {
    Node& p = *self.parents[0];
    if (Tensor* g = grad_buffer(p))
      for (std::size_t r = 0; r < g->rows(); ++r) {
        const double norm = self.value[r];
        if (norm == 0.0) continue;  // subgradient 0 at the origin
        kernels::axpy(self.grad[r] / norm, p.value.row_span(r).data(), g->row_span(r).data(),
                      g->cols());
      }
  });
}

Var cosine_similarity(const Var& a, const Var& b) {
  require_same_shape(a, b, "cosine_similarity");
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  // Per row: dot, floored norms, and whether each floor was active.
  std::vector<double> dots(rows), nx(rows), nz(rows);
  std::vector<std::uint8_t> regime(2 * rows);
  Tensor y(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    const double* zr = z.data() + r * cols;
    dots[r] = kernels::dot(xr, zr, cols);
    const double rx = std::sqrt(kernels::dot(xr, xr, cols));
    const double rz = std::sqrt(kernels::dot(zr, zr, cols));
    regime[2 * r] = rx > kCosineNormFloor;
    regime[2 * r + 1] = rz > kCosineNormFloor;
    nx[r] = std::max(rx, kCosineNormFloor);
    nz[r] = std::max(rz, kCosineNormFloor);
    y[r] = dots[r] / (nx[r] * nz[r]);
  }
  Var out = make_node(
      std::move(y), "cosine_similarity", {a.ptr(), b.ptr()},
      [dots, nx, nz, regime, cols](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        Tensor* ga = grad_buffer(pa);
        Tensor* gb = grad_buffer(pb);
        for (std::size_t r = 0; r < self.grad.rows(); ++r) {
          const double up = self.grad[r];
          const double c = self.value[r];
          const double inv = 1.0 / (nx[r] * nz[r]);
          const double* xr = pa.value.data() + r * cols;
          const double* zr = pb.value.data() + r * cols;
          // d c / d x = z/(|x||z|) - c x/|x|^2  (second term absent under the floor)
          if (ga) {
            double* g = ga->data() + r * cols;
            kernels::axpy(up * inv, zr, g, cols);
            if (regime[2 * r]) kernels::axpy(-up * c / (nx[r] * nx[r]), xr, g, cols);
          }
          if (gb) {
            double* g = gb->data() + r * cols;
            kernels::axpy(up * inv, xr, g, cols);
            if (regime[2 * r + 1]) kernels::axpy(-up * c / (nz[r] * nz[r]), zr, g, cols);
          }
        }
      });
  out.node()->regime = std::move(regime);
  return out;
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Tensor y(rows, cols);
  std::vector<NodePtr> parents;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.value().data() + r * p.cols(), p.cols(), y.data() + r * cols + offset);
    offset += p.cols();
    parents.push_back(p.ptr());
  }
  return make_node(std::move(y), "concat_cols", std::move(parents), [](Node& self) {
    const std::size_t cols = self.grad.cols();
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t pc = p->value.cols();
      if (Tensor* g = grad_buffer(*p))
        for (std::size_t r = 0; r < g->rows(); ++r)
          kernels::axpy(1.0, self.grad.data() + r * cols + offset, g->data() + r * pc, pc);
      offset += pc;
    }
  });
}

Var average(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("average of nothing");
  Tensor y(parts[0].rows(), parts[0].cols());
  std::vector<NodePtr> parents;
  for (const Var& p : parts) {
    require_same_shape(parts[0], p, "average");
    kernels::axpy(1.0, p.value().data(), y.data(), y.size());
    parents.push_back(p.ptr());
  }
  const double w = 1.0 / static_cast<double>(parts.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= w;
  return make_node(std::move(y), "average", std::move(parents), [w](Node& self) {
    for (auto& p : self.parents)
      if (Tensor* g = grad_buffer(*p)) kernels::axpy(w, self.grad.data(), g->data(), g->size());
  });
}

Var leaf_probabilities(const Var& u) {
  const Tensor& U = u.value();
  const std::size_t rows = U.rows(), depth = U.cols();
  if (depth == 0 || depth > 20) throw ShapeError("leaf_probabilities: depth out of range");
  const std::size_t leaves = std::size_t{1} << depth;
  Tensor plus(rows, depth), minus(rows, depth);
  for (std::size_t i = 0; i < U.size(); ++i) {
    plus[i] = stable_sigmoid(U[i]);
    minus[i] = stable_sigmoid(-U[i]);
  }
  Tensor P(rows, leaves);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t leaf = 0; leaf < leaves; ++leaf) {
      double p = 1.0;
      for (std::size_t l = 0; l < depth; ++l) {
        const bool bit = (leaf >> (depth - 1 - l)) & 1U;
        p *= bit ? plus(r, l) : minus(r, l);
      }
      P(r, leaf) = p;
    }
  return make_node(std::move(P), "leaf_probabilities", {u.ptr()},
                   [plus, minus, depth, leaves](Node& self) {
                     Tensor* g = grad_buffer(*self.parents[0]);
                     if (!g) return;
                     // d log s(u)/du = s(-u);  d log s(-u)/du = -s(u)
                     for (std::size_t r = 0; r < self.grad.rows(); ++r)
                       for (std::size_t leaf = 0; leaf < leaves; ++leaf) {
                         const double w = self.grad(r, leaf) * self.value(r, leaf);
                         if (w == 0.0) continue;
                         for (std::size_t l = 0; l < depth; ++l) {
                           const bool bit = (leaf >> (depth - 1 - l)) & 1U;
                           (*g)(r, l) += bit ? w * minus(r, l) : -w * plus(r, l);
                         }
                       }
                   });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  const Tensor& Z = logits.value();
  const std::size_t rows = Z.rows(), classes = Z.cols();
  if (labels.size() != rows) throw ShapeError("softmax_cross_entropy: label count mismatch");
  if (rows == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  Tensor probs(rows, classes);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw ShapeError("softmax_cross_entropy: label out of range");
    auto z = Z.row_span(r);
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(z[c] - zmax);
    for (std::size_t c = 0; c < classes; ++c) probs(r, c) = std::exp(z[c] - zmax) / denom;
    loss += std::log(denom) + zmax - z[static_cast<std::size_t>(y)];
  }
  std::vector<int> ys(labels.begin(), labels.end());
  return make_node(Tensor::scalar(loss / static_cast<double>(rows)), "softmax_cross_entropy",
                   {logits.ptr()}, [probs, ys](Node& self) {
                     Tensor* g = grad_buffer(*self.parents[0]);
                     if (!g) return;
                     const double up = self.grad[0] / static_cast<double>(ys.size());
                     for (std::size_t r = 0; r < ys.size(); ++r)
                       for (std::size_t c = 0; c < probs.cols(); ++c)
                         (*g)(r, c) += up * (probs(r, c) - (static_cast<int>(c) == ys[r] ? 1.0 : 0.0));
                   });
}

Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats,
              bool train) {
  const Tensor& X = x.value();
  const std::size_t n = X.rows(), c = X.cols();
  require_row(x, gamma, "batchnorm(gamma)");
  require_row(x, beta, "batchnorm(beta)");
  if (stats.running_mean.cols() != c || stats.running_var.cols() != c)
    throw ShapeError("batchnorm: running statistics width mismatch");
  if (train && n < 2) throw BatchNormError("training-mode batchnorm needs a batch of at least 2");

  std::vector<double> mu(c), var(c), inv_std(c);
  std::vector<std::uint8_t> floored(c);
  if (train) {
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < n; ++r) s += X(r, j);
      mu[j] = s / static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t r = 0; r < n; ++r) ss += (X(r, j) - mu[j]) * (X(r, j) - mu[j]);
      var[j] = ss / static_cast<double>(n);
    }
    const double m = stats.momentum;
    const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
    for (std::size_t j = 0; j < c; ++j) {
      stats.running_mean[j] = (1.0 - m) * stats.running_mean[j] + m * mu[j];
      stats.running_var[j] = (1.0 - m) * stats.running_var[j] + m * var[j] * unbias;
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      mu[j] = stats.running_mean[j];
      var[j] = stats.running_var[j];
    }
  }
  for (std::size_t j = 0; j < c; ++j) {
    floored[j] = var[j] < stats.eps;
    inv_std[j] = 1.0 / std::sqrt(std::max(var[j], stats.eps));
  }

  Tensor xhat(n, c), y(n, c);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      xhat(r, j) = (X(r, j) - mu[j]) * inv_std[j];
      y(r, j) = gamma.value()[j] * xhat(r, j) + beta.value()[j];
    }

  Var out = make_node(
      std::move(y), train ? "batchnorm[train]" : "batchnorm[eval]",
      {x.ptr(), gamma.ptr(), beta.ptr()},
      [xhat, inv_std, floored, train](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        const std::size_t n = self.grad.rows(), c = self.grad.cols();
        const Tensor& dy = self.grad;
        if (Tensor* gg = grad_buffer(pg))
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) (*gg)[j] += dy(r, j) * xhat(r, j);
        if (Tensor* gb = grad_buffer(pb))
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) (*gb)[j] += dy(r, j);
        Tensor* gx = grad_buffer(px);
        if (!gx) return;
        const double nn = static_cast<double>(n);
        for (std::size_t j = 0; j < c; ++j) {
          const double gam = pg.value[j];
          if (!train) {
            for (std::size_t r = 0; r < n; ++r) (*gx)(r, j) += dy(r, j) * gam * inv_std[j];
            continue;
          }
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t r = 0; r < n; ++r) {
            const double d = dy(r, j) * gam;
            sum_d += d;
            sum_dx += d * xhat(r, j);
          }
          // With the variance floor active the normalizer is constant and
          // only the mean subtraction couples rows.
          if (floored[j]) sum_dx = 0.0;
          for (std::size_t r = 0; r < n; ++r) {
            const double d = dy(r, j) * gam;
            (*gx)(r, j) += inv_std[j] / nn * (nn * d - sum_d - xhat(r, j) * sum_dx);
          }
        }
      });
  out.node()->regime = std::move(floored);
  return out;
}

void backward(const Var& root) {
  if (!root) throw BackwardError("backward on an empty Var");
  if (root.value().size() != 1)
    throw BackwardError("root must be scalar, got shape " + root.value().shape_str());
  const std::vector<Node*> order = topo_order(root);
  for (Node* n : order)
    if (!n->is_leaf && n->requires_grad) n->grad = Tensor(n->value.rows(), n->value.cols());
  if (!root.node()->requires_grad) return;
  root.node()->grad = Tensor(1, 1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf && n->requires_grad && n->backward) n->backward(*n);
  }
}

void zero_grad(std::span<Var> params) {
  for (Var& p : params) {
    Node& n = *p.node();
    if (n.grad.same_shape(n.value))
      n.grad.fill(0.0);
    else
      n.grad = Tensor(n.value.rows(), n.value.cols());
  }
}

std::string dump_graph(const Var& root) {
  const std::vector<Node*> order = topo_order(root);
  std::unordered_map<const Node*, std::size_t> id;
  for (std::size_t i = 0; i < order.size(); ++i) id[order[i]] = i;
  std::ostringstream os;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Node* n = order[i];
    os << i << ' ' << n->op << ' ' << n->value.shape_str();
    if (n->requires_grad) os << " grad";
    if (!n->parents.empty()) {
      os << " <-";
      for (const auto& p : n->parents) os << ' ' << id[p.get()];
    }
    os << '\n';
  }
  return os.str();
}

std::vector<std::uint8_t> regime_signature(const Var& root) {
  std::vector<std::uint8_t> sig;
  for (const Node* n : topo_order(root)) sig.insert(sig.end(), n->regime.begin(), n->regime.end());
  return sig;
}

GradCheckReport grad_check(const std::function<Var()>& build, std::span<Var> params,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  zero_grad(params);
  Var base = build();
  backward(base);
  const std::vector<std::uint8_t> base_sig = regime_signature(base);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].value().size(); ++i) coords.emplace_back(p, i);
  if (options.max_probes != 0 && options.max_probes < coords.size()) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_probes);
  }

  // build() may touch grad buffers, so keep a copy of the analytic result.
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Var& p : params) analytic.push_back(p.grad());

  for (auto [p, i] : coords) {
    GradCheckProbe probe;
    probe.param = p;
    probe.index = i;
    probe.analytic = analytic[p].empty() ? 0.0 : analytic[p][i];
    double& slot = params[p].mutable_value()[i];
    const double orig = slot;
    slot = orig + options.h;
    Var up = build();
    const double f_up = up.value().item();
    const bool kink_up = regime_signature(up) != base_sig;
    slot = orig - options.h;
    Var down = build();
    const double f_down = down.value().item();
    const bool kink_down = regime_signature(down) != base_sig;
    slot = orig;
    probe.numeric = (f_up - f_down) / (2.0 * options.h);
    probe.on_kink = kink_up || kink_down;
    const double denom =
        std::max({std::abs(probe.analytic), std::abs(probe.numeric), options.abs_floor});
    probe.rel_error = std::abs(probe.analytic - probe.numeric) / denom;
    if (probe.on_kink) {
      ++report.skipped;
    } else {
      ++report.checked;
      report.max_rel_error = std::max(report.max_rel_error, probe.rel_error);
    }
    report.probes.push_back(probe);
  }
  report.passed = report.checked > 0 && report.max_rel_error <= options.tol;
  return report;
}

}  // namespace tandem::ad
