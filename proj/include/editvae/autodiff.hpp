#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// Every op produces a Var that owns its value. When gradients are enabled and
// at least one input requires them, the op also records its inputs and a
// backward closure. `backward(root)` walks the recorded graph in reverse
// topological order. Graphs are freed when the last Var referring to them dies.

#include "editvae/core.hpp"

#include <ceres/jet.h>

#include <algorithm>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

namespace editvae::ad {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
  template <typename Expr>
  void accumulate_expr(const Expr& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Matrix value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
  }
  static Var scalar(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix& value() const { return node_->value; }
  double item() const {
    require_dims(node_->value.size() == 1, "item() on a non-scalar");
    return node_->value(0, 0);
  }
  const Matrix& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Trainable leaf with value semantics: copies own independent storage.
class Parameter {
 public:
  Parameter() : Parameter(Matrix()) {}
  explicit Parameter(Matrix init) : node_(std::make_shared<Node>()) {
    node_->value = std::move(init);
    node_->requires_grad = true;
  }
  Parameter(const Parameter& other) : Parameter(other.value()) {}
  Parameter& operator=(const Parameter& other) {
    if (this != &other) {
      node_->value = other.value();
      node_->grad.resize(0, 0);
    }
    return *this;
  }
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  Var var() const { return Var(node_); }
  const Matrix& value() const { return node_->value; }
  Matrix& value() { return node_->value; }
  bool has_grad() const { return node_->grad.size() != 0; }
  const Matrix& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.resize(0, 0); }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline Var make_op(Matrix value, std::initializer_list<Var> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      n->requires_grad = true;
      for (const auto& in : inputs) n->parents.push_back(in.node());
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Var(std::move(n));
}

inline Var make_op_list(Matrix value, const std::vector<Var>& inputs,
                        std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      n->requires_grad = true;
      for (const auto& in : inputs) n->parents.push_back(in.node());
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Var(std::move(n));
}

inline bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

}  // namespace detail

/// Accumulates d(root)/d(leaf) into every reachable leaf's grad. root must be 1x1.
inline void backward(const Var& root) {
  require_dims(root.value().size() == 1, "backward() needs a scalar root");
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementary ops

inline Var matmul(const Var& a, const Var& b) {
  require_dims(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix v = a.value() * b.value();
  return detail::make_op(std::move(v), {a, b}, [](Node& self) {
    const Matrix& A = self.parents[0]->value;
    const Matrix& B = self.parents[1]->value;
    if (detail::wants(self, 0)) self.parents[0]->accumulate_expr(self.grad * B.transpose());
    if (detail::wants(self, 1)) self.parents[1]->accumulate_expr(A.transpose() * self.grad);
  });
}

/// a * b^T
inline Var matmul_nt(const Var& a, const Var& b) {
  require_dims(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  Matrix v = a.value() * b.value().transpose();
  return detail::make_op(std::move(v), {a, b}, [](Node& self) {
    const Matrix& A = self.parents[0]->value;
    const Matrix& B = self.parents[1]->value;
    if (detail::wants(self, 0)) self.parents[0]->accumulate_expr(self.grad * B);
    if (detail::wants(self, 1)) self.parents[1]->accumulate_expr(self.grad.transpose() * A);
  });
}

inline Var add(const Var& a, const Var& b) {
  require_dims(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Matrix v = a.value() + b.value();
  return detail::make_op(std::move(v), {a, b}, [](Node& self) {
    if (detail::wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (detail::wants(self, 1)) self.parents[1]->accumulate(self.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  require_dims(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Matrix v = a.value() - b.value();
  return detail::make_op(std::move(v), {a, b}, [](Node& self) {
    if (detail::wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (detail::wants(self, 1)) self.parents[1]->accumulate_expr(-self.grad);
  });
}

inline Var mul(const Var& a, const Var& b) {
  require_dims(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Matrix v = a.value().cwiseProduct(b.value());
  return detail::make_op(std::move(v), {a, b}, [](Node& self) {
    if (detail::wants(self, 0))
      self.parents[0]->accumulate_expr(self.grad.cwiseProduct(self.parents[1]->value));
    if (detail::wants(self, 1))
      self.parents[1]->accumulate_expr(self.grad.cwiseProduct(self.parents[0]->value));
  });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }

inline Var scale(const Var& a, double s) {
  Matrix v = a.value() * s;
  return detail::make_op(std::move(v), {a}, [s](Node& self) {
    self.parents[0]->accumulate_expr(self.grad * s);
  });
}

inline Var add_scalar(const Var& a, double s) {
  Matrix v = a.value().array() + s;
  return detail::make_op(std::move(v), {a},
                         [](Node& self) { self.parents[0]->accumulate(self.grad); });
}

/// Adds a 1 x C row to every row of a.
inline Var add_row(const Var& a, const Var& row) {
  require_dims(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape mismatch");
  Matrix v = a.value().rowwise() + row.value().row(0);
  return detail::make_op(std::move(v), {a, row}, [](Node& self) {
    if (detail::wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (detail::wants(self, 1)) self.parents[1]->accumulate_expr(self.grad.colwise().sum());
  });
}

/// Multiplies every row of a elementwise by a 1 x C row.
inline Var mul_row(const Var& a, const Var& row) {
  require_dims(row.rows() == 1 && row.cols() == a.cols(), "mul_row: shape mismatch");
  Matrix v = a.value().array().rowwise() * row.value().row(0).array();
  return detail::make_op(std::move(v), {a, row}, [](Node& self) {
    const Matrix& A = self.parents[0]->value;
    const Matrix& R = self.parents[1]->value;
    if (detail::wants(self, 0))
      self.parents[0]->accumulate_expr(
          Matrix(self.grad.array().rowwise() * R.row(0).array()));
    if (detail::wants(self, 1))
      self.parents[1]->accumulate_expr(self.grad.cwiseProduct(A).colwise().sum());
  });
}

inline Var leaky_relu(const Var& a, double slope) {
  Matrix v = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return detail::make_op(std::move(v), {a}, [slope](Node& self) {
    const Matrix& A = self.parents[0]->value;
    Matrix g = self.grad;
    for (Index i = 0; i < g.size(); ++i)
      if (!(A.data()[i] > 0.0)) g.data()[i] *= slope;
    self.parents[0]->accumulate(g);
  });
}

inline Var relu(const Var& a) { return leaky_relu(a, 0.0); }

inline Var sigmoid(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return detail::make_op(std::move(v), {a}, [](Node& self) {
    const Matrix& y = self.value;
    self.parents[0]->accumulate_expr(
        self.grad.cwiseProduct(Matrix(y.array() * (1.0 - y.array()))));
  });
}

inline Var tanh(const Var& a) {
  Matrix v = a.value().array().tanh();
  return detail::make_op(std::move(v), {a}, [](Node& self) {
    const Matrix& y = self.value;
    self.parents[0]->accumulate_expr(
        self.grad.cwiseProduct(Matrix(1.0 - y.array().square())));
  });
}

inline Var exp(const Var& a) {
  Matrix v = a.value().array().exp();
  return detail::make_op(std::move(v), {a}, [](Node& self) {
    self.parents[0]->accumulate_expr(self.grad.cwiseProduct(self.value));
  });
}

inline Var square(const Var& a) {
  Matrix v = a.value().array().square();
  return detail::make_op(std::move(v), {a}, [](Node& self) {
    self.parents[0]->accumulate_expr(
        Matrix(2.0 * self.grad.array() * self.parents[0]->value.array()));
  });
}

/// Elementwise clamp; gradient passes only where the input is inside [lo, hi].
inline Var clamp(const Var& a, double lo, double hi) {
  Matrix v = a.value().cwiseMax(lo).cwiseMin(hi);
  return detail::make_op(std::move(v), {a}, [lo, hi](Node& self) {
    const Matrix& A = self.parents[0]->value;
    Matrix g = self.grad;
    for (Index i = 0; i < g.size(); ++i)
      if (A.data()[i] < lo || A.data()[i] > hi) g.data()[i] = 0.0;
    self.parents[0]->accumulate(g);
  });
}

inline Var sum(const Var& a) {
  return detail::make_op(Matrix::Constant(1, 1, a.value().sum()), {a}, [](Node& self) {
    const Matrix& A = self.parents[0]->value;
    self.parents[0]->accumulate_expr(Matrix::Constant(A.rows(), A.cols(), self.grad(0, 0)));
  });
}

inline Var mean(const Var& a) {
  require_dims(a.value().size() > 0, "mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// R x C -> R x 1 row sums.
inline Var row_sum(const Var& a) {
  Matrix v = a.value().rowwise().sum();
  return detail::make_op(std::move(v), {a}, [](Node& self) {
    const Index c = self.parents[0]->value.cols();
    self.parents[0]->accumulate_expr(self.grad.replicate(1, c));
  });
}

/// Row-major reinterpretation of the same buffer.
inline Var reshape(const Var& a, Index rows, Index cols) {
  require_dims(rows * cols == a.value().size(), "reshape: size mismatch");
  Matrix v = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return detail::make_op(std::move(v), {a}, [](Node& self) {
    const Matrix& A = self.parents[0]->value;
    self.parents[0]->accumulate_expr(Eigen::Map<const Matrix>(self.grad.data(), A.rows(), A.cols()));
  });
}

inline Var slice_rows(const Var& a, Index start, Index count) {
  require_dims(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  Matrix v = a.value().middleRows(start, count);
  return detail::make_op(std::move(v), {a}, [start, count](Node& self) {
    const Matrix& A = self.parents[0]->value;
    Matrix g = Matrix::Zero(A.rows(), A.cols());
    g.middleRows(start, count) = self.grad;
    self.parents[0]->accumulate(g);
  });
}

inline Var slice_cols(const Var& a, Index start, Index count) {
  require_dims(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Matrix v = a.value().middleCols(start, count);
  return detail::make_op(std::move(v), {a}, [start, count](Node& self) {
    const Matrix& A = self.parents[0]->value;
    Matrix g = Matrix::Zero(A.rows(), A.cols());
    g.middleCols(start, count) = self.grad;
    self.parents[0]->accumulate(g);
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  require_dims(!parts.empty(), "concat_rows: no inputs");
  Index rows = 0;
  const Index cols = parts.front().cols();
  for (const auto& p : parts) {
    require_dims(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix v(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return detail::make_op_list(std::move(v), parts, [](Node& self) {
    Index at = 0;
    for (auto& p : self.parents) {
      const Index r = p->value.rows();
      if (p->requires_grad) p->accumulate(self.grad.middleRows(at, r));
      at += r;
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  require_dims(!parts.empty(), "concat_cols: no inputs");
  Index cols = 0;
  const Index rows = parts.front().rows();
  for (const auto& p : parts) {
    require_dims(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix v(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return detail::make_op_list(std::move(v), parts, [](Node& self) {
    Index at = 0;
    for (auto& p : self.parents) {
      const Index c = p->value.cols();
      if (p->requires_grad) p->accumulate(self.grad.middleCols(at, c));
      at += c;
    }
  });
}

/// out.row(i) = a.row(index[i]); backward scatter-adds.
inline Var gather_rows(const Var& a, std::vector<Index> index) {
  Matrix v(static_cast<Index>(index.size()), a.cols());
  for (Index i = 0; i < v.rows(); ++i) {
    require_dims(index[i] >= 0 && index[i] < a.rows(), "gather_rows: index out of range");
    v.row(i) = a.value().row(index[i]);
  }
  return detail::make_op(std::move(v), {a}, [index = std::move(index)](Node& self) {
    const Matrix& A = self.parents[0]->value;
    Matrix g = Matrix::Zero(A.rows(), A.cols());
    for (std::size_t i = 0; i < index.size(); ++i) g.row(index[i]) += self.grad.row(Index(i));
    self.parents[0]->accumulate(g);
  });
}

/// Column-wise max over consecutive blocks of `segment` rows.
inline Var segment_max(const Var& a, Index segment) {
  require_dims(segment > 0 && a.rows() % segment == 0, "segment_max: rows not divisible");
  const Index groups = a.rows() / segment;
  const Index cols = a.cols();
  Matrix v(groups, cols);
  std::vector<Index> arg(static_cast<std::size_t>(groups * cols));
  const Matrix& A = a.value();
  for (Index g = 0; g < groups; ++g) {
    for (Index c = 0; c < cols; ++c) {
      Index best = g * segment;
      for (Index r = g * segment + 1; r < (g + 1) * segment; ++r)
        if (A(r, c) > A(best, c)) best = r;
      v(g, c) = A(best, c);
      arg[g * cols + c] = best;
    }
  }
  return detail::make_op(std::move(v), {a}, [arg = std::move(arg)](Node& self) {
    const Matrix& A = self.parents[0]->value;
    Matrix g = Matrix::Zero(A.rows(), A.cols());
    const Index cols = A.cols();
    for (Index k = 0; k < self.grad.rows(); ++k)
      for (Index c = 0; c < cols; ++c) g(arg[k * cols + c], c) += self.grad(k, c);
    self.parents[0]->accumulate(g);
  });
}

struct BatchNormResult {
  Var output;
  RowVector batch_mean;
  RowVector batch_var;  // biased
};

/// Normalizes each column with the statistics of the rows of x, then scales by
/// gamma and shifts by beta (both 1 x C).
inline BatchNormResult batch_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Matrix& X = x.value();
  const Index n = X.rows();
  require_dims(n > 0, "batch_norm: empty input");
  RowVector mu = X.colwise().mean();
  Matrix centered = X.rowwise() - mu;
  RowVector var = centered.array().square().colwise().mean();
  RowVector inv_std = (var.array() + eps).rsqrt();
  Matrix xhat = centered.array().rowwise() * inv_std.array();
  Matrix y = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
             beta.value().row(0).array();
  Var out = detail::make_op(std::move(y), {x, gamma, beta},
                            [xhat, inv_std](Node& self) {
                              const Matrix& G = self.grad;
                              const Matrix& gam = self.parents[1]->value;
                              if (detail::wants(self, 2))
                                self.parents[2]->accumulate_expr(G.colwise().sum());
                              if (detail::wants(self, 1))
                                self.parents[1]->accumulate_expr(G.cwiseProduct(xhat).colwise().sum());
                              if (detail::wants(self, 0)) {
                                const double n = static_cast<double>(G.rows());
                                Matrix gx = G.array().rowwise() * gam.row(0).array();
                                RowVector s1 = gx.colwise().sum();
                                RowVector s2 = gx.cwiseProduct(xhat).colwise().sum();
                                Matrix dx = (gx * n).rowwise() - s1;
                                dx -= Matrix(xhat.array().rowwise() * s2.array());
                                dx = dx.array().rowwise() * (inv_std.array() / n);
                                self.parents[0]->accumulate(dx);
                              }
                            });
  return {std::move(out), std::move(mu), std::move(var)};
}

// ---------------------------------------------------------------------------
// Row-wise maps differentiated with forward-mode jets.

namespace detail {
template <int N>
using Jet = ceres::Jet<double, N>;
}

/// out.row(r) = f(shared, rows.row(r), r) for r in [0, nrows).
///
/// `shared` is 1 x NS (or undefined when NS == 0), `rows` is nrows x NR (or
/// undefined when NR == 0). f must be a generic callable
/// `f(const T* shared, const T* row, T* out, Index r)` usable with double and
/// ceres::Jet. The backward pass re-evaluates f per row with jets of size
/// NS + NR and contracts the local Jacobian with the incoming gradient.
template <int NS, int NR, int NO, typename F>
Var map_rows(const Var& shared, const Var& rows, Index nrows, F f) {
  static_assert(NS + NR > 0, "map_rows needs at least one input");
  if constexpr (NS > 0) require_dims(shared.rows() == 1 && shared.cols() == NS, "map_rows: shared shape");
  if constexpr (NR > 0) require_dims(rows.rows() == nrows && rows.cols() == NR, "map_rows: rows shape");
  Matrix v(nrows, NO);
  const double* s = NS > 0 ? shared.value().data() : nullptr;
  for (Index r = 0; r < nrows; ++r) {
    const double* in = NR > 0 ? rows.value().data() + r * NR : nullptr;
    f(s, in, v.data() + r * NO, r);
  }
  auto backward_fn = [f, nrows](Node& self) {
    constexpr int N = NS + NR;
    using J = detail::Jet<N>;
    const bool has_shared = NS > 0;
    const std::size_t row_slot = has_shared ? 1 : 0;
    const double* s = has_shared ? self.parents[0]->value.data() : nullptr;
    const double* rv = NR > 0 ? self.parents[row_slot]->value.data() : nullptr;
    Eigen::Matrix<double, 1, NS == 0 ? 1 : NS> gs;
    gs.setZero();
    Matrix grow;
    if constexpr (NR > 0) grow = Matrix::Zero(nrows, NR);
    J js[NS == 0 ? 1 : NS];
    J jr[NR == 0 ? 1 : NR];
    J jo[NO];
    for (int i = 0; i < NS; ++i) js[i] = J(s[i], i);
    for (Index r = 0; r < nrows; ++r) {
      const double* g = self.grad.data() + r * NO;
      bool nonzero = false;
      for (int o = 0; o < NO; ++o) nonzero = nonzero || g[o] != 0.0;
      if (!nonzero) continue;
      for (int i = 0; i < NR; ++i) jr[i] = J(rv[r * NR + i], NS + i);
      f(static_cast<const J*>(js), static_cast<const J*>(jr), jo, r);
      for (int o = 0; o < NO; ++o) {
        if (g[o] == 0.0) continue;
        for (int i = 0; i < NS; ++i) gs[i] += g[o] * jo[o].v[i];
        if constexpr (NR > 0)
          for (int i = 0; i < NR; ++i) grow(r, i) += g[o] * jo[o].v[NS + i];
      }
    }
    if (has_shared && self.parents[0]->requires_grad) self.parents[0]->accumulate(Matrix(gs));
    if constexpr (NR > 0)
      if (self.parents[row_slot]->requires_grad) self.parents[row_slot]->accumulate(grow);
  };
  if constexpr (NS > 0 && NR > 0)
    return detail::make_op(std::move(v), {shared, rows}, std::move(backward_fn));
  else if constexpr (NS > 0)
    return detail::make_op(std::move(v), {shared}, std::move(backward_fn));
  else
    return detail::make_op(std::move(v), {rows}, std::move(backward_fn));
}

}  // namespace editvae::ad
