#pragma once

// Dense float64 tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto shared storage; copies alias the same node,
// which is how parameters keep their identity inside gradient maps. Ops build a
// graph only when grad mode is on and at least one input requires a gradient.

#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ffkit/errors.hpp"

namespace ffkit {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

[[noreturn]] inline void shape_error(std::string_view op, const Shape& a, const Shape& b) {
  throw Error(ErrorKind::shape_mismatch,
              std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] inline void shape_error(std::string_view op, const Shape& a, std::string_view expected) {
  throw Error(ErrorKind::shape_mismatch,
              std::string(op) + ": shape " + shape_str(a) + " but expected " + std::string(expected));
}

namespace detail {

using BackwardFn = std::function<void(std::span<const double> grad_out, std::span<double* const> grad_in)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  bool leaf = true;
  std::string name;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// RAII switch that disables graph recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_mode_enabled() { return detail::grad_mode_flag(); }

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape.empty()) shape = {1};
    for (auto extent : shape) {
      require_arg(extent > 0, "tensor extents must be positive, got " + shape_str(shape));
    }
    require(values.size() == ffkit::numel(shape), ErrorKind::shape_mismatch,
            "tensor data length " + std::to_string(values.size()) + " does not match shape " +
                shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = ffkit::numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    auto n = ffkit::numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  static Tensor vector(std::vector<double> values, bool requires_grad = false) {
    Shape shape{values.size()};
    return Tensor(std::move(shape), std::move(values), requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
  }

  static Tensor identity(std::size_t n) {
    auto t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.mutable_data()[i * n + i] = 1.0;
    return t;
  }

  [[nodiscard]] bool defined() const noexcept { return static_cast<bool>(node_); }
  [[nodiscard]] const Shape& shape() const { return node_->shape; }
  [[nodiscard]] std::size_t dim() const { return node_->shape.size(); }
  [[nodiscard]] std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
  [[nodiscard]] std::size_t numel() const { return node_->data.size(); }
  [[nodiscard]] std::span<const double> data() const { return node_->data; }
  /// Direct write access. Only meaningful for leaves (parameters, inputs);
  /// mutating an interior node invalidates any pending backward pass.
  [[nodiscard]] std::span<double> mutable_data() { return node_->data; }
  [[nodiscard]] double item() const {
    require_arg(numel() == 1, "item() on non-scalar tensor " + shape_str(shape()));
    return node_->data[0];
  }
  [[nodiscard]] double operator[](std::size_t i) const { return node_->data.at(i); }
  [[nodiscard]] double at(std::size_t row, std::size_t col) const {
    return node_->data.at(row * node_->shape.back() + col);
  }

  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) {
    require_arg(node_->leaf, "requires_grad can only be changed on leaf tensors");
    node_->requires_grad = flag;
  }
  [[nodiscard]] bool is_leaf() const { return node_->leaf; }
  [[nodiscard]] const char* op_name() const { return node_->op; }

  [[nodiscard]] const std::string& name() const { return node_->name; }
  Tensor& set_name(std::string name) {
    node_->name = std::move(name);
    return *this;
  }

  /// Stable identity of the underlying storage; keys gradient maps.
  [[nodiscard]] const void* id() const noexcept { return node_.get(); }

  /// New leaf holding a copy of the values, cut from any graph.
  [[nodiscard]] Tensor detach() const {
    Tensor out(node_->shape, node_->data, false);
    out.node_->name = node_->name;
    return out;
  }

  void assign(std::span<const double> values) {
    require(values.size() == numel(), ErrorKind::shape_mismatch, "assign: size mismatch");
    std::copy(values.begin(), values.end(), node_->data.begin());
  }

  [[nodiscard]] std::vector<double> to_vector() const { return node_->data; }

  [[nodiscard]] const std::shared_ptr<detail::Node>& node() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Gradients of one backward pass, keyed by leaf identity.
class GradMap {
 public:
  [[nodiscard]] bool contains(const Tensor& t) const { return grads_.count(t.id()) != 0; }
  [[nodiscard]] std::size_t size() const { return grads_.size(); }
  [[nodiscard]] bool empty() const { return grads_.empty(); }

  [[nodiscard]] const std::vector<double>& at(const Tensor& t) const {
    auto it = grads_.find(t.id());
    if (it == grads_.end()) {
      throw Error(ErrorKind::missing_gradient,
                  "no gradient for parameter '" + (t.name().empty() ? std::string("<unnamed>") : t.name()) +
                      "' " + shape_str(t.shape()));
    }
    return it->second;
  }

  [[nodiscard]] const std::vector<double>* find(const Tensor& t) const {
    auto it = grads_.find(t.id());
    return it == grads_.end() ? nullptr : &it->second;
  }

  void insert(const void* key, std::vector<double> grad) { grads_[key] = std::move(grad); }

  [[nodiscard]] std::vector<const void*> keys() const {
    std::vector<const void*> out;
    out.reserve(grads_.size());
    for (const auto& [k, v] : grads_) out.push_back(k);
    return out;
  }

 private:
  std::unordered_map<const void*, std::vector<double>> grads_;
};

namespace detail {

inline Tensor make_op(const char* op, Shape shape, std::vector<double> values,
                      std::initializer_list<Tensor> inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->op = op;
  bool needs_grad = false;
  if (grad_mode_enabled()) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->leaf = false;
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

inline Tensor make_op(const char* op, Shape shape, std::vector<double> values,
                      const std::vector<Tensor>& inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->op = op;
  bool needs_grad = false;
  if (grad_mode_enabled()) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->leaf = false;
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

inline void require_matrix(std::string_view op, const Tensor& t) {
  if (t.dim() != 2) shape_error(op, t.shape(), "a 2-D matrix");
}

inline std::size_t last_extent(const Tensor& t) { return t.shape().back(); }

}  // namespace detail

/// Reverse pass from a scalar loss. Returns fresh gradients for every leaf
/// that requires them; stored tensors are never mutated.
inline GradMap backward(const Tensor& loss) {
  require_arg(loss.defined(), "backward: undefined loss tensor");
  require_arg(loss.numel() == 1, "backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  require(loss.requires_grad(), ErrorKind::no_graph,
          "backward: loss is not connected to any tensor that requires grad");

  using detail::Node;
  // Iterative post-order DFS gives a topological order with each node once.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<Node*, std::vector<double>> grads;
  grads.reserve(order.size());
  for (Node* n : order) grads.emplace(n, std::vector<double>(n->data.size(), 0.0));
  grads[loss.node().get()][0] = 1.0;

  std::vector<double*> grad_in;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->leaf || !node->backward) continue;
    grad_in.assign(node->inputs.size(), nullptr);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      Node* in = node->inputs[i].get();
      if (in->requires_grad) grad_in[i] = grads[in].data();
    }
    node->backward(grads[node], grad_in);
  }

  GradMap out;
  for (Node* n : order) {
    if (n->leaf && n->requires_grad) out.insert(n, std::move(grads[n]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) shape_error("reshape", x.shape(), shape);
  return detail::make_op("reshape", std::move(shape), x.to_vector(), {x},
                         [](std::span<const double> g, std::span<double* const> gin) {
                           if (gin[0]) for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                         });
}

inline Tensor flatten(const Tensor& x) { return reshape(x, {x.numel()}); }

inline Tensor transpose(const Tensor& x) {
  detail::require_matrix("transpose", x);
  const std::size_t r = x.size(0), c = x.size(1);
  std::vector<double> out(r * c);
  auto d = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = d[i * c + j];
  return detail::make_op("transpose", {c, r}, std::move(out), {x},
                         [r, c](std::span<const double> g, std::span<double* const> gin) {
                           if (!gin[0]) return;
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j) gin[0][i * c + j] += g[j * r + i];
                         });
}

/// Concatenates along axis 0; trailing extents must agree.
inline Tensor concat(const std::vector<Tensor>& parts) {
  require_arg(!parts.empty(), "concat: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail || p.dim() != parts[0].dim()) shape_error("concat", parts[0].shape(), p.shape());
    offsets.push_back(rows * numel(tail));
    rows += p.size(0);
  }
  std::vector<double> out;
  out.reserve(rows * numel(tail));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) sizes.push_back(p.numel());
  return detail::make_op("concat", std::move(shape), std::move(out), parts,
                         [offsets, sizes](std::span<const double> g, std::span<double* const> gin) {
                           for (std::size_t k = 0; k < gin.size(); ++k) {
                             if (!gin[k]) continue;
                             for (std::size_t i = 0; i < sizes[k]; ++i) gin[k][i] += g[offsets[k] + i];
                           }
                         });
}

/// Rows of a matrix selected (with repetition allowed) by index.
inline Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  detail::require_matrix("gather_rows", x);
  const std::size_t n = x.size(0), d = x.size(1);
  require_arg(!rows.empty(), "gather_rows: empty index list");
  std::vector<double> out(rows.size() * d);
  auto src = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require_arg(rows[i] < n, "gather_rows: row index " + std::to_string(rows[i]) + " out of range " +
                                 std::to_string(n));
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return detail::make_op("gather_rows", {rows.size(), d}, std::move(out), {x},
                         [idx, d](std::span<const double> g, std::span<double* const> gin) {
                           if (!gin[0]) return;
                           for (std::size_t i = 0; i < idx.size(); ++i)
                             for (std::size_t j = 0; j < d; ++j) gin[0][idx[i] * d + j] += g[i * d + j];
                         });
}

/// out[i] = x[i, cols[i]] for a matrix x.
inline Tensor pick(const Tensor& x, std::span<const std::size_t> cols) {
  detail::require_matrix("pick", x);
  const std::size_t n = x.size(0), c = x.size(1);
  if (cols.size() != n) shape_error("pick", x.shape(), Shape{cols.size()});
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    require_arg(cols[i] < c, "pick: column " + std::to_string(cols[i]) + " out of range " + std::to_string(c));
    out[i] = x.data()[i * c + cols[i]];
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return detail::make_op("pick", {n}, std::move(out), {x},
                         [idx, c](std::span<const double> g, std::span<double* const> gin) {
                           if (!gin[0]) return;
                           for (std::size_t i = 0; i < idx.size(); ++i) gin[0][i * c + idx[i]] += g[i];
                         });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0)) shape_error("matmul", a.shape(), b.shape());
  const auto m = static_cast<Eigen::Index>(a.size(0));
  const auto k = static_cast<Eigen::Index>(a.size(1));
  const auto n = static_cast<Eigen::Index>(b.size(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  detail::MutMap(out.data(), m, n).noalias() =
      detail::ConstMap(a.data().data(), m, k) * detail::ConstMap(b.data().data(), k, n);
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op(
      "matmul", {a.size(0), b.size(1)}, std::move(out), {a, b},
      [an, bn, m, k, n](std::span<const double> g, std::span<double* const> gin) {
        detail::ConstMap gm(g.data(), m, n);
        if (gin[0]) detail::MutMap(gin[0], m, k).noalias() += gm * detail::ConstMap(bn->data.data(), k, n).transpose();
        if (gin[1]) detail::MutMap(gin[1], k, n).noalias() += detail::ConstMap(an->data.data(), m, k).transpose() * gm;
      });
}

// ---------------------------------------------------------------------------
// Elementwise

/// a + b for equal shapes, or a + bias where bias is 1-D and matches the last
/// axis of a. No other broadcasting.
inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return detail::make_op("add", a.shape(), std::move(out), {a, b},
                           [](std::span<const double> g, std::span<double* const> gin) {
                             for (int k = 0; k < 2; ++k)
                               if (gin[k]) for (std::size_t i = 0; i < g.size(); ++i) gin[k][i] += g[i];
                           });
  }
  if (b.dim() == 1 && a.dim() >= 1 && b.size(0) == a.shape().back()) {
    const std::size_t d = b.size(0);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i % d];
    return detail::make_op("bias_add", a.shape(), std::move(out), {a, b},
                           [d](std::span<const double> g, std::span<double* const> gin) {
                             if (gin[0]) for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                             if (gin[1]) for (std::size_t i = 0; i < g.size(); ++i) gin[1][i % d] += g[i];
                           });
  }
  shape_error("add", a.shape(), b.shape());
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_op("sub", a.shape(), std::move(out), {a, b},
                         [](std::span<const double> g, std::span<double* const> gin) {
                           if (gin[0]) for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                           if (gin[1]) for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] -= g[i];
                         });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op("mul", a.shape(), std::move(out), {a, b},
                         [an, bn](std::span<const double> g, std::span<double* const> gin) {
                           if (gin[0]) for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * bn->data[i];
                           if (gin[1]) for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] += g[i] * an->data[i];
                         });
}

inline Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x.data()[i];
  return detail::make_op("scale", x.shape(), std::move(out), {x},
                         [c](std::span<const double> g, std::span<double* const> gin) {
                           if (gin[0]) for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += c * g[i];
                         });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + c;
  return detail::make_op("add_scalar", x.shape(), std::move(out), {x},
                         [](std::span<const double> g, std::span<double* const> gin) {
                           if (gin[0]) for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                         });
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  auto xn = x.node();
  return detail::make_op("relu", x.shape(), std::move(out), {x},
                         [xn](std::span<const double> g, std::span<double* const> gin) {
                           if (!gin[0]) return;
                           for (std::size_t i = 0; i < g.size(); ++i)
                             if (xn->data[i] > 0.0) gin[0][i] += g[i];
                         });
}

inline Tensor exp(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.data()[i]);
  auto values = out;
  return detail::make_op("exp", x.shape(), std::move(out), {x},
                         [values = std::move(values)](std::span<const double> g, std::span<double* const> gin) {
                           if (gin[0]) for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * values[i];
                         });
}

/// Natural log. Non-positive inputs produce -inf/NaN by contract.
inline Tensor log(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.data()[i]);
  auto xn = x.node();
  return detail::make_op("log", x.shape(), std::move(out), {x},
                         [xn](std::span<const double> g, std::span<double* const> gin) {
                           if (gin[0]) for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] / xn->data[i];
                         });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const std::size_t n = x.numel();
  return detail::make_op("sum", {1}, {s}, {x},
                         [n](std::span<const double> g, std::span<double* const> gin) {
                           if (gin[0]) for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[0];
                         });
}

inline Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const std::size_t n = x.numel();
  return detail::make_op("mean", {1}, {s / static_cast<double>(n)}, {x},
                         [n](std::span<const double> g, std::span<double* const> gin) {
                           if (!gin[0]) return;
                           const double share = g[0] / static_cast<double>(n);
                           for (std::size_t i = 0; i < n; ++i) gin[0][i] += share;
                         });
}

/// Sums a matrix over its last axis: [n, c] -> [n].
inline Tensor sum_last_axis(const Tensor& x) {
  detail::require_matrix("sum_last_axis", x);
  const std::size_t n = x.size(0), c = x.size(1);
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += x.data()[i * c + j];
  return detail::make_op("sum_last_axis", {n}, std::move(out), {x},
                         [c](std::span<const double> g, std::span<double* const> gin) {
                           if (!gin[0]) return;
                           for (std::size_t i = 0; i < g.size(); ++i)
                             for (std::size_t j = 0; j < c; ++j) gin[0][i * c + j] += g[i];
                         });
}

/// Averages consecutive runs of `group` rows: [n*group, d] -> [n, d].
inline Tensor group_mean_rows(const Tensor& x, std::size_t group) {
  detail::require_matrix("group_mean_rows", x);
  require_arg(group > 0, "group_mean_rows: group size must be positive");
  if (x.size(0) % group != 0) shape_error("group_mean_rows", x.shape(), "rows divisible by " + std::to_string(group));
  const std::size_t n = x.size(0) / group, d = x.size(1);
  const double inv = 1.0 / static_cast<double>(group);
  std::vector<double> out(n * d, 0.0);
  for (std::size_t r = 0; r < x.size(0); ++r)
    for (std::size_t j = 0; j < d; ++j) out[(r / group) * d + j] += inv * x.data()[r * d + j];
  return detail::make_op("group_mean_rows", {n, d}, std::move(out), {x},
                         [group, d, inv](std::span<const double> g, std::span<double* const> gin) {
                           if (!gin[0]) return;
                           const std::size_t rows = g.size() / d * group;
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < d; ++j) gin[0][r * d + j] += inv * g[(r / group) * d + j];
                         });
}

// ---------------------------------------------------------------------------
// Normalizations

namespace detail {

inline void softmax_row(const double* in, double* out, std::size_t c) {
  double mx = in[0];
  for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    out[j] = std::exp(in[j] - mx);
    z += out[j];
  }
  for (std::size_t j = 0; j < c; ++j) out[j] /= z;
}

}  // namespace detail

/// Softmax over the last axis.
inline Tensor softmax(const Tensor& x) {
  const std::size_t c = detail::last_extent(x);
  const std::size_t rows = x.numel() / c;
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) detail::softmax_row(x.data().data() + r * c, out.data() + r * c, c);
  auto probs = out;
  return detail::make_op("softmax", x.shape(), std::move(out), {x},
                         [probs = std::move(probs), c](std::span<const double> g, std::span<double* const> gin) {
                           if (!gin[0]) return;
                           for (std::size_t r = 0; r < g.size() / c; ++r) {
                             const double* p = probs.data() + r * c;
                             const double* gr = g.data() + r * c;
                             double dot = 0.0;
                             for (std::size_t j = 0; j < c; ++j) dot += gr[j] * p[j];
                             for (std::size_t j = 0; j < c; ++j) gin[0][r * c + j] += p[j] * (gr[j] - dot);
                           }
                         });
}

/// log(softmax(x)) over the last axis, computed without forming tiny
/// probabilities.
inline Tensor log_softmax(const Tensor& x) {
  const std::size_t c = detail::last_extent(x);
  const std::size_t rows = x.numel() / c;
  std::vector<double> out(x.numel());
  std::vector<double> probs(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * c;
    double mx = in[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(in[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) {
      out[r * c + j] = in[j] - lse;
      probs[r * c + j] = std::exp(out[r * c + j]);
    }
  }
  return detail::make_op("log_softmax", x.shape(), std::move(out), {x},
                         [probs = std::move(probs), c](std::span<const double> g, std::span<double* const> gin) {
                           if (!gin[0]) return;
                           for (std::size_t r = 0; r < g.size() / c; ++r) {
                             double total = 0.0;
                             for (std::size_t j = 0; j < c; ++j) total += g[r * c + j];
                             for (std::size_t j = 0; j < c; ++j)
                               gin[0][r * c + j] += g[r * c + j] - probs[r * c + j] * total;
                           }
                         });
}

/// Layer normalization over the last axis with affine parameters.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  detail::require_matrix("layer_norm", x);
  const std::size_t n = x.size(0), d = x.size(1);
  if (gamma.shape() != Shape{d}) shape_error("layer_norm", x.shape(), gamma.shape());
  if (beta.shape() != Shape{d}) shape_error("layer_norm", x.shape(), beta.shape());
  require_arg(eps > 0.0, "layer_norm: eps must be positive");
  std::vector<double> out(n * d), xhat(n * d), inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* in = x.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (in[j] - mu) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * gamma.data()[j] + beta.data()[j];
    }
  }
  auto gn = gamma.node();
  return detail::make_op(
      "layer_norm", {n, d}, std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), gn, n, d](std::span<const double> g,
                                                                      std::span<double* const> gin) {
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < n; ++r) {
          const double* gr = g.data() + r * d;
          const double* xh = xhat.data() + r * d;
          if (gin[1]) for (std::size_t j = 0; j < d; ++j) gin[1][j] += gr[j] * xh[j];
          if (gin[2]) for (std::size_t j = 0; j < d; ++j) gin[2][j] += gr[j];
          if (!gin[0]) continue;
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = gr[j] * gn->data[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xh[j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) gin[0][r * d + j] += inv_std[r] * (dxhat[j] - m1 - xh[j] * m2);
        }
      });
}

// ---------------------------------------------------------------------------
// Norms

/// sqrt(sum x^2). The gradient at exactly zero is taken as zero.
inline Tensor frobenius_norm(const Tensor& x) {
  double ss = 0.0;
  for (double v : x.data()) ss += v * v;
  const double norm = std::sqrt(ss);
  auto xn = x.node();
  return detail::make_op("frobenius_norm", {1}, {norm}, {x},
                         [xn, norm](std::span<const double> g, std::span<double* const> gin) {
                           if (!gin[0] || norm == 0.0) return;
                           for (std::size_t i = 0; i < xn->data.size(); ++i) gin[0][i] += g[0] * xn->data[i] / norm;
                         });
}

/// sqrt(sum x^2 + eps): differentiable everywhere for eps > 0.
inline Tensor smoothed_l2_norm(const Tensor& x, double eps) {
  require_arg(eps > 0.0, "smoothed_l2_norm: smoothing constant must be positive");
  double ss = 0.0;
  for (double v : x.data()) ss += v * v;
  const double norm = std::sqrt(ss + eps);
  auto xn = x.node();
  return detail::make_op("smoothed_l2_norm", {1}, {norm}, {x},
                         [xn, norm](std::span<const double> g, std::span<double* const> gin) {
                           if (!gin[0]) return;
                           for (std::size_t i = 0; i < xn->data.size(); ++i) gin[0][i] += g[0] * xn->data[i] / norm;
                         });
}

// ---------------------------------------------------------------------------
// Attention core

/// Scaled dot-product attention for a batch of token sequences laid out as
/// rows: q, k, v are [batch*seq, heads*head_dim]. Heads occupy contiguous
/// column slices.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t seq, std::size_t heads) {
  detail::require_matrix("attention", q);
  if (k.shape() != q.shape()) shape_error("attention", q.shape(), k.shape());
  if (v.shape() != q.shape()) shape_error("attention", q.shape(), v.shape());
  require_arg(seq > 0 && heads > 0, "attention: seq and heads must be positive");
  const std::size_t rows = q.size(0), width = q.size(1);
  if (rows % seq != 0) shape_error("attention", q.shape(), "rows divisible by seq=" + std::to_string(seq));
  if (width % heads != 0) shape_error("attention", q.shape(), "columns divisible by heads=" + std::to_string(heads));
  const std::size_t batch = rows / seq, hd = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> out(rows * width, 0.0);
  std::vector<double> probs(batch * heads * seq * seq);
  const double* Q = q.data().data();
  const double* K = k.data().data();
  const double* V = v.data().data();
  std::vector<double> scores(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t col0 = h * hd;
      for (std::size_t i = 0; i < seq; ++i) {
        const double* qi = Q + (b * seq + i) * width + col0;
        for (std::size_t j = 0; j < seq; ++j) {
          const double* kj = K + (b * seq + j) * width + col0;
          double s = 0.0;
          for (std::size_t t = 0; t < hd; ++t) s += qi[t] * kj[t];
          scores[j] = s * inv_sqrt;
        }
        double* p = probs.data() + ((b * heads + h) * seq + i) * seq;
        detail::softmax_row(scores.data(), p, seq);
        double* oi = out.data() + (b * seq + i) * width + col0;
        for (std::size_t j = 0; j < seq; ++j) {
          const double* vj = V + (b * seq + j) * width + col0;
          for (std::size_t t = 0; t < hd; ++t) oi[t] += p[j] * vj[t];
        }
      }
    }
  }
  auto qn = q.node(), kn = k.node(), vn = v.node();
  return detail::make_op(
      "attention", q.shape(), std::move(out), {q, k, v},
      [probs = std::move(probs), qn, kn, vn, batch, heads, seq, hd, width, inv_sqrt](
          std::span<const double> g, std::span<double* const> gin) {
        std::vector<double> dp(seq), ds(seq);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t col0 = h * hd;
            for (std::size_t i = 0; i < seq; ++i) {
              const double* p = probs.data() + ((b * heads + h) * seq + i) * seq;
              const double* gi = g.data() + (b * seq + i) * width + col0;
              double dot = 0.0;
              for (std::size_t j = 0; j < seq; ++j) {
                const double* vj = vn->data.data() + (b * seq + j) * width + col0;
                double s = 0.0;
                for (std::size_t t = 0; t < hd; ++t) s += gi[t] * vj[t];
                dp[j] = s;
                dot += s * p[j];
                if (gin[2]) {
                  double* gv = gin[2] + (b * seq + j) * width + col0;
                  for (std::size_t t = 0; t < hd; ++t) gv[t] += p[j] * gi[t];
                }
              }
              for (std::size_t j = 0; j < seq; ++j) ds[j] = p[j] * (dp[j] - dot) * inv_sqrt;
              const double* qi = qn->data.data() + (b * seq + i) * width + col0;
              for (std::size_t j = 0; j < seq; ++j) {
                const double* kj = kn->data.data() + (b * seq + j) * width + col0;
                if (gin[0]) {
                  double* gq = gin[0] + (b * seq + i) * width + col0;
                  for (std::size_t t = 0; t < hd; ++t) gq[t] += ds[j] * kj[t];
                }
                if (gin[1]) {
                  double* gk = gin[1] + (b * seq + j) * width + col0;
                  for (std::size_t t = 0; t < hd; ++t) gk[t] += ds[j] * qi[t];
                }
              }
            }
          }
        }
      });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(double c, const Tensor& x) { return scale(x, c); }

}  // namespace ffkit
