#pragma once

// Dense row-major tensors with a tape-free reverse-mode autodiff graph.
//
// Every op returns a fresh tensor whose node keeps shared handles to its
// inputs and a closure that pushes the output gradient back into them. The
// graph is therefore the DAG reachable from a loss; backward() orders it
// topologically and walks it once. Leaves (parameters, inputs) accumulate
// gradients across backward calls until zero_grad(); interior nodes may only
// be walked once.
//
// The scalar type is a template parameter. Training instantiates float;
// finite-difference oracles instantiate double so that round-off does not
// swamp the central difference.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace ecpp {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct GraphError : std::logic_error {
  using std::logic_error::logic_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {
inline bool& checked_math_flag() {
  thread_local bool on = true;
  return on;
}
}  // namespace detail

/// Checked mode turns log/div on out-of-domain operands into DomainError.
/// On by default, per thread.
inline void set_checked_math(bool on) { detail::checked_math_flag() = on; }
inline bool checked_math() { return detail::checked_math_flag(); }

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    bool consumed = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    bool is_leaf() const { return inputs.empty(); }

    std::vector<T>& grad_buffer() {
      if (grad.size() != data.size()) grad.assign(data.size(), T(0));
      return grad;
    }
  };

  BasicTensor() = default;

  static BasicTensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(values);
    n->requires_grad = requires_grad;
    return BasicTensor(std::move(n));
  }

  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    const auto count = shape_numel(shape);
    return from(std::move(shape), std::vector<T>(count, value), requires_grad);
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static BasicTensor scalar(T value, bool requires_grad = false) {
    return from({}, {value}, requires_grad);
  }

  /// Interior-node constructor used by ops. Drops the graph edge when no
  /// input needs a gradient.
  static BasicTensor make_op(Shape shape, std::vector<T> values, const char* op,
                             std::vector<BasicTensor> inputs,
                             std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(values);
    n->op = op;
    for (const auto& in : inputs) n->requires_grad = n->requires_grad || in.requires_grad();
    if (n->requires_grad) {
      for (auto& in : inputs) n->inputs.push_back(in.node_);
      n->backward = std::move(backward);
    }
    return BasicTensor(std::move(n));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t i) const {
    if (i >= rank()) throw ShapeError("dim index out of range for shape " + shape_str(shape()));
    return node().shape[i];
  }
  std::size_t numel() const { return node().data.size(); }
  bool requires_grad() const { return node().requires_grad; }
  bool is_leaf() const { return node().is_leaf(); }
  const char* op_name() const { return node().op; }

  std::span<const T> data() const { return node().data; }

  /// In-place access for leaves only (parameter updates between steps).
  std::span<T> mutable_data() {
    if (!is_leaf()) throw GraphError("in-place mutation of a graph-tracked tensor");
    return node().data;
  }

  bool has_grad() const { return node().grad.size() == node().data.size() && !node().data.empty(); }
  std::span<const T> grad() const { return node().grad; }
  void zero_grad() { node().grad.clear(); }

  void set_requires_grad(bool on) {
    if (!is_leaf()) throw GraphError("requires_grad can only be set on leaf tensors");
    node().requires_grad = on;
  }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node().data[0];
  }

  T at(std::size_t flat) const { return node().data.at(flat); }

  bool same_node(const BasicTensor& other) const { return node_ == other.node_; }

  /// Leaf copy of the values with no graph edge.
  BasicTensor detach() const { return from(shape(), node().data, false); }

  /// Deep copy that keeps requires_grad; for parameter mirrors.
  BasicTensor clone_leaf() const { return from(shape(), node().data, requires_grad()); }

  Node& node() const {
    if (!node_) throw GraphError("use of an undefined tensor");
    return *node_;
  }
  const std::shared_ptr<Node>& handle() const { return node_; }

 private:
  explicit BasicTensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

namespace detail {

template <typename T>
using NodeT = typename BasicTensor<T>::Node;

template <typename T>
std::vector<NodeT<T>*> topological_order(NodeT<T>* root) {
  std::vector<NodeT<T>*> order;
  std::unordered_set<NodeT<T>*> seen;
  std::vector<std::pair<NodeT<T>*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      NodeT<T>* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  return order;  // inputs before consumers
}

}  // namespace detail

/// Op names of the graph reachable from `t`, inputs first.
template <typename T>
std::vector<std::string> graph_ops(const BasicTensor<T>& t) {
  std::vector<std::string> out;
  for (auto* n : detail::topological_order<T>(&t.node())) out.emplace_back(n->op);
  return out;
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) throw GraphError("backward() on a tensor that does not require grad");
  auto order = detail::topological_order<T>(&loss.node());
  for (auto* n : order) {
    if (!n->is_leaf() && n->consumed) {
      throw GraphError("graph already consumed by a previous backward pass");
    }
  }
  for (auto* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), T(0));
  }
  loss.node().grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = *it;
    if (n->is_leaf()) continue;
    n->backward(*n);
    n->consumed = true;
  }
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

template <typename T>
Shape broadcast_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb) return sa;
  auto suffix = [](const Shape& big, const Shape& small) {
    return small.size() <= big.size() && std::equal(small.rbegin(), small.rend(), big.rbegin());
  };
  if (b.numel() == 1 || suffix(sa, sb)) return sa;
  if (a.numel() == 1 || suffix(sb, sa)) return sb;
  throw ShapeError(std::string(op) + ": shapes " + shape_str(sa) + " and " + shape_str(sb) +
                   " are not broadcast-compatible");
}

// Both operands index with i % numel: exact for equal shapes, scalars and
// trailing-dimension tiling.
template <typename T, typename Fwd, typename Bwd>
BasicTensor<T> binary(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op, Fwd fwd,
                      Bwd bwd) {
  Shape out_shape = broadcast_shape(a, b, op);
  const std::size_t n = shape_numel(out_shape);
  const auto da = a.data();
  const auto db = b.data();
  const std::size_t na = da.size(), nb = db.size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(da[i % na], db[i % nb]);
  return BasicTensor<T>::make_op(
      std::move(out_shape), std::move(out), op, {a, b}, [bwd](NodeT<T>& self) {
        auto& na_ = *self.inputs[0];
        auto& nb_ = *self.inputs[1];
        const std::size_t ca = na_.data.size(), cb = nb_.data.size();
        std::vector<T>* ga = na_.requires_grad ? &na_.grad_buffer() : nullptr;
        std::vector<T>* gb = nb_.requires_grad ? &nb_.grad_buffer() : nullptr;
        for (std::size_t i = 0; i < self.data.size(); ++i) {
          const T x = na_.data[i % ca], y = nb_.data[i % cb];
          auto [dx, dy] = bwd(x, y, self.data[i], self.grad[i]);
          if (ga) (*ga)[i % ca] += dx;
          if (gb) (*gb)[i % cb] += dy;
        }
      });
}

template <typename T, typename Fwd, typename Bwd>
BasicTensor<T> unary(const BasicTensor<T>& a, const char* op, Fwd fwd, Bwd bwd) {
  const auto da = a.data();
  std::vector<T> out(da.size());
  for (std::size_t i = 0; i < da.size(); ++i) out[i] = fwd(da[i]);
  return BasicTensor<T>::make_op(a.shape(), std::move(out), op, {a}, [bwd](NodeT<T>& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < self.data.size(); ++i) g[i] += bwd(in.data[i], self.data[i], self.grad[i]);
  });
}

}  // namespace detail

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary(
      a, b, "add", [](T x, T y) { return x + y; },
      [](T, T, T, T g) { return std::pair{g, g}; });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary(
      a, b, "sub", [](T x, T y) { return x - y; },
      [](T, T, T, T g) { return std::pair{g, -g}; });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary(
      a, b, "mul", [](T x, T y) { return x * y; },
      [](T x, T y, T, T g) { return std::pair{g * y, g * x}; });
}

template <typename T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (checked_math()) {
    for (T v : b.data())
      if (v == T(0)) throw DomainError("div: zero divisor");
  }
  return detail::binary(
      a, b, "div", [](T x, T y) { return x / y; },
      [](T x, T y, T, T g) { return std::pair{g / y, -g * x / (y * y)}; });
}

template <typename T>
BasicTensor<T> neg(const BasicTensor<T>& a) {
  return detail::unary(a, "neg", [](T x) { return -x; }, [](T, T, T g) { return -g; });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& a) {
  return detail::unary(
      a, "exp", [](T x) { return std::exp(x); }, [](T, T y, T g) { return g * y; });
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& a) {
  if (checked_math()) {
    for (T v : a.data())
      if (!(v > T(0))) throw DomainError("log: non-positive operand");
  }
  return detail::unary(
      a, "log", [](T x) { return std::log(x); }, [](T x, T, T g) { return g / x; });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  return detail::unary(
      a, "relu", [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T, T g) { return x > T(0) ? g : T(0); });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T c) {
  return detail::unary(
      a, "scale", [c](T x) { return c * x; }, [c](T, T, T g) { return c * g; });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T c) {
  return detail::unary(
      a, "add_scalar", [c](T x) { return x + c; }, [](T, T, T g) { return g; });
}

template <typename T>
BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) { return add(a, b); }
template <typename T>
BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) { return sub(a, b); }
template <typename T>
BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) { return mul(a, b); }
template <typename T>
BasicTensor<T> operator/(const BasicTensor<T>& a, const BasicTensor<T>& b) { return div(a, b); }
template <typename T>
BasicTensor<T> operator-(const BasicTensor<T>& a) { return neg(a); }
template <typename T>
BasicTensor<T> operator*(const BasicTensor<T>& a, T c) { return scale(a, c); }
template <typename T>
BasicTensor<T> operator*(T c, const BasicTensor<T>& a) { return scale(a, c); }
template <typename T>
BasicTensor<T> operator+(const BasicTensor<T>& a, T c) { return add_scalar(a, c); }

// ---------------------------------------------------------------------------
// Linear algebra

namespace detail {

// c(m×n) += a(m×k) · b(k×n)
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c(m×k) += a(m×n) · b(k×n)ᵀ. b is transposed once so the inner loop runs
// over contiguous memory.
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  std::vector<T> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  gemm_nn(a, bt.data(), c, m, n, k);
}

// c(k×n) += a(m×k)ᵀ · b(m×n)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return BasicTensor<T>::make_op({m, n}, std::move(out), "matmul", {a, b},
                                 [m, k, n](detail::NodeT<T>& self) {
                                   auto& na = *self.inputs[0];
                                   auto& nb = *self.inputs[1];
                                   if (na.requires_grad)
                                     detail::gemm_nt(self.grad.data(), nb.data.data(),
                                                     na.grad_buffer().data(), m, n, k);
                                   if (nb.requires_grad)
                                     detail::gemm_tn(na.data.data(), self.grad.data(),
                                                     nb.grad_buffer().data(), m, k, n);
                                 });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  const auto d = a.data();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = d[i * c + j];
  return BasicTensor<T>::make_op({c, r}, std::move(out), "transpose", {a},
                                 [r, c](detail::NodeT<T>& self) {
                                   auto& g = self.inputs[0]->grad_buffer();
                                   for (std::size_t i = 0; i < r; ++i)
                                     for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
                                 });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  return BasicTensor<T>::make_op(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()),
                                 "reshape", {a}, [](detail::NodeT<T>& self) {
                                   auto& g = self.inputs[0]->grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                 });
}

// ---------------------------------------------------------------------------
// Reductions (64-bit accumulators)

enum class Reduce { Sum, Mean, Max };

template <typename T>
BasicTensor<T> reduce(Reduce kind, const BasicTensor<T>& a, std::optional<int> axis = std::nullopt) {
  std::size_t outer = 1, len = a.numel(), inner = 1;
  Shape out_shape;
  if (axis) {
    const int r = static_cast<int>(a.rank());
    if (*axis < 0 || *axis >= r) {
      throw ShapeError("reduce: axis " + std::to_string(*axis) + " out of range for " +
                       shape_str(a.shape()));
    }
    const auto ax = static_cast<std::size_t>(*axis);
    for (std::size_t i = 0; i < ax; ++i) outer *= a.dim(i);
    len = a.dim(ax);
    for (std::size_t i = ax + 1; i < a.rank(); ++i) inner *= a.dim(i);
    for (std::size_t i = 0; i < a.rank(); ++i)
      if (i != ax) out_shape.push_back(a.dim(i));
  }
  if (len == 0) throw ShapeError("reduce: empty reduction");
  const auto d = a.data();
  std::vector<T> out(outer * inner);
  std::vector<std::size_t> argmax;
  if (kind == Reduce::Max) argmax.resize(out.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      if (kind == Reduce::Max) {
        std::size_t best = base;
        for (std::size_t l = 1; l < len; ++l) {
          const std::size_t idx = base + l * inner;
          if (d[idx] > d[best]) best = idx;
        }
        out[o * inner + in] = d[best];
        argmax[o * inner + in] = best;
      } else {
        double acc = 0.0;
        for (std::size_t l = 0; l < len; ++l) acc += static_cast<double>(d[base + l * inner]);
        if (kind == Reduce::Mean) acc /= static_cast<double>(len);
        out[o * inner + in] = static_cast<T>(acc);
      }
    }
  }
  const char* name = kind == Reduce::Sum ? "sum" : kind == Reduce::Mean ? "mean" : "max";
  return BasicTensor<T>::make_op(
      std::move(out_shape), std::move(out), name, {a},
      [kind, outer, len, inner, argmax = std::move(argmax)](detail::NodeT<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        if (kind == Reduce::Max) {
          for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[i];
          return;
        }
        const T f = kind == Reduce::Mean ? T(1) / static_cast<T>(len) : T(1);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t l = 0; l < len; ++l)
            for (std::size_t in = 0; in < inner; ++in)
              g[(o * len + l) * inner + in] += f * self.grad[o * inner + in];
      });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a, std::optional<int> axis = std::nullopt) {
  return reduce(Reduce::Sum, a, axis);
}
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a, std::optional<int> axis = std::nullopt) {
  return reduce(Reduce::Mean, a, axis);
}
template <typename T>
BasicTensor<T> max(const BasicTensor<T>& a, std::optional<int> axis = std::nullopt) {
  return reduce(Reduce::Max, a, axis);
}

/// Row-wise log Σ exp over the entries whose mask byte is non-zero, with the
/// row max subtracted first. a is (rows × cols); mask has the same length.
template <typename T>
BasicTensor<T> masked_logsumexp(const BasicTensor<T>& a, std::span<const std::uint8_t> mask) {
  if (a.rank() != 2) throw ShapeError("masked_logsumexp: expected rank 2");
  if (mask.size() != a.numel()) throw ShapeError("masked_logsumexp: mask size mismatch");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  const auto d = a.data();
  std::vector<T> out(rows);
  std::vector<T> soft(a.numel(), T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (mask[r * cols + c]) mx = std::max(mx, static_cast<double>(d[r * cols + c]));
    if (!std::isfinite(mx)) throw DomainError("masked_logsumexp: row with no admissible entries");
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c)
      if (mask[r * cols + c]) acc += std::exp(static_cast<double>(d[r * cols + c]) - mx);
    const double lse = mx + std::log(acc);
    out[r] = static_cast<T>(lse);
    for (std::size_t c = 0; c < cols; ++c)
      if (mask[r * cols + c]) soft[r * cols + c] = static_cast<T>(std::exp(static_cast<double>(d[r * cols + c]) - lse));
  }
  return BasicTensor<T>::make_op({rows}, std::move(out), "masked_logsumexp", {a},
                                 [rows, cols, soft = std::move(soft)](detail::NodeT<T>& self) {
                                   auto& g = self.inputs[0]->grad_buffer();
                                   for (std::size_t r = 0; r < rows; ++r)
                                     for (std::size_t c = 0; c < cols; ++c)
                                       g[r * cols + c] += self.grad[r] * soft[r * cols + c];
                                 });
}

/// out[i] = a[rows[i], cols[i]] for a rank-2 tensor.
template <typename T>
BasicTensor<T> take(const BasicTensor<T>& a, std::vector<std::size_t> rows, std::vector<std::size_t> cols) {
  if (a.rank() != 2 || rows.size() != cols.size()) throw ShapeError("take: bad arguments");
  const std::size_t nc = a.dim(1);
  std::vector<std::size_t> flat(rows.size());
  std::vector<T> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.dim(0) || cols[i] >= nc) throw ShapeError("take: index out of range");
    flat[i] = rows[i] * nc + cols[i];
    out[i] = a.data()[flat[i]];
  }
  const std::size_t count = out.size();
  return BasicTensor<T>::make_op({count}, std::move(out), "take", {a},
                                 [flat = std::move(flat)](detail::NodeT<T>& self) {
                                   auto& g = self.inputs[0]->grad_buffer();
                                   for (std::size_t i = 0; i < flat.size(); ++i) g[flat[i]] += self.grad[i];
                                 });
}

// ---------------------------------------------------------------------------
// Row operations

/// Divides every row (last axis) by its Euclidean norm.
template <typename T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& a) {
  if (a.rank() < 1) throw ShapeError("l2_normalize: rank 0 tensor");
  const std::size_t d = a.shape().back();
  const std::size_t rows = d ? a.numel() / d : 0;
  const auto x = a.data();
  std::vector<T> out(a.numel());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += static_cast<double>(x[r * d + j]) * x[r * d + j];
    const double nrm = std::sqrt(ss);
    if (!(nrm > 1e-12)) throw DomainError("l2_normalize: zero-norm row " + std::to_string(r));
    norms[r] = static_cast<T>(nrm);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = static_cast<T>(x[r * d + j] / nrm);
  }
  return BasicTensor<T>::make_op(a.shape(), std::move(out), "l2_normalize", {a},
                                 [rows, d, norms = std::move(norms)](detail::NodeT<T>& self) {
                                   auto& g = self.inputs[0]->grad_buffer();
                                   for (std::size_t r = 0; r < rows; ++r) {
                                     double dot = 0.0;
                                     for (std::size_t j = 0; j < d; ++j)
                                       dot += static_cast<double>(self.data[r * d + j]) * self.grad[r * d + j];
                                     for (std::size_t j = 0; j < d; ++j)
                                       g[r * d + j] += static_cast<T>(
                                           (self.grad[r * d + j] - self.data[r * d + j] * dot) / norms[r]);
                                   }
                                 });
}

/// Concatenates along axis 0; trailing shapes must agree.
template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t lead = 0;
  std::vector<T> out;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rank() == 0 || Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
      throw ShapeError("concat: mismatched shape " + shape_str(p.shape()));
    }
    offsets.push_back(out.size());
    lead += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return BasicTensor<T>::make_op(std::move(shape), std::move(out), "concat", parts,
                                 [offsets = std::move(offsets)](detail::NodeT<T>& self) {
                                   for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                                     auto& in = *self.inputs[k];
                                     if (!in.requires_grad) continue;
                                     auto& g = in.grad_buffer();
                                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
                                   }
                                 });
}

/// Rows [begin, end) along axis 0.
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& a, std::size_t begin, std::size_t end) {
  if (a.rank() == 0 || begin > end || end > a.dim(0)) throw ShapeError("slice: range out of bounds");
  const std::size_t stride = a.numel() / std::max<std::size_t>(a.dim(0), 1);
  Shape shape = a.shape();
  shape[0] = end - begin;
  std::vector<T> out(a.data().begin() + begin * stride, a.data().begin() + end * stride);
  const std::size_t off = begin * stride;
  return BasicTensor<T>::make_op(std::move(shape), std::move(out), "slice", {a},
                                 [off](detail::NodeT<T>& self) {
                                   auto& g = self.inputs[0]->grad_buffer();
                                   for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
                                 });
}

/// a[index] with axis 0 removed.
template <typename T>
BasicTensor<T> select(const BasicTensor<T>& a, std::size_t index) {
  auto s = slice(a, index, index + 1);
  return reshape(s, Shape(a.shape().begin() + 1, a.shape().end()));
}

/// Stacks equal-shape tensors along a new leading axis.
template <typename T>
BasicTensor<T> stack(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  std::vector<BasicTensor<T>> lifted;
  for (const auto& p : parts) {
    if (p.shape() != parts[0].shape()) throw ShapeError("stack: mismatched shapes");
    Shape s{1};
    s.insert(s.end(), p.shape().begin(), p.shape().end());
    lifted.push_back(reshape(p, s));
  }
  return concat(lifted);
}

// ---------------------------------------------------------------------------
// Image ops (NCHW)

/// Stride-1 2-D convolution with symmetric zero padding. x: N×C×H×W,
/// weight: O×C×kh×kw, bias: O.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      std::size_t pad) {
  if (x.rank() != 4 || weight.rank() != 4 || bias.rank() != 1) throw ShapeError("conv2d: bad ranks");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != c) {
    throw ShapeError("conv2d: input has " + std::to_string(c) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  }
  if (bias.dim(0) != o) throw ShapeError("conv2d: bias size mismatch");
  if (h + 2 * pad < kh || w + 2 * pad < kw) throw ShapeError("conv2d: kernel larger than padded input");
  const std::size_t oh = h + 2 * pad - kh + 1, ow = w + 2 * pad - kw + 1;
  const std::size_t ckk = c * kh * kw, hw = oh * ow;

  // col(ckk × hw) for one image
  auto im2col = [=](const T* img, T* col) {
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) {
          T* dst = col + ((ch * kh + ky) * kw + kx) * hw;
          for (std::size_t y = 0; y < oh; ++y) {
            const long iy = static_cast<long>(y + ky) - static_cast<long>(pad);
            for (std::size_t xx = 0; xx < ow; ++xx) {
              const long ix = static_cast<long>(xx + kx) - static_cast<long>(pad);
              dst[y * ow + xx] = (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w))
                                     ? T(0)
                                     : img[(ch * h + iy) * w + ix];
            }
          }
        }
  };

  std::vector<T> out(n * o * hw);
  std::vector<T> col(ckk * hw);
  const T* xd = x.data().data();
  const T* wd = weight.data().data();
  const T* bd = bias.data().data();
  for (std::size_t b = 0; b < n; ++b) {
    im2col(xd + b * c * h * w, col.data());
    T* dst = out.data() + b * o * hw;
    for (std::size_t oc = 0; oc < o; ++oc) std::fill(dst + oc * hw, dst + (oc + 1) * hw, bd[oc]);
    detail::gemm_nn(wd, col.data(), dst, o, ckk, hw);
  }

  return BasicTensor<T>::make_op(
      {n, o, oh, ow}, std::move(out), "conv2d", {x, weight, bias},
      [=](detail::NodeT<T>& self) {
        auto& nx = *self.inputs[0];
        auto& nw = *self.inputs[1];
        auto& nb = *self.inputs[2];
        std::vector<T> colb(ckk * hw);
        std::vector<T> dcol(nx.requires_grad ? ckk * hw : 0);
        for (std::size_t b = 0; b < n; ++b) {
          const T* gout = self.grad.data() + b * o * hw;
          if (nb.requires_grad) {
            auto& gb = nb.grad_buffer();
            for (std::size_t oc = 0; oc < o; ++oc) {
              double acc = 0.0;
              for (std::size_t i = 0; i < hw; ++i) acc += gout[oc * hw + i];
              gb[oc] += static_cast<T>(acc);
            }
          }
          if (nw.requires_grad) {
            im2col(nx.data.data() + b * c * h * w, colb.data());
            detail::gemm_nt(gout, colb.data(), nw.grad_buffer().data(), o, hw, ckk);
          }
          if (nx.requires_grad) {
            std::fill(dcol.begin(), dcol.end(), T(0));
            detail::gemm_tn(nw.data.data(), gout, dcol.data(), o, ckk, hw);
            T* gimg = nx.grad_buffer().data() + b * c * h * w;
            for (std::size_t ch = 0; ch < c; ++ch)
              for (std::size_t ky = 0; ky < kh; ++ky)
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const T* src = dcol.data() + ((ch * kh + ky) * kw + kx) * hw;
                  for (std::size_t y = 0; y < oh; ++y) {
                    const long iy = static_cast<long>(y + ky) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    for (std::size_t xx = 0; xx < ow; ++xx) {
                      const long ix = static_cast<long>(xx + kx) - static_cast<long>(pad);
                      if (ix < 0 || ix >= static_cast<long>(w)) continue;
                      gimg[(ch * h + iy) * w + ix] += src[y * ow + xx];
                    }
                  }
                }
          }
        }
      });
}

/// 2×2 max pooling with stride 2 (floor). Spatial dims of 1 pass through.
template <typename T>
BasicTensor<T> max_pool2x2(const BasicTensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("max_pool2x2: expected NCHW");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t sy = h >= 2 ? 2 : 1, sx = w >= 2 ? 2 : 1;
  const std::size_t oh = h / sy, ow = w / sx;
  const auto d = x.data();
  std::vector<T> out(n * c * oh * ow);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = (p * h + y * sy) * w + xx * sx;
        for (std::size_t dy = 0; dy < sy; ++dy)
          for (std::size_t dx = 0; dx < sx; ++dx) {
            const std::size_t idx = (p * h + y * sy + dy) * w + xx * sx + dx;
            if (d[idx] > d[best]) best = idx;
          }
        const std::size_t o = (p * oh + y) * ow + xx;
        out[o] = d[best];
        arg[o] = best;
      }
  return BasicTensor<T>::make_op({n, c, oh, ow}, std::move(out), "max_pool2x2", {x},
                                 [arg = std::move(arg)](detail::NodeT<T>& self) {
                                   auto& g = self.inputs[0]->grad_buffer();
                                   for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
                                 });
}

/// Adaptive average pooling to an (oh × ow) grid; bin i spans
/// [floor(i·H/oh), ceil((i+1)·H/oh)).
template <typename T>
BasicTensor<T> adaptive_avg_pool2d(const BasicTensor<T>& x, std::size_t oh, std::size_t ow) {
  if (x.rank() != 4 || oh == 0 || ow == 0) throw ShapeError("adaptive_avg_pool2d: bad arguments");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto lo = [](std::size_t i, std::size_t in, std::size_t out) { return i * in / out; };
  auto hi = [](std::size_t i, std::size_t in, std::size_t out) { return ((i + 1) * in + out - 1) / out; };
  const auto d = x.data();
  std::vector<T> out(n * c * oh * ow);
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double acc = 0.0;
        const std::size_t y0 = lo(y, h, oh), y1 = hi(y, h, oh), x0 = lo(xx, w, ow), x1 = hi(xx, w, ow);
        for (std::size_t iy = y0; iy < y1; ++iy)
          for (std::size_t ix = x0; ix < x1; ++ix) acc += d[(p * h + iy) * w + ix];
        out[(p * oh + y) * ow + xx] = static_cast<T>(acc / static_cast<double>((y1 - y0) * (x1 - x0)));
      }
  return BasicTensor<T>::make_op({n, c, oh, ow}, std::move(out), "adaptive_avg_pool2d", {x},
                                 [=](detail::NodeT<T>& self) {
                                   auto& g = self.inputs[0]->grad_buffer();
                                   for (std::size_t p = 0; p < n * c; ++p)
                                     for (std::size_t y = 0; y < oh; ++y)
                                       for (std::size_t xx = 0; xx < ow; ++xx) {
                                         const std::size_t y0 = lo(y, h, oh), y1 = hi(y, h, oh);
                                         const std::size_t x0 = lo(xx, w, ow), x1 = hi(xx, w, ow);
                                         const T share = self.grad[(p * oh + y) * ow + xx] /
                                                         static_cast<T>((y1 - y0) * (x1 - x0));
                                         for (std::size_t iy = y0; iy < y1; ++iy)
                                           for (std::size_t ix = x0; ix < x1; ++ix) g[(p * h + iy) * w + ix] += share;
                                       }
                                 });
}

}  // namespace ecpp
