// Dense 2-D reverse-mode differentiation.
//
// A Tensor is a handle onto a node of a dynamic tape. Every operation below
// allocates a fresh node holding its forward value and a closure that pushes
// the incoming adjoint to its parents. backward() walks the graph once in
// reverse topological order.
//
// Broadcasting: the elementwise binary operations accept a right operand of
// shape 1 x cols, which is repeated over every row of the left operand. No
// other broadcast form exists; anything else raises DimensionError.
//
// Kinks: relu and abs use the subgradient 0 at exactly 0.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sparse_att {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool operator==(const Shape&) const = default;
  std::size_t size() const { return rows * cols; }
  std::string str() const { return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")"; }
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
  Node& parent(std::size_t k) { return *parents[k]; }
};

namespace detail {

inline thread_local bool grad_enabled = true;
inline thread_local std::uint64_t* kink_sink = nullptr;

inline void mix_kink(std::uint64_t bit) {
  std::uint64_t& h = *kink_sink;
  h ^= bit + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
}

}  // namespace detail

/// Disables tape recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Folds the branch taken at every non-smooth point (relu, abs, clamp,
/// minimum, simplex support) into one hash while alive. Finite-difference
/// checks compare signatures to reject probes that cross a kink.
class KinkProbe {
 public:
  KinkProbe() : previous_(detail::kink_sink) { detail::kink_sink = &signature_; }
  ~KinkProbe() { detail::kink_sink = previous_; }
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;

  std::uint64_t signature() const { return signature_; }

 private:
  std::uint64_t signature_ = 0;
  std::uint64_t* previous_;
};

inline bool kink_probe_active() { return detail::kink_sink != nullptr; }
inline void record_kink(std::uint64_t branch) {
  if (detail::kink_sink) detail::mix_kink(branch);
}

class Tensor {
 public:
  Tensor() : node_(std::make_shared<Node>()) {}
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false) {
    return from(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
  }
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values,
                     bool requires_grad = false) {
    if (values.size() != rows * cols) {
      throw DimensionError("tensor of shape " + Shape{rows, cols}.str() + " given " +
                           std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<Node>();
    node->shape = {rows, cols};
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }
  static Tensor scalar(double v, bool requires_grad = false) { return from(1, 1, {v}, requires_grad); }
  static Tensor row(std::vector<double> v, bool requires_grad = false) {
    const auto n = v.size();
    return from(1, n, std::move(v), requires_grad);
  }
  static Tensor column(std::vector<double> v, bool requires_grad = false) {
    const auto n = v.size();
    return from(n, 1, std::move(v), requires_grad);
  }

  Shape shape() const { return node_->shape; }
  std::size_t rows() const { return node_->shape.rows; }
  std::size_t cols() const { return node_->shape.cols; }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape().str());
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->value.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  double grad_at(std::size_t r, std::size_t c) const {
    return has_grad() ? node_->grad[r * cols() + c] : 0.0;
  }
  void zero_grad() { node_->grad.clear(); }

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Builds the result node of an operation. Parents and the backward closure
/// are kept only when recording is enabled and some parent needs a gradient.
/// `backward` receives the result node; parents are reachable in the order
/// given through Node::parent(k).
inline Tensor make_op(Shape shape, std::vector<double> values, std::initializer_list<Tensor> parents,
                      std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(values);
  bool needs = false;
  if (detail::grad_enabled) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

inline Tensor make_op(Shape shape, std::vector<double> values, const std::vector<Tensor>& parents,
                      std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(values);
  bool needs = false;
  if (detail::grad_enabled) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

namespace detail {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

inline ConstMap view(const std::vector<double>& v, Shape s) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
}
inline Map view(std::vector<double>& v, Shape s) {
  return Map(v.data(), static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
}

enum class Broadcast { none, row };

inline Broadcast check_binary(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
  throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape().str() + " and " +
                       b.shape().str());
}

template <class Unary, class Deriv>
Tensor unary(const Tensor& x, Unary f, Deriv df) {
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_op(x.shape(), std::move(out), {x}, [df](Node& self) {
    Node& p = self.parent(0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ for " + a.shape().str() + " * " +
                         b.shape().str());
  }
  const Shape out_shape{a.rows(), b.cols()};
  std::vector<double> out(out_shape.size());
  detail::view(out, out_shape).noalias() =
      detail::view(a.node().value, a.shape()) * detail::view(b.node().value, b.shape());
  return make_op(out_shape, std::move(out), {a, b}, [](Node& self) {
    Node& pa = self.parent(0);
    Node& pb = self.parent(1);
    const auto g = detail::view(self.grad, self.shape);
    if (pa.requires_grad) {
      detail::view(pa.grad_buffer(), pa.shape).noalias() += g * detail::view(pb.value, pb.shape).transpose();
    }
    if (pb.requires_grad) {
      detail::view(pb.grad_buffer(), pb.shape).noalias() += detail::view(pa.value, pa.shape).transpose() * g;
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  const auto mode = detail::check_binary("add", a, b);
  const std::size_t cols = a.cols();
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[mode == detail::Broadcast::row ? i % cols : i];
  return make_op(a.shape(), std::move(out), {a, b}, [mode, cols](Node& self) {
    Node& pa = self.parent(0);
    Node& pb = self.parent(1);
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[mode == detail::Broadcast::row ? i % cols : i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  const auto mode = detail::check_binary("sub", a, b);
  const std::size_t cols = a.cols();
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[mode == detail::Broadcast::row ? i % cols : i];
  return make_op(a.shape(), std::move(out), {a, b}, [mode, cols](Node& self) {
    Node& pa = self.parent(0);
    Node& pb = self.parent(1);
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[mode == detail::Broadcast::row ? i % cols : i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  const auto mode = detail::check_binary("mul", a, b);
  const std::size_t cols = a.cols();
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[mode == detail::Broadcast::row ? i % cols : i];
  return make_op(a.shape(), std::move(out), {a, b}, [mode, cols](Node& self) {
    Node& pa = self.parent(0);
    Node& pb = self.parent(1);
    auto bi = [&](std::size_t i) { return mode == detail::Broadcast::row ? i % cols : i; };
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[bi(i)];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[bi(i)] += self.grad[i] * pa.value[i];
    }
  });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }

inline Tensor relu(const Tensor& x) {
  if (kink_probe_active()) {
    for (double v : x.values()) record_kink(v > 0.0 ? 1 : 2);
  }
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

inline Tensor abs(const Tensor& x) {
  if (kink_probe_active()) {
    for (double v : x.values()) record_kink(v > 0.0 ? 1 : (v < 0.0 ? 2 : 3));
  }
  return detail::unary(
      x, [](double v) { return std::fabs(v); },
      [](double in, double) { return in > 0.0 ? 1.0 : (in < 0.0 ? -1.0 : 0.0); });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double out) { return out; });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double in, double) { return 2.0 * in; });
}

/// Clamps into [lo, hi]; the gradient is passed only strictly inside.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
  if (kink_probe_active()) {
    for (double v : x.values()) record_kink(v < lo ? 1 : (v > hi ? 2 : 3));
  }
  return detail::unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double in, double) { return (in > lo && in < hi) ? 1.0 : 0.0; });
}

/// Elementwise minimum of two same-shape tensors; ties route the gradient to `a`.
inline Tensor minimum(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw DimensionError("minimum: incompatible shapes " + a.shape().str() + " and " + b.shape().str());
  }
  std::vector<double> out(a.size());
  std::vector<std::uint8_t> pick_a(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    pick_a[i] = a.values()[i] <= b.values()[i];
    out[i] = pick_a[i] ? a.values()[i] : b.values()[i];
    record_kink(pick_a[i] ? 1 : 2);
  }
  return make_op(a.shape(), std::move(out), {a, b}, [pick_a = std::move(pick_a)](Node& self) {
    Node& pa = self.parent(0);
    Node& pb = self.parent(1);
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) if (pick_a[i]) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) if (!pick_a[i]) g[i] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Structural

enum class Axis { rows = 0, cols = 1 };

inline Tensor concat(const std::vector<Tensor>& parts, Axis axis) {
  if (parts.empty()) throw DimensionError("concat: empty list of parts");
  const bool along_cols = axis == Axis::cols;
  std::size_t rows = 0, cols = 0;
  for (const auto& p : parts) {
    if (along_cols) {
      if (p.rows() != parts.front().rows()) {
        throw DimensionError("concat: row counts differ, " + parts.front().shape().str() + " vs " +
                             p.shape().str());
      }
      cols += p.cols();
    } else {
      if (p.cols() != parts.front().cols()) {
        throw DimensionError("concat: column counts differ, " + parts.front().shape().str() + " vs " +
                             p.shape().str());
      }
      rows += p.rows();
    }
  }
  if (along_cols) rows = parts.front().rows();
  else cols = parts.front().cols();

  std::vector<double> out(rows * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto v = p.values();
    if (along_cols) {
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(v.begin() + r * p.cols(), p.cols(), out.begin() + r * cols + offset);
      offset += p.cols();
    } else {
      std::copy(v.begin(), v.end(), out.begin() + offset * cols);
      offset += p.rows();
    }
  }
  return make_op({rows, cols}, std::move(out), parts, [along_cols](Node& self) {
    const std::size_t cols = self.shape.cols;
    std::size_t offset = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = self.parent(k);
      if (p.requires_grad) {
        auto& g = p.grad_buffer();
        if (along_cols) {
          for (std::size_t r = 0; r < p.shape.rows; ++r)
            for (std::size_t c = 0; c < p.shape.cols; ++c) g[r * p.shape.cols + c] += self.grad[r * cols + offset + c];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset * cols + i];
        }
      }
      offset += along_cols ? p.shape.cols : p.shape.rows;
    }
  });
}

/// out[i] = x[index[i]] row by row.
inline Tensor gather_rows(const Tensor& x, std::vector<std::size_t> index) {
  const std::size_t cols = x.cols();
  std::vector<double> out(index.size() * cols);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.rows()) throw DimensionError("gather_rows: index out of range for " + x.shape().str());
    std::copy_n(x.values().begin() + index[i] * cols, cols, out.begin() + i * cols);
  }
  const Shape shape{index.size(), cols};
  return make_op(shape, std::move(out), {x}, [index = std::move(index)](Node& self) {
    Node& p = self.parent(0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    const std::size_t cols = self.shape.cols;
    for (std::size_t i = 0; i < index.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) g[index[i] * cols + c] += self.grad[i * cols + c];
  });
}

/// out[segment[i]] += x[i] row by row; produces `segments` rows.
inline Tensor segment_sum(const Tensor& x, std::vector<std::size_t> segment, std::size_t segments) {
  if (segment.size() != x.rows()) {
    throw DimensionError("segment_sum: " + std::to_string(segment.size()) + " segment ids for " +
                         x.shape().str());
  }
  const std::size_t cols = x.cols();
  std::vector<double> out(segments * cols, 0.0);
  for (std::size_t i = 0; i < segment.size(); ++i) {
    if (segment[i] >= segments) throw DimensionError("segment_sum: segment id out of range");
    for (std::size_t c = 0; c < cols; ++c) out[segment[i] * cols + c] += x.values()[i * cols + c];
  }
  return make_op({segments, cols}, std::move(out), {x}, [segment = std::move(segment)](Node& self) {
    Node& p = self.parent(0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    const std::size_t cols = self.shape.cols;
    for (std::size_t i = 0; i < segment.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) g[i * cols + c] += self.grad[segment[i] * cols + c];
  });
}

// ---------------------------------------------------------------------------
// Reductions

enum class Reduce { sum, mean };

/// Reduces over every entry (1x1 result).
inline Tensor reduce(Reduce op, const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double factor = op == Reduce::mean ? 1.0 / static_cast<double>(std::max<std::size_t>(x.size(), 1)) : 1.0;
  return make_op({1, 1}, {s * factor}, {x}, [factor](Node& self) {
    Node& p = self.parent(0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (double& gi : g) gi += self.grad[0] * factor;
  });
}

/// Axis::rows collapses the rows (1 x cols result); Axis::cols collapses the
/// columns (rows x 1 result).
inline Tensor reduce(Reduce op, const Tensor& x, Axis axis) {
  const std::size_t rows = x.rows(), cols = x.cols();
  const bool over_rows = axis == Axis::rows;
  const std::size_t n = over_rows ? rows : cols;
  const double factor = op == Reduce::mean ? 1.0 / static_cast<double>(std::max<std::size_t>(n, 1)) : 1.0;
  const Shape shape = over_rows ? Shape{1, cols} : Shape{rows, 1};
  std::vector<double> out(shape.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[over_rows ? c : r] += x.values()[r * cols + c];
  for (double& v : out) v *= factor;
  return make_op(shape, std::move(out), {x}, [over_rows, factor](Node& self) {
    Node& p = self.parent(0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    const std::size_t cols = p.shape.cols;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[over_rows ? i % cols : i / cols] * factor;
  });
}

/// Integer axis form: -1 reduces everything, 0 collapses rows, 1 collapses columns.
inline Tensor reduce(Reduce op, const Tensor& x, int axis) {
  switch (axis) {
    case -1: return reduce(op, x);
    case 0: return reduce(op, x, Axis::rows);
    case 1: return reduce(op, x, Axis::cols);
    default: throw DimensionError("reduce: invalid axis " + std::to_string(axis));
  }
}

inline Tensor sum(const Tensor& x) { return reduce(Reduce::sum, x); }
inline Tensor mean(const Tensor& x) { return reduce(Reduce::mean, x); }

// ---------------------------------------------------------------------------
// Row-wise distributions

inline Tensor log_softmax_rows(const Tensor& x) {
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.values().data() + r * cols;
    const double m = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - m);
    const double lse = m + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = in[c] - lse;
  }
  return make_op(x.shape(), std::move(out), {x}, [](Node& self) {
    Node& p = self.parent(0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    const std::size_t rows = self.shape.rows, cols = self.shape.cols;
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < cols; ++c) gs += self.grad[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        g[i] += self.grad[i] - std::exp(self.value[i]) * gs;
      }
    }
  });
}

/// out[r] = x[r, index[r]], an rows x 1 column.
inline Tensor pick(const Tensor& x, std::vector<std::size_t> index) {
  if (index.size() != x.rows()) throw DimensionError("pick: one index per row required for " + x.shape().str());
  const std::size_t cols = x.cols();
  std::vector<double> out(index.size());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= cols) throw DimensionError("pick: column index out of range");
    out[r] = x.values()[r * cols + index[r]];
  }
  const Shape shape{index.size(), 1};
  return make_op(shape, std::move(out), {x}, [index = std::move(index)](Node& self) {
    Node& p = self.parent(0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    const std::size_t cols = p.shape.cols;
    for (std::size_t r = 0; r < index.size(); ++r) g[r * cols + index[r]] += self.grad[r];
  });
}

// ---------------------------------------------------------------------------
// Backward

/// Accumulates dLoss/dLeaf into every reachable leaf that requires a gradient.
/// Leaf gradients are not cleared first, so calling backward twice (on the same
/// or on different losses) sums the contributions. Interior adjoints are reset
/// on every call.
inline void backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw DimensionError("backward: loss must be 1x1, got " + loss.shape().str());
  }
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{&loss.node(), 0}};
  visited.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  }
  loss.node().grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

}  // namespace sparse_att
