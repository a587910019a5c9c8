// Maps from logits onto the probability simplex.
//
//   softmax         dense, full support
//   sparsemax       Euclidean projection of the logits onto the simplex
//   adaptive        projection of gamma * G(z), G a learned order-preserving map
//
// The scalar-vector functions work on spans of doubles. The segment_* functions
// are tape operations over an M x 1 column split into contiguous segments, one
// segment per attention row.

#pragma once

#include "sparse_att/nn.hpp"
#include "sparse_att/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparse_att {

/// Length-d probability vector with the index set of its strictly positive entries.
struct SimplexVector {
  std::vector<double> weights;
  std::vector<std::size_t> support;  // ascending

  std::size_t dim() const { return weights.size(); }
};

namespace detail {

inline void require_finite(std::span<const double> z, const char* who) {
  for (double v : z) {
    if (!std::isfinite(v)) throw std::domain_error(std::string(who) + ": non-finite input");
  }
}

}  // namespace detail

/// Euclidean projection of z onto the probability simplex by sorting and
/// threshold search. Entries equal to the threshold fall outside the support.
inline SimplexVector project_simplex(std::span<const double> z) {
  if (z.empty()) throw std::invalid_argument("project_simplex: empty input");
  detail::require_finite(z, "project_simplex");
  const std::size_t d = z.size();
  std::vector<double> sorted(z.begin(), z.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());

  double cumsum = 0.0;
  double tau = sorted[0] - 1.0;
  for (std::size_t k = 0; k < d; ++k) {
    cumsum += sorted[k];
    const double candidate = (cumsum - 1.0) / static_cast<double>(k + 1);
    if (sorted[k] - candidate > 0.0) tau = candidate;
    else break;
  }

  SimplexVector out;
  out.weights.resize(d);
  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    if (z[i] > tau) {
      total += out.weights[i] = z[i] - tau;
      out.support.push_back(i);
    } else {
      out.weights[i] = 0.0;
    }
  }
  // Removes the cancellation error of z - tau when |z| is large.
  if (total != 1.0) {
    for (std::size_t i : out.support) out.weights[i] /= total;
  }
  return out;
}

inline SimplexVector softmax(std::span<const double> z) {
  if (z.empty()) throw std::invalid_argument("softmax: empty input");
  detail::require_finite(z, "softmax");
  const double m = *std::max_element(z.begin(), z.end());
  SimplexVector out;
  out.weights.resize(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += out.weights[i] = std::exp(z[i] - m);
  for (double& w : out.weights) w /= total;
  out.support.resize(z.size());
  std::iota(out.support.begin(), out.support.end(), std::size_t{0});
  return out;
}

inline SimplexVector sparsemax(std::span<const double> z) { return project_simplex(z); }

/// Vector-Jacobian product of the projection at its output y.
inline std::vector<double> sparsemax_backward(const SimplexVector& y, std::span<const double> upstream) {
  if (upstream.size() != y.dim()) throw DimensionError("sparsemax_backward: upstream length differs from y");
  if (y.support.empty()) throw std::logic_error("sparsemax_backward: empty support");
  double s = 0.0;
  for (std::size_t i : y.support) s += upstream[i];
  const double mean = s / static_cast<double>(y.support.size());
  std::vector<double> out(y.dim(), 0.0);
  for (std::size_t i : y.support) out[i] = upstream[i] - mean;
  return out;
}

// ---------------------------------------------------------------------------
// Segmented tape operations

/// Row partition of an M x 1 column: segment s spans [offsets[s], offsets[s+1]).
struct Segments {
  std::vector<std::size_t> offsets{0};

  std::size_t count() const { return offsets.size() - 1; }
  std::size_t total() const { return offsets.back(); }
  std::size_t begin(std::size_t s) const { return offsets[s]; }
  std::size_t end(std::size_t s) const { return offsets[s + 1]; }
  std::size_t length(std::size_t s) const { return offsets[s + 1] - offsets[s]; }

  static Segments single(std::size_t n) { return Segments{{0, n}}; }

  std::vector<std::size_t> segment_ids() const {
    std::vector<std::size_t> ids(total());
    for (std::size_t s = 0; s < count(); ++s) std::fill(ids.begin() + begin(s), ids.begin() + end(s), s);
    return ids;
  }
};

namespace detail {

inline void check_segments(const Tensor& x, const Segments& seg, const char* who) {
  if (x.cols() != 1 || x.rows() != seg.total()) {
    throw DimensionError(std::string(who) + ": expected a " + std::to_string(seg.total()) +
                         "x1 column, got " + x.shape().str());
  }
}

}  // namespace detail

/// Softmax applied independently inside each segment.
inline Tensor segment_softmax(const Tensor& x, const Segments& seg) {
  detail::check_segments(x, seg, "segment_softmax");
  std::vector<double> out(x.size());
  for (std::size_t s = 0; s < seg.count(); ++s) {
    if (seg.length(s) == 0) continue;
    const auto y = softmax(x.values().subspan(seg.begin(s), seg.length(s)));
    std::copy(y.weights.begin(), y.weights.end(), out.begin() + seg.begin(s));
  }
  return make_op(x.shape(), std::move(out), {x}, [seg](Node& self) {
    Node& p = self.parent(0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t s = 0; s < seg.count(); ++s) {
      double dot = 0.0;
      for (std::size_t i = seg.begin(s); i < seg.end(s); ++i) dot += self.grad[i] * self.value[i];
      for (std::size_t i = seg.begin(s); i < seg.end(s); ++i) g[i] += self.value[i] * (self.grad[i] - dot);
    }
  });
}

/// Simplex projection applied independently inside each segment.
inline Tensor segment_sparsemax(const Tensor& x, const Segments& seg) {
  detail::check_segments(x, seg, "segment_sparsemax");
  std::vector<double> out(x.size());
  for (std::size_t s = 0; s < seg.count(); ++s) {
    if (seg.length(s) == 0) continue;
    const auto y = project_simplex(x.values().subspan(seg.begin(s), seg.length(s)));
    std::copy(y.weights.begin(), y.weights.end(), out.begin() + seg.begin(s));
    if (kink_probe_active()) {
      for (double w : y.weights) record_kink(w > 0.0 ? 1 : 2);
    }
  }
  return make_op(x.shape(), std::move(out), {x}, [seg](Node& self) {
    Node& p = self.parent(0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t s = 0; s < seg.count(); ++s) {
      double total = 0.0;
      std::size_t support = 0;
      for (std::size_t i = seg.begin(s); i < seg.end(s); ++i) {
        if (self.value[i] > 0.0) {
          total += self.grad[i];
          ++support;
        }
      }
      if (support == 0) continue;
      const double mean = total / static_cast<double>(support);
      for (std::size_t i = seg.begin(s); i < seg.end(s); ++i) {
        if (self.value[i] > 0.0) g[i] += self.grad[i] - mean;
      }
    }
  });
}

/// Elementwise absolute value; makes stored weights act as nonnegative ones.
inline Tensor positive_reparam(const Tensor& w) { return abs(w); }

// ---------------------------------------------------------------------------
// Monotone gate G_i(z) = psi(phi1(z_i), sum_j phi2(z_j)) + eps_lin * z_i

struct GateWidths {
  std::size_t phi1 = 16;
  std::size_t phi2 = 16;
  std::size_t psi = 64;
};

/// Component-wise map whose outputs keep the order of its inputs. psi and phi1
/// see their stored weights through positive_reparam, so both are nondecreasing
/// in every argument; the eps_lin bypass makes the order strict.
struct MonotoneGate {
  static constexpr double kLinearBypass = 1e-3;

  Linear phi1_hidden, phi1_out;
  Linear phi2_hidden, phi2_out;
  Linear psi_hidden, psi_out;
  double linear_bypass = kLinearBypass;

  MonotoneGate() = default;
  MonotoneGate(GateWidths widths, Rng& rng)
      : phi1_hidden(1, widths.phi1, rng),
        phi1_out(widths.phi1, 1, rng),
        phi2_hidden(1, widths.phi2, rng),
        phi2_out(widths.phi2, 1, rng),
        psi_hidden(2, widths.psi, rng),
        psi_out(widths.psi, 1, rng) {}

  /// Applies G inside every segment of an M x 1 logit column.
  Tensor apply(const Tensor& z, const Segments& seg) const {
    detail::check_segments(z, seg, "MonotoneGate");
    auto positive = [](const Linear& l, const Tensor& x) {
      return add(matmul(x, positive_reparam(l.weight)), l.bias);
    };
    const Tensor a = positive(phi1_out, relu(positive(phi1_hidden, z)));
    const Tensor b = phi2_out(relu(phi2_hidden(z)));
    const auto ids = seg.segment_ids();
    const Tensor pooled = gather_rows(segment_sum(b, ids, seg.count()), ids);
    const Tensor psi = positive(psi_out, relu(positive(psi_hidden, concat({a, pooled}, Axis::cols))));
    return add(psi, scale(z, linear_bypass));
  }

  std::vector<double> operator()(std::span<const double> z) const {
    detail::require_finite(z, "monotone_gate_eval");
    NoGradGuard no_grad;
    const Tensor out = apply(Tensor::column(std::vector<double>(z.begin(), z.end())), Segments::single(z.size()));
    std::vector<double> g(out.values().begin(), out.values().end());
    detail::require_finite(g, "monotone_gate_eval");
    return g;
  }

  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    phi1_hidden.collect(prefix + ".phi1.hidden", out);
    phi1_out.collect(prefix + ".phi1.output", out);
    phi2_hidden.collect(prefix + ".phi2.hidden", out);
    phi2_out.collect(prefix + ".phi2.output", out);
    psi_hidden.collect(prefix + ".psi.hidden", out);
    psi_out.collect(prefix + ".psi.output", out);
  }
};

inline std::vector<double> monotone_gate_eval(const MonotoneGate& gate, std::span<const double> z) { return gate(z); }

/// Learnable gamma > 0, stored as log(gamma).
struct SparsityScale {
  Tensor log_gamma = Tensor::scalar(0.0, true);

  double value() const { return std::exp(log_gamma.item()); }
  Tensor applied() const { return exp(log_gamma); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + ".log_gamma", log_gamma});
  }
};

/// Fixed choices of G for the closed-form members of the family.
enum class FixedGate { identity, softmax_formula, squared_normalized };

inline std::vector<double> apply_fixed_gate(FixedGate kind, std::span<const double> z) {
  std::vector<double> g(z.begin(), z.end());
  switch (kind) {
    case FixedGate::identity: break;
    case FixedGate::softmax_formula: g = softmax(z).weights; break;
    case FixedGate::squared_normalized: {
      double s = 0.0;
      for (double v : z) s += v * v;
      if (s == 0.0) throw std::domain_error("squared_normalized gate: all-zero input");
      for (double& v : g) v = v * v / s;
      break;
    }
  }
  return g;
}

/// project_simplex(gamma * G(z)) with a fixed G.
inline SimplexVector adaptive_sparse(std::span<const double> z, FixedGate gate, double gamma) {
  detail::require_finite(z, "adaptive_sparse");
  auto g = apply_fixed_gate(gate, z);
  for (double& v : g) v *= gamma;
  return project_simplex(g);
}

/// project_simplex(gamma * G(z)) with the learned gate.
inline SimplexVector adaptive_sparse(std::span<const double> z, const MonotoneGate& gate, const SparsityScale& s) {
  auto g = gate(z);
  const double gamma = s.value();
  for (double& v : g) v *= gamma;
  return project_simplex(g);
}

/// Tape form of the adaptive map over segmented logits.
inline Tensor segment_adaptive_sparse(const Tensor& z, const Segments& seg, const MonotoneGate& gate,
                                      const SparsityScale& s) {
  return segment_sparsemax(mul(gate.apply(z, seg), s.applied()), seg);
}

}  // namespace sparse_att
