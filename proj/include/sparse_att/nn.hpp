// Fully connected building blocks shared by every network in the model.

#pragma once

#include "sparse_att/adam.hpp"
#include "sparse_att/tensor.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace sparse_att {

using Rng = std::mt19937_64;

inline Tensor random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = dist(rng);
  return Tensor::from(rows, cols, std::move(v), true);
}

/// y = x W + b with W stored in x in_features x out_features.
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true)
      : weight(random_normal(in, out, std::sqrt(2.0 / static_cast<double>(in)), rng)),
        bias(with_bias ? Tensor::zeros(1, out, true) : Tensor()) {}

  bool has_bias() const { return bias.size() > 0; }
  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }

  Tensor operator()(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return has_bias() ? add(y, bias) : y;
  }

  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + ".weight", weight});
    if (has_bias()) out.push_back({prefix + ".bias", bias});
  }
};

/// in -> hidden (ReLU) -> out, optionally with ReLU on the output too.
struct Mlp {
  Linear hidden;
  Linear output;
  bool relu_output = false;

  Mlp() = default;
  Mlp(std::size_t in, std::size_t width, std::size_t out, Rng& rng, bool relu_out)
      : hidden(in, width, rng), output(width, out, rng), relu_output(relu_out) {}

  Tensor operator()(const Tensor& x) const {
    Tensor y = output(relu(hidden(x)));
    return relu_output ? relu(y) : y;
  }

  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    hidden.collect(prefix + ".hidden", out);
    output.collect(prefix + ".output", out);
  }
};

inline void zero_grads(std::vector<NamedTensor>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

inline double grad_norm(const std::vector<NamedTensor>& params) {
  double s = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) s += g * g;
  return std::sqrt(s);
}

inline void scale_grads(std::vector<NamedTensor>& params, double factor) {
  for (auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double& g : p.tensor.node().grad) g *= factor;
  }
}

}  // namespace sparse_att
