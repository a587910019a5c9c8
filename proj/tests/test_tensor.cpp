#include "oracles.hpp"
#include "sparse_att/adam.hpp"
#include "sparse_att/nn.hpp"
#include "sparse_att/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace sparse_att;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }
std::vector<double> grads(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

}  // namespace

TEST(Matmul, IdentityAndDot) {
  const auto eye = Tensor::from(2, 2, {1, 0, 0, 1});
  const auto m = Tensor::from(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(vals(matmul(eye, m)), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(matmul(Tensor::row({1, 2}), Tensor::column({3, 4})).item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros(2, 3), Tensor::zeros(2, 3));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2x3)"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  auto a = Tensor::from(2, 2, {1, 0, 0, 1}, true);
  const auto b = Tensor::from(2, 2, {2, 0, 0, 2});
  backward(sum(matmul(a, b)));
  EXPECT_EQ(grads(a), (std::vector<double>{2, 2, 2, 2}));
  const auto fd = oracle::check_gradient([&] { return sum(matmul(a, b)).item(); }, a);
  EXPECT_LE(fd.max_error, 1e-5);
  EXPECT_EQ(fd.checked, 4u);
}

TEST(Elementwise, SpecExamples) {
  EXPECT_EQ(vals(relu(Tensor::row({-1, 0, 2}))), (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(vals(add(Tensor::row({1, 2}), Tensor::row({3, 4}))), (std::vector<double>{4, 6}));
  auto x = Tensor::row({-3, 3}, true);
  const auto y = abs(x);
  EXPECT_EQ(vals(y), (std::vector<double>{3, 3}));
  backward(sum(y));
  EXPECT_EQ(grads(x), (std::vector<double>{-1, 1}));
}

TEST(Elementwise, SubgradientAtZeroIsZero) {
  auto x = Tensor::row({0.0, 0.0}, true);
  backward(add(sum(relu(x)), sum(abs(x))));
  EXPECT_EQ(grads(x), (std::vector<double>{0, 0}));
}

TEST(Elementwise, RowBroadcastAndMismatch) {
  const auto m = Tensor::from(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(vals(add(m, Tensor::row({10, 20}))), (std::vector<double>{11, 22, 13, 24}));
  EXPECT_THROW(add(m, Tensor::column({1, 2})), DimensionError);
  EXPECT_THROW(mul(Tensor::row({1, 2, 3}), Tensor::row({1, 2})), DimensionError);
}

TEST(Elementwise, BroadcastGradientSumsOverRows) {
  const auto m = Tensor::from(3, 2, {1, 2, 3, 4, 5, 6});
  auto b = Tensor::row({0.5, -0.5}, true);
  backward(sum(mul(m, b)));
  EXPECT_EQ(grads(b), (std::vector<double>{9, 12}));
}

TEST(Concat, SpecExamples) {
  EXPECT_EQ(vals(concat({Tensor::row({1, 2}), Tensor::row({3})}, Axis::cols)), (std::vector<double>{1, 2, 3}));
  const auto m = Tensor::zeros(3, 2);
  const auto c = concat({m, m, m, m}, Axis::cols);
  EXPECT_EQ(c.shape(), (Shape{3, 8}));
  auto a = Tensor::from(2, 2, {1, 2, 3, 4}, true);
  auto b = Tensor::from(2, 1, {5, 6}, true);
  backward(sum(concat({a, b}, Axis::cols)));
  EXPECT_EQ(grads(a), (std::vector<double>(4, 1.0)));
  EXPECT_EQ(grads(b), (std::vector<double>(2, 1.0)));
}

TEST(Concat, ErrorsOnEmptyOrMismatch) {
  EXPECT_THROW(concat({}, Axis::cols), DimensionError);
  EXPECT_THROW(concat({Tensor::zeros(2, 1), Tensor::zeros(3, 1)}, Axis::cols), DimensionError);
  EXPECT_THROW(concat({Tensor::zeros(1, 2), Tensor::zeros(1, 3)}, Axis::rows), DimensionError);
}

TEST(Concat, AlongRows) {
  const auto c = concat({Tensor::row({1, 2}), Tensor::from(2, 2, {3, 4, 5, 6})}, Axis::rows);
  EXPECT_EQ(c.shape(), (Shape{3, 2}));
  EXPECT_EQ(vals(c), (std::vector<double>{1, 2, 3, 4, 5, 6}));
}

TEST(Reduce, SpecExamples) {
  EXPECT_EQ(sum(Tensor::from(2, 2, {1, 2, 3, 4})).item(), 10.0);
  EXPECT_EQ(vals(reduce(Reduce::mean, Tensor::from(2, 2, {2, 4, 6, 8}), 0)), (std::vector<double>{4, 6}));
  auto x = Tensor::row({1, 2, 3, 4}, true);
  backward(mean(x));
  EXPECT_EQ(grads(x), (std::vector<double>(4, 0.25)));
}

TEST(Reduce, InvalidAxisThrows) {
  EXPECT_THROW(reduce(Reduce::sum, Tensor::zeros(2, 2), 2), std::invalid_argument);
  EXPECT_THROW(reduce(Reduce::sum, Tensor::zeros(2, 2), -2), std::invalid_argument);
}

TEST(Backward, LinearFormGivesBroadcastInput) {
  auto w = Tensor::from(2, 3, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6}, true);
  const auto x = Tensor::from(3, 1, {1.0, -2.0, 3.0});
  backward(sum(matmul(w, x)));
  EXPECT_EQ(grads(w), (std::vector<double>{1, -2, 3, 1, -2, 3}));
  const auto fd = oracle::check_gradient([&] { return sum(matmul(w, x)).item(); }, w);
  EXPECT_LE(fd.max_error, 1e-5);
}

TEST(Backward, DeadUnitPassesNoGradient) {
  auto a = Tensor::scalar(-5.0, true);
  auto c = Tensor::scalar(3.0, true);
  backward(mul(relu(a), c));
  EXPECT_EQ(a.grad_at(0, 0), 0.0);
  EXPECT_EQ(c.grad_at(0, 0), 0.0);
}

TEST(Backward, NonScalarLossThrows) { EXPECT_THROW(backward(Tensor::zeros(2, 1, true)), DimensionError); }

TEST(Backward, RepeatedCallsAccumulate) {
  auto x = Tensor::row({1.0, 2.0}, true);
  const auto loss = sum(scale(x, 3.0));
  backward(loss);
  backward(loss);
  EXPECT_EQ(grads(x), (std::vector<double>{6, 6}));
  x.zero_grad();
  backward(loss);
  EXPECT_EQ(grads(x), (std::vector<double>{3, 3}));
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
  auto x = Tensor::scalar(2.0, true);
  const auto y = square(x);
  backward(add(y, y));  // d/dx 2x^2 = 4x
  EXPECT_DOUBLE_EQ(x.grad_at(0, 0), 8.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  auto x = Tensor::scalar(2.0, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = square(x);
  }
  EXPECT_FALSE(y.requires_grad());
}

TEST(LogSoftmax, RowsNormalizeAndMatchFiniteDifferences) {
  auto x = Tensor::from(2, 3, {0.1, 2.0, -1.0, 5.0, 5.0, 5.0}, true);
  const auto w = Tensor::from(2, 3, {1, -2, 0.5, 0.3, 0.2, -0.7});
  auto f = [&] { return sum(mul(log_softmax_rows(x), w)); };
  const auto ls = log_softmax_rows(x);
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) s += std::exp(ls.at(r, c));
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  backward(f());
  EXPECT_LE(oracle::check_gradient([&] { return f().item(); }, x).max_error, 1e-5);
}

TEST(GatherAndSegment, ForwardAndGradient) {
  auto x = Tensor::from(3, 2, {1, 2, 3, 4, 5, 6}, true);
  const auto g = gather_rows(x, {2, 0, 2});
  EXPECT_EQ(vals(g), (std::vector<double>{5, 6, 1, 2, 5, 6}));
  const auto s = segment_sum(x, {1, 1, 0}, 2);
  EXPECT_EQ(vals(s), (std::vector<double>{5, 6, 4, 6}));
  backward(sum(g));
  EXPECT_EQ(grads(x), (std::vector<double>{1, 1, 0, 0, 2, 2}));
}

// ---------------------------------------------------------------------------
// Random composite graphs against finite differences

namespace {

/// Rebuilds the same random expression on every call. Leaves are created on
/// the first build (values from their own generator) and reused afterwards.
struct RandomGraph {
  std::uint64_t seed;
  std::vector<Tensor> leaves;
  std::mt19937_64 value_rng;

  explicit RandomGraph(std::uint64_t s) : seed(s), value_rng(s ^ 0x5eed) {}

  Tensor build() {
    std::mt19937_64 rng(seed);
    std::size_t next_leaf = 0;
    auto dim = [&] { return std::uniform_int_distribution<std::size_t>(1, 8)(rng); };
    auto leaf = [&](std::size_t r, std::size_t c) {
      if (next_leaf == leaves.size()) {
        leaves.push_back(Tensor::from(r, c, oracle::normal_vector(r * c, 1.0, value_rng), true));
      }
      return leaves[next_leaf++];
    };
    const std::size_t depth = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
    Tensor x = leaf(dim(), dim());
    for (std::size_t d = 0; d < depth; ++d) {
      switch (std::uniform_int_distribution<int>(0, 12)(rng)) {
        case 0: x = matmul(x, leaf(x.cols(), dim())); break;
        case 1: x = add(x, leaf(x.rows(), x.cols())); break;
        case 2: x = sub(x, leaf(1, x.cols())); break;
        case 3: x = mul(x, leaf(x.rows(), x.cols())); break;
        case 4: x = relu(x); break;
        case 5: x = abs(x); break;
        case 6: x = scale(x, 0.7); break;
        case 7: x = exp(scale(clamp(x, -3.0, 3.0), 0.5)); break;
        case 8: x = square(clamp(x, -3.0, 3.0)); break;
        case 9: x = concat({x, leaf(x.rows(), dim())}, Axis::cols); break;
        case 10: x = reduce(Reduce::mean, x, std::uniform_int_distribution<int>(0, 1)(rng)); break;
        case 11: x = log_softmax_rows(x); break;
        case 12: x = minimum(x, leaf(x.rows(), x.cols())); break;
      }
    }
    const auto w = Tensor::from(x.rows(), x.cols(), oracle::normal_vector(x.size(), 1.0, rng));
    return sum(mul(x, w));
  }
};

}  // namespace

TEST(Property, RandomCompositeGraphsMatchFiniteDifferences) {
  std::size_t checked = 0;
  for (std::uint64_t g = 0; g < 1000; ++g) {
    RandomGraph graph(g);
    backward(graph.build());
    for (auto& leaf : graph.leaves) {
      const auto fd = oracle::check_gradient([&] { return graph.build().item(); }, leaf);
      ASSERT_LE(fd.max_error, 1e-5) << "graph " << g;
      checked += fd.checked;
    }
  }
  EXPECT_GT(checked, 1000u);
}

TEST(Property, BackwardIsDeterministic) {
  for (std::uint64_t g = 0; g < 50; ++g) {
    RandomGraph a(g), b(g);
    backward(a.build());
    backward(b.build());
    ASSERT_EQ(a.leaves.size(), b.leaves.size());
    for (std::size_t k = 0; k < a.leaves.size(); ++k) EXPECT_EQ(grads(a.leaves[k]), grads(b.leaves[k]));
  }
}

// ---------------------------------------------------------------------------
// Adam

TEST(Adam, ZeroGradientIsIdentity) {
  std::vector<NamedTensor> params{{"w", Tensor::from(2, 2, {1, -2, 3, -4}, true)}};
  params[0].tensor.node().grad_buffer();
  AdamState s;
  for (int k = 0; k < 3; ++k) adam_step(params, s);
  EXPECT_EQ(vals(params[0].tensor), (std::vector<double>{1, -2, 3, -4}));
  EXPECT_EQ(s.step_count, 3);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<NamedTensor> params{{"w", Tensor::scalar(0.5, true)}};
  params[0].tensor.node().grad_buffer()[0] = 1.0;
  AdamState s;
  s.learning_rate = 0.001;
  adam_step(params, s);
  EXPECT_NEAR(params[0].tensor.item(), 0.5 - 0.001, 1e-10);
}

TEST(Adam, ConstantGradientGivesMonotoneDisplacement) {
  std::vector<NamedTensor> params{{"w", Tensor::scalar(0.0, true)}};
  AdamState s;
  double prev = 0.0;
  for (int k = 0; k < 2; ++k) {
    params[0].tensor.node().grad_buffer()[0] = -2.0;
    adam_step(params, s);
    EXPECT_GT(params[0].tensor.item(), prev);
    prev = params[0].tensor.item();
  }
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  std::vector<NamedTensor> params{{"encoder.weight", Tensor::scalar(0.0, true)}};
  params[0].tensor.node().grad_buffer()[0] = std::numeric_limits<double>::quiet_NaN();
  AdamState s;
  try {
    adam_step(params, s);
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.weight"), std::string::npos);
  }
  EXPECT_EQ(params[0].tensor.item(), 0.0);
}

TEST(Nn, LinearMatchesFiniteDifferences) {
  Rng rng(3);
  Mlp mlp(3, 5, 2, rng, false);
  const auto x = Tensor::from(4, 3, oracle::normal_vector(12, 1.0, rng));
  std::vector<NamedTensor> params;
  mlp.collect("mlp", params);
  auto f = [&] { return sum(square(mlp(x))); };
  backward(f());
  for (auto& p : params) {
    const auto fd = oracle::check_gradient([&] { return f().item(); }, p.tensor);
    EXPECT_LE(fd.max_error, 1e-5) << p.name;
  }
}
