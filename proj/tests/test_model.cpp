#include <cmath>
#include <random>

#include <doctest.h>

#include "ebll/model.hpp"
#include "ebll/optim.hpp"
#include "oracles.hpp"

using namespace ebll;
using namespace ebll::model;

namespace {

Architecture small_arch() {
  Architecture a;
  a.input_dim = 5;
  a.feature_widths = {7, 6};
  a.shared_widths = {4};
  return a;
}

Tensor forward_stack_naive(const LayerStack& s, Tensor x) {
  for (const auto& l : s.layers()) {
    x = oracle::naive_affine(x, l.weight.value, l.bias.value);
    if (l.activation == Activation::Relu) x = oracle::naive_relu(x);
  }
  return x;
}

void zero_all(LayerStack& s) {
  for (auto* p : s.parameters()) p->value.fill(0.0);
}

}  // namespace

TEST_CASE("identity-initialized linear extractor passes its input through") {
  Architecture a;
  a.input_dim = 3;
  a.feature_widths = {3};
  a.shared_widths = {};
  TaskModel m(a, 1);
  auto& layer = m.feature_stack().layers().front();
  layer.activation = Activation::None;
  layer.weight.value = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  layer.bias.value.fill(0.0);
  const auto x = Tensor::matrix({{0.5, -2.0, 3.0}});
  CHECK(m.features(x) == x);
}

TEST_CASE("zero-weight extractor gives zero features") {
  TaskModel m(small_arch(), 2);
  zero_all(m.feature_stack());
  std::mt19937_64 rng(1);
  const auto f = m.features(oracle::random_tensor({4, 5}, rng));
  CHECK(f == Tensor({4, 6}));
}

TEST_CASE("features and task outputs match a layer-by-layer oracle") {
  TaskModel m(small_arch(), 3);
  m.add_head(1, 4, 10);
  std::mt19937_64 rng(2);
  const auto x = oracle::random_tensor({6, 5}, rng, -2, 2);
  const auto f = forward_stack_naive(m.feature_stack(), x);
  CHECK(oracle::max_abs_diff(m.features(x), f) <= 1e-12);
  const auto logits = forward_stack_naive(m.head(1), forward_stack_naive(m.shared_stack(), f));
  CHECK(oracle::max_abs_diff(m.probabilities(1, x), oracle::naive_softmax(logits)) <= 1e-12);

  // Reassembling F, then T, then the head in one graph gives the same numbers.
  nn::Graph g;
  auto staged = m.forward_head_logits(g, 1, m.forward_shared(g, m.forward_features(g, g.constant(x))));
  CHECK(nn::softmax_rows(staged.value()) == m.probabilities(1, x));
}

TEST_CASE("a zero head outputs the uniform distribution") {
  TaskModel m(small_arch(), 4);
  m.add_head(1, 5, 1);
  zero_all(m.head(1));
  std::mt19937_64 rng(3);
  const auto p = m.probabilities(1, oracle::random_tensor({3, 5}, rng));
  for (double v : p.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("separate heads apply directly to the features") {
  auto a = small_arch();
  a.shared_widths = {};
  a.head_hidden_widths = {4};
  TaskModel m(a, 5);
  m.add_head(1, 3, 2);
  CHECK(m.shared_stack().empty());
  std::mt19937_64 rng(4);
  const auto x = oracle::random_tensor({2, 5}, rng);
  const auto logits = forward_stack_naive(m.head(1), m.features(x));
  CHECK(oracle::max_abs_diff(m.probabilities(1, x), oracle::naive_softmax(logits)) <= 1e-12);
}

TEST_CASE("task outputs are probability vectors") {
  TaskModel m(small_arch(), 6);
  m.add_head(1, 4, 1);
  m.add_head(2, 6, 2);
  std::mt19937_64 rng(5);
  const auto x = oracle::random_tensor({10, 5}, rng, -50, 50);
  for (int t : {1, 2}) {
    const auto p = m.probabilities(t, x);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (double v : p.row(r)) {
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("heads: size, determinism, duplicates and lookup") {
  TaskModel a(small_arch(), 7), b(small_arch(), 7);
  a.add_head(1, 10, 42);
  b.add_head(1, 10, 42);
  std::mt19937_64 rng(6);
  CHECK(a.probabilities(1, oracle::random_tensor({1, 5}, rng)).size() == 10);
  CHECK(a.head(1).layers().front().weight.value == b.head(1).layers().front().weight.value);
  CHECK(a.class_count(1) == 10);
  CHECK_THROWS_AS(a.add_head(1, 3, 1), std::invalid_argument);
  CHECK_THROWS_AS(a.probabilities(2, Tensor({1, 5})), LookupError);
  CHECK_THROWS_AS(a.features(Tensor({1, 4})), DimensionError);
}

TEST_CASE("head initialization variance follows the symmetric uniform rule") {
  const std::size_t fan_in = 32, fan_out = 10;
  const double expected = 2.0 / (fan_in + fan_out);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto a = small_arch();
    a.shared_widths = {fan_in};
    TaskModel wide(a, seed);
    wide.add_head(1, fan_out, seed * 31);
    const auto& w = wide.head(1).layers().front().weight.value;
    double mean = 0.0;
    for (double v : w.data()) mean += v;
    mean /= static_cast<double>(w.size());
    double var = 0.0;
    for (double v : w.data()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(w.size() - 1);
    CHECK(std::abs(var - expected) <= 0.2 * expected);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double v : w.data()) CHECK(std::abs(v) <= bound);
    CHECK(wide.head(1).layers().front().bias.value == Tensor({fan_out}));
  }
}

TEST_CASE("snapshots are frozen deep copies") {
  TaskModel m(small_arch(), 8);
  m.add_head(1, 3, 1);
  std::mt19937_64 rng(7);
  const auto x = oracle::random_tensor({16, 5}, rng);
  const auto before = m.probabilities(1, x);
  const auto snap = snapshot(m);
  CHECK(snap.model().probabilities(1, x) == before);
  for (const auto* p : snap.model().all_parameters()) CHECK(p->frozen);

  // Train the live model for a few epochs; the copy must not move.
  std::vector<std::size_t> labels(16);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 3;
  optim::Sgd sgd({0.1, 5e-4, 0.9});
  auto params = m.all_parameters();
  for (int epoch = 0; epoch < 5; ++epoch) {
    m.zero_grad();
    nn::Graph g;
    g.backward(nn::cross_entropy(m.forward_task(g, 1, g.constant(x)), labels));
    sgd.step(params);
  }
  CHECK(m.probabilities(1, x) != before);
  CHECK(snap.model().probabilities(1, x) == before);

  const auto again = snapshot(snap.model());
  CHECK(again.model().probabilities(1, x) == before);
}

TEST_CASE("freezing F and T keeps them bit-identical while the head trains") {
  TaskModel m(small_arch(), 9);
  m.add_head(1, 3, 1);
  m.feature_stack().set_frozen(true);
  m.shared_stack().set_frozen(true);
  const auto f0 = m.feature_stack().layers();
  const auto t0 = m.shared_stack().layers();
  std::mt19937_64 rng(8);
  const auto x = oracle::random_tensor({12, 5}, rng);
  std::vector<std::size_t> labels(12);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 3;
  optim::Sgd sgd({0.1, 5e-4, 0.9});
  auto head = m.head_parameters(1);
  const auto h0 = m.head(1).layers().front().weight.value;
  for (int step = 0; step < 20; ++step) {
    m.zero_grad();
    nn::Graph g;
    g.backward(nn::cross_entropy(m.forward_task(g, 1, g.constant(x)), labels));
    sgd.step(head);
  }
  for (std::size_t i = 0; i < f0.size(); ++i) {
    CHECK(m.feature_stack().layers()[i].weight.value == f0[i].weight.value);
    CHECK(m.feature_stack().layers()[i].weight.grad == Tensor::zeros_like(f0[i].weight.value));
  }
  CHECK(m.shared_stack().layers()[0].weight.value == t0[0].weight.value);
  CHECK(m.head(1).layers().front().weight.value != h0);
}

TEST_CASE("architecture validation") {
  Architecture a;
  a.input_dim = 0;
  CHECK_THROWS(a.validate());
  a.input_dim = 4;
  a.feature_widths = {};
  CHECK_THROWS(a.validate());
  a.feature_widths = {4, 0};
  CHECK_THROWS(a.validate());
}
