#include <cmath>
#include <random>
#include <vector>

#include <doctest.h>

#include "ebll/autodiff.hpp"
#include "oracles.hpp"

using namespace ebll;
using namespace ebll::nn;

namespace {

Parameter param(const char* id, Tensor v) { return Parameter(id, std::move(v)); }

std::vector<double> values(Var v) { return v.value().data(); }

}  // namespace

TEST_CASE("affine selects columns and passes the bias") {
  Graph g;
  auto w = param("w", Tensor::matrix({{2, 3}, {4, 5}}));
  auto b = param("b", Tensor::vector({0, 0}));
  auto y = affine(g.constant(Tensor::vector({1, 0})), g.parameter(w), g.parameter(b));
  CHECK(values(y) == std::vector<double>{2, 4});

  Graph g2;
  auto b2 = param("b2", Tensor::vector({7, -1}));
  auto y2 = affine(g2.constant(Tensor::vector({0, 0})), g2.parameter(w), g2.parameter(b2));
  CHECK(values(y2) == std::vector<double>{7, -1});
}

TEST_CASE("affine agrees with a triple-loop product") {
  std::mt19937_64 rng(11);
  const auto x = oracle::random_tensor({5, 4}, rng);
  auto w = param("w", oracle::random_tensor({3, 4}, rng));
  auto b = param("b", oracle::random_tensor({3}, rng));
  Graph g;
  auto y = affine(g.constant(x), g.parameter(w), g.parameter(b));
  CHECK(oracle::max_abs_diff(y.value(), oracle::naive_affine(x, w.value, b.value)) <= 1e-12);
}

TEST_CASE("affine backward gives g x^T, g and W^T g") {
  std::mt19937_64 rng(12);
  auto x = param("x", oracle::random_tensor({4}, rng));
  auto w = param("w", oracle::random_tensor({3, 4}, rng));
  auto b = param("b", oracle::random_tensor({3}, rng));
  const auto upstream = oracle::random_tensor({3}, rng);
  Graph g;
  auto y = affine(g.parameter(x), g.parameter(w), g.parameter(b));
  // 1/2 ||y - (y - u)||^2 has adjoint u at y.
  Tensor target = y.value();
  for (std::size_t i = 0; i < target.size(); ++i) target[i] -= upstream[i];
  g.backward(squared_l2_half(y, g.constant(target)));
  for (std::size_t o = 0; o < 3; ++o) {
    CHECK(b.grad[o] == doctest::Approx(upstream[o]).epsilon(1e-12));
    for (std::size_t i = 0; i < 4; ++i) CHECK(w.grad.at(o, i) == doctest::Approx(upstream[o] * x.value[i]).epsilon(1e-12));
  }
  for (std::size_t i = 0; i < 4; ++i) {
    double expect = 0.0;
    for (std::size_t o = 0; o < 3; ++o) expect += w.value.at(o, i) * upstream[o];
    CHECK(x.grad[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("affine names both shapes on mismatch") {
  Graph g;
  auto w = param("w", Tensor({2, 3}));
  auto b = param("b", Tensor({2}));
  try {
    affine(g.constant(Tensor({4})), g.parameter(w), g.parameter(b));
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[4]") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("sigmoid values, saturation and slope at zero") {
  Graph g;
  auto y = sigmoid(g.constant(Tensor::vector({0.0, -100.0})));
  CHECK(y.value()[0] == 0.5);
  CHECK(y.value()[1] > 0.0);
  CHECK(y.value()[1] <= 1e-30);
  CHECK(y.value().all_finite());

  const double h = 1e-5;
  const double fd = (1.0 / (1.0 + std::exp(-h)) - 1.0 / (1.0 + std::exp(h))) / (2.0 * h);
  auto p = param("p", Tensor::vector({0.0}));
  Graph g3;
  auto s = sigmoid(g3.parameter(p));
  Tensor below = s.value();
  below[0] -= 1.0;
  g3.backward(squared_l2_half(s, g3.constant(below)));  // slope 1 at s, so grad = sigmoid'(0)
  CHECK(p.grad[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(std::abs(p.grad[0] - fd) <= 1e-8);
}

TEST_CASE("relu definition, negative inputs and subgradient at zero") {
  Graph g;
  auto y = relu(g.constant(Tensor::vector({-1, 0, 2})));
  CHECK(values(y) == std::vector<double>{0, 0, 2});

  auto x = param("x", Tensor::vector({-3, -0.5, -2, 0}));
  Graph g2;
  auto r = relu(g2.parameter(x));
  CHECK(values(r) == std::vector<double>{0, 0, 0, 0});
  Tensor target({4}, -1.0);
  g2.backward(squared_l2_half(r, g2.constant(target)));
  CHECK(x.grad == Tensor({4}));
}

TEST_CASE("softmax_temp sums to one on both paths") {
  Graph g;
  auto p = temper_probabilities(g.constant(Tensor::vector({0.5, 0.5})), 2.0);
  CHECK(values(p) == std::vector<double>{0.5, 0.5});
  auto q = temper_probabilities(g.constant(Tensor::vector({0.9, 0.1})), 2.0);
  const double a = std::sqrt(0.9), b = std::sqrt(0.1);
  CHECK(q.value()[0] == doctest::Approx(a / (a + b)).epsilon(1e-14));
  CHECK(q.value()[0] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(q.value()[1] == doctest::Approx(0.25).epsilon(1e-12));
  auto u = softmax_temp(g.constant(Tensor::vector({0, 0, 0})), 1.0);
  for (double v : u.value().data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto logits = oracle::random_tensor({4, 6}, rng, -30.0, 30.0);
    for (double theta : {0.3, 1.0, 2.0, 7.0}) {
      const auto s = softmax_rows(logits, theta);
      const auto t = temper_rows(softmax_rows(logits), theta);
      for (const auto* m : {&s, &t}) {
        for (std::size_t r = 0; r < m->rows(); ++r) {
          double sum = 0.0;
          for (double v : m->row(r)) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            sum += v;
          }
          CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
      }
    }
  }
}

TEST_CASE("temperature must be positive and zero probabilities are floored") {
  Graph g;
  CHECK_THROWS_AS(softmax_temp(g.constant(Tensor::vector({1, 2})), 0.0), ParameterError);
  CHECK_THROWS_AS(temper_probabilities(g.constant(Tensor::vector({0.5, 0.5})), -1.0), ParameterError);
  std::size_t clamps = 0;
  const auto t = temper_rows(Tensor::vector({1.0, 0.0}), 2.0, &clamps);
  CHECK(clamps == 1);
  CHECK(t.all_finite());
  CHECK(t[1] > 0.0);
}

TEST_CASE("cross_entropy on perfect and symmetric predictions") {
  Graph g;
  const std::size_t zero = 0, one = 1;
  CHECK(cross_entropy(g.constant(Tensor::vector({1, 0, 0})), {&zero, 1}).value()[0] == 0.0);
  CHECK(cross_entropy(g.constant(Tensor::vector({0.5, 0.5})), {&zero, 1}).value()[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(cross_entropy(g.constant(Tensor::vector({0.5, 0.5})), {&one, 1}).value()[0] ==
        doctest::Approx(0.693147).epsilon(1e-6));
  // A zero at the target is floored rather than producing an infinity.
  CHECK(std::isfinite(cross_entropy(g.constant(Tensor::vector({1, 0})), {&one, 1}).value()[0]));
}

TEST_CASE("distillation loss hand values") {
  Graph g;
  const auto u = Tensor::vector({0.5, 0.5});
  for (double theta : {1.0, 2.0, 5.0}) {
    CHECK(distillation_loss(g.constant(u), g.constant(u), theta).value()[0] ==
          doctest::Approx(std::log(2.0)).epsilon(1e-14));
  }
  const auto p = Tensor::vector({0.9, 0.1});
  const double v = distillation_loss(g.constant(p), g.constant(p), 2.0).value()[0];
  CHECK(std::abs(v - 0.562335) <= 1e-6);
  CHECK(std::abs(v + (0.75 * std::log(0.75) + 0.25 * std::log(0.25))) <= 1e-12);
}

TEST_CASE("distillation at unit temperature is soft-target cross-entropy") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cur = softmax_rows(oracle::random_tensor({3, 5}, rng, -3, 3));
    const auto rec = softmax_rows(oracle::random_tensor({3, 5}, rng, -3, 3));
    Graph g;
    const double d = distillation_loss(g.constant(cur), g.constant(rec), 1.0).value()[0];
    const double ce = soft_cross_entropy(g.constant(cur), rec).value()[0];
    CHECK(std::abs(d - ce) <= 1e-12);
  }
}

TEST_CASE("self-distillation equals the entropy of the tempered targets") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = softmax_rows(oracle::random_tensor({1, 4}, rng, -4, 4));
    for (double theta : {1.0, 2.0, 3.0}) {
      const auto z = temper_rows(p, theta);
      double entropy = 0.0;
      for (double v : z.data()) entropy -= v * std::log(v);
      Graph g;
      CHECK(distillation_loss(g.constant(p), g.constant(p), theta).value()[0] ==
            doctest::Approx(entropy).epsilon(1e-12));
    }
  }
}

TEST_CASE("distillation sends no gradient to the recorded targets") {
  std::mt19937_64 rng(7);
  auto logits = param("logits", oracle::random_tensor({2, 4}, rng));
  auto recorded = param("recorded", softmax_rows(oracle::random_tensor({2, 4}, rng)));
  Graph g;
  g.backward(distillation_loss(softmax_temp(g.parameter(logits)), g.parameter(recorded), 2.0));
  CHECK(recorded.grad == Tensor::zeros_like(recorded.value));
  CHECK(oracle::max_abs_diff(logits.grad, Tensor::zeros_like(logits.grad)) > 0.0);
}

TEST_CASE("distillation rejects non-normalized vectors") {
  Graph g;
  auto ok = g.constant(Tensor::vector({0.5, 0.5}));
  auto bad = g.constant(Tensor::vector({0.7, 0.7}));
  CHECK_THROWS_AS(distillation_loss(bad, ok, 2.0), NormalizationError);
  try {
    distillation_loss(ok, bad, 2.0);
    FAIL("expected a normalization error");
  } catch (const NormalizationError& e) {
    CHECK(std::string(e.what()).find("recorded") != std::string::npos);
  }
}

TEST_CASE("squared_l2_half values and shape check") {
  Graph g;
  auto a = g.constant(Tensor::vector({1, 0}));
  auto z = g.constant(Tensor::vector({0, 0}));
  CHECK(squared_l2_half(a, a).value()[0] == 0.0);
  CHECK(squared_l2_half(a, z).value()[0] == 0.5);
  CHECK_THROWS_AS(squared_l2_half(a, g.constant(Tensor::vector({1, 2, 3}))), DimensionError);
}

TEST_CASE("backward on a half squared norm returns the vector itself") {
  auto x = param("x", Tensor::vector({0.3, -1.2, 2.5}));
  Graph g;
  g.backward(squared_l2_half(g.parameter(x), g.constant(Tensor({3}))));
  CHECK(x.grad == x.value);
}

TEST_CASE("backward is linear in the loss") {
  std::mt19937_64 rng(8);
  auto w = param("w", oracle::random_tensor({3, 4}, rng));
  auto b = param("b", oracle::random_tensor({3}, rng));
  const auto x = oracle::random_tensor({2, 4}, rng);
  const auto t = oracle::random_tensor({2, 3}, rng);
  const std::size_t labels[2] = {0, 2};
  auto first = [&](Graph& g) { return squared_l2_half(affine(g.constant(x), g.parameter(w), g.parameter(b)), g.constant(t)); };
  auto second = [&](Graph& g) {
    return cross_entropy(softmax_temp(affine(g.constant(x), g.parameter(w), g.parameter(b))), labels);
  };
  w.zero_grad();
  b.zero_grad();
  {
    Graph g;
    g.backward(first(g));
  }
  {
    Graph g;
    g.backward(second(g));
  }
  const Tensor separate_w = w.grad, separate_b = b.grad;
  w.zero_grad();
  b.zero_grad();
  {
    Graph g;
    g.backward(add(first(g), second(g)));
  }
  CHECK(oracle::max_abs_diff(w.grad, separate_w) <= 1e-14);
  CHECK(oracle::max_abs_diff(b.grad, separate_b) <= 1e-14);
}

TEST_CASE("backward contract") {
  SUBCASE("non-scalar loss") {
    Graph g;
    auto v = g.constant(Tensor::vector({1, 2}));
    CHECK_THROWS_AS(g.backward(v), ContractError);
  }
  SUBCASE("each recorded operation runs once") {
    auto x = param("x", Tensor::vector({1, 2}));
    Graph g;
    auto h = sigmoid(g.parameter(x));
    auto loss = squared_l2_half(h, g.constant(Tensor({2})));
    CHECK(g.backward(loss) == 2);
    CHECK_THROWS_AS(g.backward(loss), ContractError);
  }
  SUBCASE("frozen parameters receive no gradient") {
    auto x = param("x", Tensor::vector({1, 2}));
    x.frozen = true;
    Graph g;
    g.backward(squared_l2_half(g.parameter(x), g.constant(Tensor({2}))));
    CHECK(x.grad == Tensor({2}));
  }
  SUBCASE("zero_grad clears accumulated gradient") {
    auto x = param("x", Tensor::vector({1, 2}));
    CHECK(x.grad == Tensor({2}));
    Graph g;
    g.backward(squared_l2_half(g.parameter(x), g.constant(Tensor({2}))));
    x.zero_grad();
    CHECK(x.grad == Tensor({2}));
  }
}

TEST_CASE("every differentiable op matches central differences") {
  std::mt19937_64 rng(2024);
  const double tol = 1e-4;
  for (int trial = 0; trial < 20; ++trial) {
    auto x = param("x", oracle::random_tensor({3, 4}, rng));
    auto w = param("w", oracle::random_tensor({5, 4}, rng));
    auto b = param("b", oracle::random_tensor({5}, rng));
    const auto target = oracle::random_tensor({3, 5}, rng);
    const auto soft = softmax_rows(oracle::random_tensor({3, 5}, rng, -2, 2));
    const std::size_t labels[3] = {static_cast<std::size_t>(trial % 5), 1, 4};
    std::vector<Parameter*> all{&x, &w, &b};

    CHECK(oracle::max_gradient_error(all, [&](Graph& g) {
            return squared_l2_half(affine(g.parameter(x), g.parameter(w), g.parameter(b)), g.constant(target));
          }) < tol);
    CHECK(oracle::max_gradient_error({&x}, [&](Graph& g) {
            return squared_l2_half(sigmoid(g.parameter(x)), g.constant(Tensor({3, 4}, 0.2)));
          }) < tol);

    // Keep ReLU inputs away from the kink.
    auto k = param("k", oracle::random_tensor({3, 4}, rng));
    for (auto& v : k.value.data()) {
      if (std::abs(v) < 1e-3) v = v < 0 ? -0.5 : 0.5;
    }
    CHECK(oracle::max_gradient_error({&k}, [&](Graph& g) {
            return squared_l2_half(relu(g.parameter(k)), g.constant(Tensor({3, 4}, 0.1)));
          }) < tol);

    CHECK(oracle::max_gradient_error(all, [&](Graph& g) {
            return cross_entropy(softmax_temp(affine(g.parameter(x), g.parameter(w), g.parameter(b))), labels);
          }) < tol);
    for (double theta : {1.0, 2.0}) {
      CHECK(oracle::max_gradient_error(all, [&](Graph& g) {
              return distillation_loss(softmax_temp(affine(g.parameter(x), g.parameter(w), g.parameter(b))),
                                       g.constant(soft), theta);
            }) < tol);
    }
    CHECK(oracle::max_gradient_error(all, [&](Graph& g) {
            return squared_l2_half(sigmoid(affine(g.parameter(x), g.parameter(w), g.parameter(b))),
                                   g.constant(sigmoid(g.constant(target)).value()));
          }) < tol);
    CHECK(oracle::max_gradient_error(all, [&](Graph& g) {
            return l2_distance(affine(g.parameter(x), g.parameter(w), g.parameter(b)), g.constant(target));
          }) < tol);
  }
}

TEST_CASE("two-layer network with cross-entropy matches central differences") {
  std::mt19937_64 rng(99);
  auto w1 = param("w1", oracle::random_tensor({6, 4}, rng));
  auto b1 = param("b1", oracle::random_tensor({6}, rng, 0.1, 0.5));
  auto w2 = param("w2", oracle::random_tensor({3, 6}, rng));
  auto b2 = param("b2", oracle::random_tensor({3}, rng));
  const auto x = oracle::random_tensor({5, 4}, rng);
  const std::size_t labels[5] = {0, 1, 2, 1, 0};
  const double err = oracle::max_gradient_error({&w1, &b1, &w2, &b2}, [&](Graph& g) {
    auto h = relu(affine(g.constant(x), g.parameter(w1), g.parameter(b1)));
    return cross_entropy(softmax_temp(affine(h, g.parameter(w2), g.parameter(b2))), labels);
  });
  CHECK(err < 1e-4);
}

TEST_CASE("forward and backward are bit-reproducible") {
  std::mt19937_64 rng(1);
  const auto x = oracle::random_tensor({4, 3}, rng);
  const auto w0 = oracle::random_tensor({2, 3}, rng);
  const std::size_t labels[4] = {0, 1, 1, 0};
  auto run = [&] {
    auto w = param("w", w0);
    auto b = param("b", Tensor({2}));
    Graph g;
    auto loss = cross_entropy(softmax_temp(sigmoid(affine(g.constant(x), g.parameter(w), g.parameter(b)))), labels);
    const double v = loss.value()[0];
    g.backward(loss);
    return std::make_pair(v, w.grad);
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}
