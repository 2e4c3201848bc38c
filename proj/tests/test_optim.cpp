#include <cmath>
#include <limits>
#include <random>

#include <doctest.h>

#include "ebll/optim.hpp"
#include "oracles.hpp"

using namespace ebll;
using namespace ebll::optim;
using nn::Parameter;

namespace {

Parameter scalar_param(const char* id, double value, double grad) {
  Parameter p(id, Tensor::vector({value}));
  p.grad[0] = grad;
  return p;
}

}  // namespace

TEST_CASE("sgd without gradient or decay leaves values alone") {
  auto p = scalar_param("p", 1.5, 0.0);
  Parameter* ps[] = {&p};
  Sgd sgd({0.1, 0.0, 0.0});
  sgd.step(ps);
  CHECK(p.value[0] == 1.5);
}

TEST_CASE("sgd one plain step") {
  auto p = scalar_param("p", 1.0, 1.0);
  Parameter* ps[] = {&p};
  Sgd sgd({0.1, 0.0, 0.0});
  sgd.step(ps);
  CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("sgd momentum recurrence over two steps") {
  auto p = scalar_param("p", 0.0, 1.0);
  Parameter* ps[] = {&p};
  Sgd sgd({0.1, 0.0, 0.9});
  sgd.step(ps);
  CHECK(p.value[0] == -0.1);
  p.grad[0] = 1.0;
  sgd.step(ps);
  // v1 = 1, v2 = 0.9 * 1 + 1 = 1.9; w2 = -0.1 - 0.1 * 1.9.
  const double v2 = 0.9 * 1.0 + 1.0;
  CHECK(p.value[0] == -0.1 - 0.1 * v2);
  // The unrolled oracle -0.1 - 0.19 evaluated in doubles; the decimal -0.29 is one ulp away.
  CHECK(p.value[0] == -0.1 - 0.19);
  CHECK(p.value[0] == std::nextafter(-0.29, -1.0));
}

TEST_CASE("sgd weight decay shrinks by a constant factor") {
  std::mt19937_64 rng(4);
  Parameter p("p", oracle::random_tensor({3, 2}, rng, -2, 2));
  const Tensor start = p.value;
  Parameter* ps[] = {&p};
  const double lr = 0.05, wd = 0.01;
  Sgd sgd({lr, wd, 0.0});
  Tensor expect = start;
  for (int step = 0; step < 5; ++step) {
    p.zero_grad();
    sgd.step(ps);
    for (auto& v : expect.data()) v = v - lr * (wd * v);
  }
  CHECK(p.value == expect);
  for (std::size_t i = 0; i < start.size(); ++i) {
    CHECK(p.value[i] == doctest::Approx(start[i] * std::pow(1.0 - lr * wd, 5)).epsilon(1e-14));
  }
}

TEST_CASE("sgd rejects non-finite gradients before touching anything") {
  auto a = scalar_param("a", 1.0, 1.0);
  auto b = scalar_param("b", 1.0, std::numeric_limits<double>::quiet_NaN());
  Parameter* ps[] = {&a, &b};
  Sgd sgd({0.1, 0.0, 0.0});
  try {
    sgd.step(ps);
    FAIL("expected a non-finite gradient error");
  } catch (const NonFiniteGradient& e) {
    CHECK(e.parameter == "b");
  }
  CHECK(a.value[0] == 1.0);
}

TEST_CASE("sgd config ranges") {
  CHECK_THROWS(SgdConfig{0.0, 0.0, 0.0}.validate());
  CHECK_THROWS(SgdConfig{0.1, -1.0, 0.0}.validate());
  CHECK_THROWS(SgdConfig{0.1, 0.0, 1.0}.validate());
  CHECK_NOTHROW(SgdConfig{}.validate());
}

TEST_CASE("adadelta first step from zero accumulators") {
  auto p = scalar_param("p", 0.0, 1.0);
  Parameter* ps[] = {&p};
  AdaDelta opt({0.95, 1e-6});
  opt.step(ps);
  const double expect = -std::sqrt(1e-6) / std::sqrt(0.05 + 1e-6);
  CHECK(p.value[0] == doctest::Approx(expect).epsilon(1e-14));
  CHECK(std::abs(p.value[0] - (-0.0044721)) <= 1e-7);
  const auto* slot = opt.slot("p");
  REQUIRE(slot != nullptr);
  CHECK(slot->acc_grad_sq[0] == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(slot->acc_update_sq[0] == doctest::Approx(0.05 * expect * expect).epsilon(1e-14));
}

TEST_CASE("adadelta with zero gradient only decays its accumulators") {
  auto p = scalar_param("p", 0.7, 1.0);
  Parameter* ps[] = {&p};
  AdaDelta opt({0.95, 1e-6});
  opt.step(ps);
  const double value = p.value[0];
  const auto before = *opt.slot("p");
  p.zero_grad();
  opt.step(ps);
  CHECK(p.value[0] == value);
  const auto& after = *opt.slot("p");
  CHECK(after.acc_grad_sq[0] == doctest::Approx(0.95 * before.acc_grad_sq[0]).epsilon(1e-15));
  CHECK(after.acc_update_sq[0] == doctest::Approx(0.95 * before.acc_update_sq[0]).epsilon(1e-15));
}

TEST_CASE("adadelta steps oppose the gradient and are odd in it") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g0 = oracle::random_tensor({4}, rng, -3, 3);
    const auto warmup = oracle::random_tensor({4}, rng, -3, 3);
    Parameter plus("p", Tensor({4})), minus("p", Tensor({4}));
    Parameter* pp[] = {&plus};
    Parameter* pm[] = {&minus};
    AdaDelta a({0.95, 1e-6}), b({0.95, 1e-6});
    // Same accumulator state: warm-up gradients of equal magnitude.
    plus.grad = warmup;
    minus.grad = warmup;
    a.step(pp);
    b.step(pm);
    // Accumulators do not depend on the values, so restart both at zero and read the step directly.
    plus.value.fill(0.0);
    minus.value.fill(0.0);
    plus.grad = g0;
    minus.grad = g0;
    for (auto& v : minus.grad.data()) v = -v;
    a.step(pp);
    b.step(pm);
    for (std::size_t i = 0; i < 4; ++i) {
      const double dp = plus.value[i];
      const double dm = minus.value[i];
      CHECK(dp == -dm);
      CHECK(dp * g0[i] <= 0.0);
    }
  }
}

TEST_CASE("adadelta accumulators stay non-negative and steppers are deterministic") {
  std::mt19937_64 rng(10);
  std::vector<Tensor> grads;
  for (int i = 0; i < 10; ++i) grads.push_back(oracle::random_tensor({2, 3}, rng, -5, 5));
  auto run = [&] {
    Parameter p("w", Tensor({2, 3}, 0.5));
    Parameter* ps[] = {&p};
    AdaDelta opt({});
    for (const auto& g : grads) {
      p.grad = g;
      opt.step(ps);
      for (double v : opt.slot("w")->acc_grad_sq.data()) CHECK(v >= 0.0);
      for (double v : opt.slot("w")->acc_update_sq.data()) CHECK(v >= 0.0);
    }
    return p.value;
  };
  CHECK(run() == run());
  auto run_sgd = [&] {
    Parameter p("w", Tensor({2, 3}, 0.5));
    Parameter* ps[] = {&p};
    Sgd opt({});
    for (const auto& g : grads) {
      p.grad = g;
      opt.step(ps);
    }
    return p.value;
  };
  CHECK(run_sgd() == run_sgd());
}

TEST_CASE("adadelta rejects non-finite gradients and bad settings") {
  auto p = scalar_param("p", 0.0, std::numeric_limits<double>::infinity());
  Parameter* ps[] = {&p};
  AdaDelta opt({});
  CHECK_THROWS_AS(opt.step(ps), NonFiniteGradient);
  CHECK(p.value[0] == 0.0);
  CHECK_THROWS(AdaDeltaConfig{1.0, 1e-6}.validate());
  CHECK_THROWS(AdaDeltaConfig{0.9, 0.0}.validate());
}
