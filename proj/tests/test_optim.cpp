#include <catch2/catch_amalgamated.hpp>

#include "prunemia/optim.hpp"

using namespace prunemia;

TEST_CASE("adam leaves params unchanged on zero gradient") {
  Tensor p = Tensor::row({0.4, -0.7});
  Tensor g = Tensor::zeros({2});
  AdamState st;
  adam_step({&p}, {&g}, st, 0.001);
  REQUIRE(p[0] == 0.4);
  REQUIRE(p[1] == -0.7);
  REQUIRE(st.step_count == 1);
}

TEST_CASE("adam first step matches the closed form") {
  Tensor p = Tensor::scalar(1.0);
  Tensor g = Tensor::scalar(2.0);
  AdamState st;
  adam_step({&p}, {&g}, st, 0.001);
  // bias-corrected mhat = g, vhat = g^2 -> delta = -lr * g / (|g| + eps)
  const double expected = 1.0 - 0.001 * (2.0 / (2.0 + 1e-8));
  REQUIRE(p[0] == Catch::Approx(expected).margin(1e-15));
}

TEST_CASE("adam step magnitude does not grow under constant gradient") {
  Tensor p = Tensor::scalar(0.0);
  Tensor g = Tensor::scalar(0.5);
  AdamState st;
  adam_step({&p}, {&g}, st, 0.001);
  const double d1 = std::fabs(p[0]);
  const double before = p[0];
  adam_step({&p}, {&g}, st, 0.001);
  const double d2 = std::fabs(p[0] - before);
  REQUIRE(d2 <= d1 * (1.0 + 1e-6));
}

TEST_CASE("adam rejects shape mismatch") {
  Tensor p = Tensor::zeros({3});
  Tensor g = Tensor::zeros({2});
  AdamState st;
  REQUIRE_THROWS_AS(adam_step({&p}, {&g}, st, 0.001), ShapeError);
}

TEST_CASE("vanilla sgd step") {
  Tensor p = Tensor::scalar(0.5);
  Tensor g = Tensor::scalar(1.0);
  SgdState st;
  sgd_step({&p}, {&g}, st, 0.01);
  REQUIRE(p[0] == Catch::Approx(0.49).margin(1e-15));
}

TEST_CASE("sgd momentum unrolls as expected") {
  Tensor p = Tensor::scalar(0.0);
  Tensor g = Tensor::scalar(1.0);
  SgdState st;
  st.momentum_coeff = 0.9;
  sgd_step({&p}, {&g}, st, 0.1);
  REQUIRE(p[0] == Catch::Approx(-0.1).margin(1e-15));
  sgd_step({&p}, {&g}, st, 0.1);
  REQUIRE(p[0] == Catch::Approx(-0.29).margin(1e-15));
}

TEST_CASE("sgd zero gradient with empty buffer is a no-op") {
  Tensor p = Tensor::scalar(2.0);
  Tensor g = Tensor::scalar(0.0);
  SgdState st;
  st.momentum_coeff = 0.9;
  sgd_step({&p}, {&g}, st, 0.1);
  REQUIRE(p[0] == 2.0);
}

TEST_CASE("step schedule drops at half and three quarters") {
  REQUIRE(step_lr(0, 0.01, 100) == 0.01);
  REQUIRE(step_lr(49, 0.01, 100) == 0.01);
  REQUIRE(step_lr(50, 0.01, 100) == Catch::Approx(0.001));
  REQUIRE(step_lr(74, 0.01, 100) == Catch::Approx(0.001));
  REQUIRE(step_lr(75, 0.01, 100) == Catch::Approx(0.0001));
  REQUIRE(step_lr(99, 0.01, 100) == Catch::Approx(0.0001));
  REQUIRE_THROWS_AS(step_lr(100, 0.01, 100), std::invalid_argument);
  REQUIRE_THROWS_AS(step_lr(-1, 0.01, 100), std::invalid_argument);
}
