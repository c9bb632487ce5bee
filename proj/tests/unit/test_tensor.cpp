#include <doctest.h>

#include <cmath>
#include <string>

#include "advlab/error.hpp"
#include "advlab/ops.hpp"
#include "support.hpp"

using namespace advlab;
using namespace advlab::testing;

namespace {

bool message_contains(const std::exception& e, const std::string& needle) {
  return std::string(e.what()).find(needle) != std::string::npos;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("construction rejects inconsistent shapes") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
    CHECK_THROWS_AS(Tensor(Shape{}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK(Tensor({2, 3}).size() == 6);
  }

  TEST_CASE("matmul with the identity") {
    Tape t;
    Var a = t.constant(Tensor::matrix({{1, 2}, {3, 4}}));
    Var i = t.constant(Tensor::matrix({{1, 0}, {0, 1}}));
    CHECK(ops::matmul(a, i).value() == Tensor::matrix({{1, 2}, {3, 4}}));
  }

  TEST_CASE("relu on a small vector") {
    Tape t;
    CHECK(ops::relu(t.constant(Tensor::vector({-1, 0, 2}))).value() == Tensor::vector({0, 0, 2}));
  }

  TEST_CASE("shape mismatch names both shapes") {
    Tape t;
    Var a = t.constant(Tensor({2, 3}));
    Var b = t.constant(Tensor({3, 2}));
    try {
      ops::add(a, b);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(message_contains(e, "[2x3]"));
      CHECK(message_contains(e, "[3x2]"));
    }
    try {
      ops::matmul(a, a);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(message_contains(e, "[2x3]"));
    }
  }

  TEST_CASE("broadcast only over the leading axis") {
    Tape t;
    Var a = t.constant(Tensor({4, 3}, 1.0));
    Var row = t.constant(Tensor::vector({1, 2, 3}));
    const Tensor s = ops::add(a, row).value();
    CHECK(s[3] == 2.0);
    CHECK(s[5] == 4.0);
    CHECK_THROWS_AS(ops::add(a, t.constant(Tensor::vector({1, 2, 3, 4}))), ShapeError);
  }

  TEST_CASE("log and div reject invalid domains") {
    Tape t;
    CHECK_THROWS_AS(ops::log(t.constant(Tensor::vector({1, 0}))), DomainError);
    CHECK_THROWS_AS(ops::log(t.constant(Tensor::vector({-2}))), DomainError);
    CHECK_THROWS_AS(ops::div(t.constant(Tensor::vector({1, 2})), t.constant(Tensor::vector({1, 0}))), DomainError);
  }

  TEST_CASE("overflow is an error, not a value") {
    Tape t;
    CHECK_THROWS_AS(ops::exp(t.constant(Tensor::vector({1000}))), NumericError);
  }

  TEST_CASE("pad and slice") {
    Tape t;
    Var x = t.constant(Tensor({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
    const Tensor p = ops::pad2d(x, 1, 0, 0, 1).value();
    CHECK(p.shape() == Shape{1, 1, 3, 3});
    CHECK(p.values() == std::vector<double>{0, 0, 0, 1, 2, 0, 3, 4, 0});
    const Tensor s = ops::slice(t.constant(Tensor::matrix({{1, 2, 3}, {4, 5, 6}})), 1, 1, 3).value();
    CHECK(s == Tensor::matrix({{2, 3}, {5, 6}}));
  }
}

TEST_SUITE("autodiff") {
  TEST_CASE("x * x at 3 has gradient 6") {
    Tape t;
    Var x = t.variable(Tensor::scalar(3));
    t.backward(x * x);
    CHECK(x.grad().item() == 6.0);
  }

  TEST_CASE("two uses of one leaf accumulate") {
    Tape t;
    Var x = t.variable(Tensor::scalar(1.5));
    t.backward(x + x);
    CHECK(x.grad().item() == 2.0);
  }

  TEST_CASE("sum gradient is ones") {
    Tape t;
    Var x = t.variable(Tensor({2, 3}, 0.25));
    t.backward(ops::sum(x));
    CHECK(x.grad() == Tensor::ones({2, 3}));
  }

  TEST_CASE("non-scalar loss is a contract error") {
    Tape t;
    Var x = t.variable(Tensor({2}, 1.0));
    CHECK_THROWS_AS(t.backward(ops::exp(x)), ContractError);
  }

  TEST_CASE("every reachable node gets a gradient of its own shape") {
    Tape t;
    Var x = t.variable(Tensor({2, 3}, 0.5));
    Var h = ops::tanh(x);
    Var y = ops::sum(ops::row_sum(h));
    t.backward(y);
    CHECK(h.grad().shape() == h.shape());
    CHECK(x.grad().shape() == x.shape());
  }

  TEST_CASE("constants record no gradient rule") {
    Tape t;
    Var a = t.constant(Tensor({2}, 1.0));
    Var b = ops::exp(a);
    CHECK_FALSE(b.requires_grad());
    Var c = ops::mul(b, t.variable(Tensor({2}, 2.0)));
    CHECK(c.requires_grad());
  }

  TEST_CASE("backward is bitwise deterministic") {
    std::mt19937_64 rng(3);
    const Tensor x = random_tensor(rng, {2, 3, 8, 8});
    const Tensor k = random_tensor(rng, {4, 3, 3, 3});
    auto grads = [&] {
      Tape t;
      Var xv = t.variable(x), kv = t.variable(k);
      Var y = ops::maxpool2d(ops::tanh(ops::conv2d(xv, kv, {}, {{1, 1}, {1, 1}})), {2, 2}, {2, 2});
      t.backward(ops::sum(ops::mul(y, y)));
      return std::pair(xv.grad(), kv.grad());
    };
    const auto a = grads();
    const auto b = grads();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
  }

  TEST_CASE("repeated sweeps from different roots do not mix") {
    Tape t;
    Var x = t.variable(Tensor::vector({1, 2}));
    Var y = ops::mul(x, x);
    t.backward(y, Tensor::vector({1, 0}));
    CHECK(x.grad() == Tensor::vector({2, 0}));
    t.backward(y, Tensor::vector({0, 1}));
    CHECK(x.grad() == Tensor::vector({0, 4}));
  }
}

TEST_SUITE("conv") {
  TEST_CASE("all-ones 3x3 convolution") {
    Tape t;
    const Tensor y = ops::conv2d(t.constant(Tensor::ones({1, 1, 3, 3})), t.constant(Tensor::ones({1, 1, 3, 3}))).value();
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 9.0);
  }

  TEST_CASE("optimised conv2d equals the direct-loop reference") {
    std::mt19937_64 rng(21);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 1 + rng() % 2, c = 1 + rng() % 3, o = 1 + rng() % 4, k = 1 + rng() % 3;
      const std::size_t s = 1 + rng() % 2, p = rng() % 2, h = k + rng() % 7, w = k + rng() % 7;
      const Tensor x = random_tensor(rng, {n, c, h, w});
      const Tensor kern = random_tensor(rng, {o, c, k, k});
      Tape t;
      const Tensor y = ops::conv2d(t.constant(x), t.constant(kern), {}, {{s, s}, {p, p}}).value();
      worst = std::max(worst, max_abs_diff(y, conv2d_reference(x, kern, s, p)));
    }
    // The fixed case from the contract.
    const Tensor x = random_tensor(rng, {2, 3, 8, 8});
    const Tensor kern = random_tensor(rng, {4, 3, 3, 3});
    Tape t;
    worst = std::max(worst, max_abs_diff(ops::conv2d(t.constant(x), t.constant(kern)).value(),
                                         conv2d_reference(x, kern, 1, 0)));
    CHECK(worst < 1e-9);
  }

  TEST_CASE("single-pixel transposed convolution places x * K") {
    Tape t;
    const Tensor k({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    const Tensor y = ops::conv2d_transposed(t.constant(Tensor({1, 1, 1, 1}, 3.0)), t.constant(k)).value();
    CHECK(y == Tensor({1, 1, 2, 2}, std::vector<double>{3, 6, 9, 12}));
  }

  TEST_CASE("transposed convolution equals the scatter-add reference") {
    std::mt19937_64 rng(22);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t c = 1 + rng() % 3, o = 1 + rng() % 3, k = 2 + rng() % 2, s = 1 + rng() % 2;
      const std::size_t h = 2 + rng() % 4, w = 2 + rng() % 4, p = rng() % 2;
      const Tensor x = random_tensor(rng, {2, c, h, w});
      const Tensor kern = random_tensor(rng, {c, o, k, k});
      Tape t;
      const Tensor y = ops::conv2d_transposed(t.constant(x), t.constant(kern), {}, {{s, s}, {p, p}}).value();
      CHECK(y.dim(2) == (h - 1) * s - 2 * p + k);
      worst = std::max(worst, max_abs_diff(y, conv2d_transposed_reference(x, kern, s, p)));
    }
    const Tensor x = random_tensor(rng, {2, 2, 4, 4});
    const Tensor kern = random_tensor(rng, {2, 3, 3, 3});
    Tape t;
    worst = std::max(worst, max_abs_diff(ops::conv2d_transposed(t.constant(x), t.constant(kern)).value(),
                                         conv2d_transposed_reference(x, kern, 1, 0)));
    CHECK(worst < 1e-9);
  }

  TEST_CASE("conv2d backward-input is conv2d_transposed forward") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t s = 1 + rng() % 2, p = rng() % 2;
      const Tensor x = random_tensor(rng, {2, 3, 7, 7});
      const Tensor kern = random_tensor(rng, {4, 3, 3, 3});
      const ops::Conv2dOptions opt{{s, s}, {p, p}};
      Tape t;
      Var xv = t.variable(x);
      Var y = ops::conv2d(xv, t.constant(kern), {}, opt);
      const Tensor dy = random_tensor(rng, y.shape());
      t.backward(y, dy);
      Tape t2;
      const Tensor tr = ops::conv2d_transposed(t2.constant(dy), t2.constant(kern), {}, opt).value();
      // Same-size case; strided inputs whose last rows are never read are cropped.
      REQUIRE(tr.dim(2) <= x.dim(2));
      const std::size_t hh = tr.dim(2), ww = tr.dim(3);
      bool equal = true;
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t i = 0; i < 7; ++i)
            for (std::size_t j = 0; j < 7; ++j) {
              const double g = xv.grad()[((b * 3 + c) * 7 + i) * 7 + j];
              const double r = (i < hh && j < ww) ? tr[((b * 3 + c) * hh + i) * ww + j] : 0.0;
              equal = equal && g == r;
            }
      CHECK(equal);
    }
  }

  TEST_CASE("conv2d rejects a nonpositive output size") {
    Tape t;
    CHECK_THROWS_AS(ops::conv2d(t.constant(Tensor({1, 1, 2, 2})), t.constant(Tensor({1, 1, 3, 3}))), ConfigError);
    CHECK_THROWS_AS(ops::conv2d(t.constant(Tensor({1, 2, 4, 4})), t.constant(Tensor({1, 3, 3, 3}))), ShapeError);
  }

  TEST_CASE("maxpool of a 2x2 map") {
    Tape t;
    CHECK(ops::maxpool2d(t.constant(Tensor({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4})), {2, 2}, {2, 2})
              .value()
              .item() == 4.0);
  }

  TEST_CASE("maxpool ties route the gradient to the first element") {
    Tape t;
    Var x = t.variable(Tensor({1, 1, 4, 4}, 5.0));
    Var y = ops::maxpool2d(x, {2, 2}, {2, 2});
    CHECK(y.value() == Tensor({1, 1, 2, 2}, 5.0));
    t.backward(ops::sum(y));
    std::vector<double> expect(16, 0.0);
    for (std::size_t i : {0, 2, 8, 10}) expect[i] = 1.0;
    CHECK(x.grad().values() == expect);
  }

  TEST_CASE("maxpool window larger than input") {
    Tape t;
    CHECK_THROWS_AS(ops::maxpool2d(t.constant(Tensor({1, 1, 2, 2})), {3, 3}, {1, 1}), ConfigError);
  }
}
