#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "csam/attention.hpp"
#include "csam/grad_check.hpp"
#include "csam/ops.hpp"

using namespace csam;

TEST_CASE("tensor construction enforces shape and finiteness") {
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::from_data({0, 2}, {}), ShapeError);
  CHECK_THROWS_AS(Tensor::from_data({1}, {std::numeric_limits<double>::quiet_NaN()}), NonFiniteError);
  const Tensor t = Tensor::full({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.is_leaf());
}

TEST_CASE("non-finite op output raises") {
  const Tensor big = Tensor::scalar(1e308);
  CHECK_THROWS_AS(scale(big, 10.0), NonFiniteError);
}

TEST_CASE("backward of sum gives ones") {
  Tensor x = Tensor::from_data({2, 3}, {1, -2, 3, 4, 5, -6}, true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("sigmoid gradient at zero is a quarter") {
  Tensor x = Tensor::scalar(0.0, true);
  backward(sigmoid(x));
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("backward resets leaf grads, backward_accumulate adds") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  const Tensor loss = sum(mul(x, x));
  backward(loss);
  backward(loss);
  CHECK(x.grad()[1] == 4.0);
  backward_accumulate(loss);
  CHECK(x.grad()[1] == 8.0);
}

TEST_CASE("non-scalar loss is rejected") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(scale(x, 2.0)), ShapeError);
}

TEST_CASE("tape is topologically ordered and replays deterministically") {
  Rng rng(3);
  Tensor a = Tensor::from_data({3, 4}, rng.normal_vector(12), true);
  Tensor b = Tensor::from_data({4, 2}, rng.normal_vector(8), true);
  const Tensor h = sigmoid(matmul(a, b));
  const Tensor out = sum(mul(h, reshape(h, {3, 2})));
  ComputationTape tape(out);
  const auto names = tape.op_names();
  REQUIRE(names.size() >= 4);
  auto pos = [&](const std::string& n) {
    return std::find(names.begin(), names.end(), n) - names.begin();
  };
  CHECK(names.front() == "matmul");
  CHECK(pos("matmul") < pos("sigmoid"));
  CHECK(pos("sigmoid") < pos("mul"));
  CHECK(pos("mul") < static_cast<long>(names.size()) - 1);
  tape.replay();
  const std::vector<double> ga(a.grad().begin(), a.grad().end());
  tape.replay();
  for (std::size_t i = 0; i < ga.size(); ++i) CHECK(a.grad()[i] == ga[i]);
}

TEST_CASE("shared intermediate accumulates from every consumer") {
  Tensor x = Tensor::from_data({2}, {0.3, -0.7}, true);
  const Tensor s = sigmoid(x);
  backward(sum(add(mul(s, s), s)));
  for (std::size_t i = 0; i < 2; ++i) {
    const double v = 1.0 / (1.0 + std::exp(-x.data()[i]));
    CHECK(x.grad()[i] == doctest::Approx((2 * v + 1) * v * (1 - v)).epsilon(1e-14));
  }
}

TEST_CASE("no-grad guard stops recording") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  NoGradGuard guard;
  const Tensor y = scale(x, 3.0);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.is_leaf());
}

TEST_CASE("grad_check examples") {
  Rng rng(11);
  const Tensor x = Tensor::from_data({4, 5}, rng.normal_vector(20));
  CHECK(grad_check([](const Tensor& t) { return sum(sigmoid(t)); }, x).max_error < 1e-7);

  Tensor w = Tensor::from_data({3, 4}, rng.normal_vector(12), true);
  const Tensor v = Tensor::from_data({4, 1}, rng.normal_vector(4));
  CHECK(grad_check([&] { return sum(matmul(w, v)); }, w).max_error < 1e-9);

  // Frozen z-sample through the slice gate.
  SliceAttentionParams p = SliceAttentionParams::random(6, 3, 3, rng);
  const Tensor f = Tensor::from_data({6, 2, 3, 3}, rng.normal_vector(108));
  for (auto& n : p.named("")) {
    const auto r = grad_check(
        [&] {
          Rng noise(99);
          return sum(slice_attention(f, p, Mode::kTrain, noise).gate);
        },
        *n.tensor);
    CHECK(r.max_error < 1e-4);
  }
}

TEST_CASE("grad_check covers parameters the output never reaches") {
  Tensor used = Tensor::from_data({2}, {1, 2}, true);
  Tensor unused = Tensor::from_data({2}, {3, 4}, true);
  backward(sum(mul(unused, unused)));  // leaves a stale grad behind
  const auto r = grad_check([&] { return sum(used); }, unused);
  CHECK(r.max_error == 0.0);
}

TEST_CASE("fault injection corrupts exactly the named backward rule") {
  const Tensor x = Tensor::from_data({3}, {0.1, 0.2, 0.3});
  auto f = [](const Tensor& t) { return sum(sigmoid(t)); };
  {
    BackwardFaultInjection fault("sigmoid", 2.0);
    CHECK(grad_check(f, x).max_error > 0.1);
    CHECK(grad_check([](const Tensor& t) { return sum(softplus(t)); }, x).max_error < 1e-8);
  }
  CHECK(grad_check(f, x).max_error < 1e-8);
}

TEST_CASE("kink-aware grad_check shrinks the step only across kinks") {
  // leaky_relu kink sits within eps of the evaluation point.
  Tensor x = Tensor::from_data({2}, {3e-6, 0.5}, true);
  auto f = [&] { return sum(leaky_relu(x, 0.01)); };
  CHECK(grad_check(f, x).max_error > 0.1);
  GradCheckOptions opt;
  opt.kink_aware = true;
  const auto r = grad_check(f, x, opt);
  CHECK(r.kink_coordinates == 1);
  CHECK(r.max_error < 1e-8);
}
