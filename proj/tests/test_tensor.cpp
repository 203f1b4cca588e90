// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "emobev/tensor.hpp"

using namespace emobev;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, bool rg = false) {
  int n = 1;
  for (int d : shape) n *= d;
  std::vector<double> data(static_cast<std::size_t>(n));
  for (double& v : data) v = rng.uniform(-2.0, 2.0);
  return Tensor::from_data(std::move(shape), std::move(data), rg);
}

// independent triple-loop product used as the matmul oracle
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 int m, int k, int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p)
        acc += a[static_cast<std::size_t>(i * k + p)] * b[static_cast<std::size_t>(p * n + j)];
      c[static_cast<std::size_t>(i * n + j)] = acc;
    }
  return c;
}

}  // namespace

TEST_CASE("elementwise op definitions") {
  Tape tape;
  Tensor x = Tensor::from_data({3}, {-1.0, 0.0, 2.0});
  Tensor r = relu(tape, x);
  CHECK(r.vec() == std::vector<double>{0.0, 0.0, 2.0});

  Tensor s = sigmoid(tape, Tensor::scalar(0.0));
  CHECK(s.item() == doctest::Approx(0.5).epsilon(1e-15));

  Tensor p = prelu(tape, Tensor::from_data({1}, {-4.0}), Tensor::scalar(0.25));
  CHECK(p.item() == doctest::Approx(-1.0).epsilon(1e-15));

  Tensor a = Tensor::from_data({2}, {1.0, 2.0});
  Tensor b = Tensor::from_data({2}, {3.0, 5.0});
  CHECK(add(tape, a, b).vec() == std::vector<double>{4.0, 7.0});
  CHECK(sub(tape, a, b).vec() == std::vector<double>{-2.0, -3.0});
  CHECK(mul(tape, a, b).vec() == std::vector<double>{3.0, 10.0});
}

TEST_CASE("scalar broadcast in binary ops") {
  Tape tape;
  Tensor a = Tensor::from_data({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor c = Tensor::scalar(10.0);
  CHECK(add(tape, a, c).vec() == std::vector<double>{11.0, 12.0, 13.0, 14.0});
  CHECK(sub(tape, c, a).vec() == std::vector<double>{9.0, 8.0, 7.0, 6.0});
  Tensor bad = Tensor::from_data({3}, {1.0, 2.0, 3.0});
  CHECK_THROWS_AS(add(tape, a, bad), std::invalid_argument);
}

TEST_CASE("matmul identity and hand arithmetic") {
  Tape tape;
  Tensor eye = Tensor::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor m = Tensor::from_data({2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(matmul(tape, eye, m).vec() == m.vec());

  Tensor a = Tensor::from_data({1, 2}, {1.0, 2.0});
  Tensor b = Tensor::from_data({2, 1}, {3.0, 4.0});
  CHECK(matmul(tape, a, b).item() == doctest::Approx(11.0));

  Tensor bad = Tensor::from_data({3, 1}, {1.0, 2.0, 3.0});
  CHECK_THROWS_AS(matmul(tape, a, bad), std::invalid_argument);
}

TEST_CASE("matmul matches the triple-loop oracle") {
  Rng rng(42);
  Tensor a = random_tensor({5, 4}, rng);
  Tensor b = random_tensor({4, 3}, rng);
  Tape tape;
  Tensor c = matmul(tape, a, b);
  const auto expect = naive_matmul(a.vec(), b.vec(), 5, 4, 3);
  for (int i = 0; i < c.size(); ++i)
    CHECK(c.data()[i] == doctest::Approx(expect[static_cast<std::size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("backward of sum is all-ones") {
  Tape tape;
  Tensor x = Tensor::from_data({2, 3}, {1.0, -2.0, 3.0, 0.5, 0.0, 7.0}, true);
  Tensor loss = sum(tape, x);
  tape.backward(loss);
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of sum of squares is 2x") {
  Tape tape;
  Tensor x = Tensor::from_data({1}, {3.0}, true);
  Tensor loss = sum(tape, mul(tape, x, x));
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("backward rejects non-scalar loss and detached graphs") {
  Tape tape;
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tensor y = add(tape, x, x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);

  Tape other;
  Tensor loss = sum(tape, y);
  CHECK_THROWS_AS(other.backward(loss), std::invalid_argument);

  // params are not op outputs, so they are "detached" for backward purposes
  CHECK_THROWS_AS(tape.backward(Tensor::scalar(1.0, true)), std::invalid_argument);
}

TEST_CASE("tape replays exactly once per recording") {
  Tape tape;
  Tensor x = Tensor::scalar(2.0, true);
  Tensor loss = mul(tape, x, x);
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
  tape.clear();
  x.zero_grad();
  Tensor loss2 = mul(tape, x, x);
  tape.backward(loss2);
  CHECK(x.grad()[0] == doctest::Approx(4.0));
}

TEST_CASE("fan-out accumulation is additive") {
  // loss = f(x) + g(x) with f = sum(x*x), g = sum(3*x)
  Tape tape;
  Tensor x = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  Tensor f = sum(tape, mul(tape, x, x));
  Tensor g = sum(tape, mul(tape, x, Tensor::scalar(3.0)));
  Tensor loss = add(tape, f, g);
  tape.backward(loss);
  for (int i = 0; i < 3; ++i)
    CHECK(x.grad()[static_cast<std::size_t>(i)] == doctest::Approx(2.0 * x.data()[i] + 3.0));
}

TEST_CASE("backward is deterministic") {
  auto run = []() {
    Rng rng(7);
    Tensor a = random_tensor({4, 4}, rng, true);
    Tensor b = random_tensor({4, 4}, rng, true);
    Tape tape;
    Tensor loss = sum(tape, tanh_op(tape, matmul(tape, a, b)));
    tape.backward(loss);
    std::vector<double> gs = a.grad();
    gs.insert(gs.end(), b.grad().begin(), b.grad().end());
    return gs;
  };
  CHECK(run() == run());  // bitwise
}

TEST_CASE("non-finite forward values are an error state") {
  Tape tape;
  Tensor big = Tensor::from_data({1}, {1e308});
  CHECK_THROWS_AS(mul(tape, big, big), NumericalError);
}

TEST_CASE("grad_check basics") {
  Rng rng(11);
  // f = sum
  {
    Tensor x = random_tensor({5}, rng);
    double err = grad_check([](Tape& t, const Tensor& v) { return sum(t, v); }, x, 1e-5);
    CHECK(err < 1e-10);
  }
  // f = MSE(linear-style product, 0)
  {
    Tensor w = random_tensor({4, 2}, rng);
    Tensor x = random_tensor({3, 4}, rng);
    auto f = [w](Tape& t, const Tensor& v) {
      Tensor y = matmul(t, v, w);
      return sum(t, mul(t, y, y));
    };
    CHECK(grad_check(f, x, 1e-5) < 1e-6);
  }
  CHECK_THROWS_AS(grad_check([](Tape& t, const Tensor& v) { return sum(t, v); },
                             Tensor::scalar(1.0), 0.5),
                  std::invalid_argument);
}

TEST_CASE("grad_check across registered elementwise ops") {
  Rng rng(23);
  auto through = [](Tensor (*op)(Tape&, const Tensor&)) {
    return [op](Tape& t, const Tensor& v) { return sum(t, op(t, mul(t, v, v))); };
  };
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = random_tensor({6}, rng);
    CHECK(grad_check(through(&relu), x, 1e-5) < 1e-4);
    CHECK(grad_check(through(&sigmoid), x, 1e-5) < 1e-4);
    CHECK(grad_check(through(&tanh_op), x, 1e-5) < 1e-4);
    Tensor slope = Tensor::scalar(0.25);
    auto fp = [slope](Tape& t, const Tensor& v) { return sum(t, prelu(t, v, slope)); };
    CHECK(grad_check(fp, x, 1e-5) < 1e-4);
    Tensor other = random_tensor({6}, rng);
    auto fb = [other](Tape& t, const Tensor& v) {
      return sum(t, mul(t, sub(t, v, other), add(t, v, other)));
    };
    CHECK(grad_check(fb, x, 1e-5) < 1e-4);
  }
}

TEST_CASE("concat_time splits gradients back") {
  Rng rng(5);
  Tensor a = random_tensor({1, 2, 3}, rng);
  Tensor b = random_tensor({1, 2, 2}, rng);
  auto f = [b](Tape& t, const Tensor& v) {
    Tensor c = concat_time(t, {v, b});
    return sum(t, mul(t, c, c));
  };
  CHECK(grad_check(f, a, 1e-5) < 1e-6);
  Tape tape;
  Tensor c = concat_time(tape, {a, b});
  CHECK(c.shape() == std::vector<int>{1, 2, 5});
  // row of channel 0: a[0,0,:] then b[0,0,:]
  CHECK(c.data()[0] == a.data()[0]);
  CHECK(c.data()[2] == a.data()[2]);
  CHECK(c.data()[3] == b.data()[0]);
  CHECK(c.data()[5] == a.data()[3]);  // channel 1 starts
}
