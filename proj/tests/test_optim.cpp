// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "emobev/optim.hpp"

using namespace emobev;

namespace {

// independent scalar Adam reference, transcribed directly from the update
// equations rather than from the library code
struct ScalarAdamRef {
  double m = 0.0, v = 0.0;
  long t = 0;
  double step(double p, double g, double lr, double b1 = 0.9, double b2 = 0.999,
              double eps = 1e-8) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    return p - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

}  // namespace

TEST_CASE("adam leaves parameters unchanged on zero gradient") {
  Tensor p = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  Adam opt({p});
  opt.zero_grad();
  opt.step(0.1);
  CHECK(p.vec() == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("first adam step has magnitude ~ lr") {
  Tensor p = Tensor::scalar(3.0, true);
  Adam opt({p});
  p.grad()[0] = 0.7;
  opt.step(0.01);
  CHECK(std::abs(3.0 - p.item()) == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adam drives p^2 to zero and matches the scalar reference") {
  Tensor p = Tensor::scalar(1.0, true);
  Adam opt({p});
  ScalarAdamRef ref;
  double pref = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double g = 2.0 * p.item();  // d(p^2)/dp
    p.zero_grad();
    p.grad()[0] = g;
    opt.step(0.1);
    pref = ref.step(pref, 2.0 * pref, 0.1);
    CHECK(p.item() == doctest::Approx(pref).epsilon(1e-12));
  }
  CHECK(std::abs(p.item()) < 0.05);
}

TEST_CASE("adam rejects non-finite gradients") {
  Tensor p = Tensor::scalar(1.0, true);
  Adam opt({p});
  p.grad()[0] = std::nan("");
  CHECK_THROWS_AS(opt.step(0.1), NumericalError);
}

TEST_CASE("polynomial schedule endpoints and midpoint") {
  PolySchedule s{1e-3, 100, 1.0, 0.0};
  CHECK(s.lr_at(0) == doctest::Approx(1e-3));
  CHECK(s.lr_at(100) == 0.0);
  CHECK(s.lr_at(50) == doctest::Approx(5e-4));
  CHECK(s.lr_at(130) == 0.0);  // clamped past total_steps
  PolySchedule f{1e-3, 10, 2.0, 1e-5};
  CHECK(f.lr_at(10) == doctest::Approx(1e-5));
  for (int t = 1; t <= 10; ++t) CHECK(f.lr_at(t) <= f.lr_at(t - 1));
  PolySchedule bad{1e-3, 0, 1.0, 0.0};
  CHECK_THROWS_AS(bad.lr_at(0), std::invalid_argument);
}

TEST_CASE("mse loss values") {
  Tape tape;
  Tensor a = Tensor::from_data({1, 6}, {0.0, 3.0, 0.0, 0.0, 0.0, 0.0});
  Tensor b = Tensor::from_data({1, 6}, {1.0, 1.0, 0.0, 0.0, 0.0, 0.0});
  CHECK(mse_loss(tape, a, a).item() == 0.0);
  Tensor ones = Tensor::full({1, 6}, 1.0);
  Tensor zeros = Tensor::zeros({1, 6});
  CHECK(mse_loss(tape, ones, zeros).item() == doctest::Approx(1.0));
  CHECK(mse_loss(tape, a, b).item() == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK_THROWS_AS(mse_loss(tape, a, Tensor::zeros({2, 6})), std::invalid_argument);
}

TEST_CASE("cross entropy values and oracle") {
  Tape tape;
  Tensor even = Tensor::from_data({1, 2}, {0.3, 0.3});
  CHECK(cross_entropy_2class(tape, even, {1}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor margin = Tensor::from_data({1, 2}, {-10.0, 10.0});
  CHECK(cross_entropy_2class(tape, margin, {1}).item() < 1e-8);

  // random batch vs naive softmax-then-log
  Rng rng(13);
  const int b = 16;
  std::vector<double> lg(static_cast<std::size_t>(b) * 2);
  std::vector<int> labels(static_cast<std::size_t>(b));
  for (auto& v : lg) v = rng.uniform(-4.0, 4.0);
  for (auto& y : labels) y = static_cast<int>(rng.uniform_int(2));
  Tensor logits = Tensor::from_data({b, 2}, lg);
  double expect = 0.0;
  for (int i = 0; i < b; ++i) {
    const double ea = std::exp(lg[static_cast<std::size_t>(2 * i)]);
    const double ec = std::exp(lg[static_cast<std::size_t>(2 * i + 1)]);
    const double soft = (labels[static_cast<std::size_t>(i)] == 0 ? ea : ec) / (ea + ec);
    expect += -std::log(soft);
  }
  expect /= b;
  CHECK(cross_entropy_2class(tape, logits, labels).item() == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("masked bce values and mask contract") {
  Tape tape;
  // single unmasked element, logit 0, label 1 -> ln 2
  MaskedBehaviorTarget t0;
  t0.labels = {1, 0, 0, 0, 0};
  t0.mask = {true, false, false, false, false};
  Tensor logits = Tensor::from_data({1, 5}, {0.0, 99.0, -99.0, 5.0, 1.0});
  CHECK(masked_bce_logits(tape, logits, {t0}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // perturbing masked logits leaves the loss unchanged, exactly
  Tensor logits2 = Tensor::from_data({1, 5}, {0.0, -3.0, 12.0, 0.0, -7.5});
  CHECK(masked_bce_logits(tape, logits2, {t0}).item() ==
        masked_bce_logits(tape, logits, {t0}).item());

  // all unmasked, logits 0: ln 2 regardless of labels
  MaskedBehaviorTarget t1;
  t1.labels = {1, 0, 1, 1, 0};
  t1.mask = {true, true, true, true, true};
  Tensor zeros = Tensor::zeros({1, 5});
  CHECK(masked_bce_logits(tape, zeros, {t1}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  MaskedBehaviorTarget empty;
  CHECK_THROWS_AS(masked_bce_logits(tape, zeros, {empty}), std::invalid_argument);
}

TEST_CASE("masked bce gradient w.r.t. masked logits is exactly zero") {
  MaskedBehaviorTarget t0;
  t0.labels = {1, 1, 0, 0, 0};
  t0.mask = {true, false, true, false, true};
  Tape tape;
  Tensor logits = Tensor::from_data({1, 5}, {0.3, -0.4, 1.2, 2.2, -0.9}, true);
  Tensor loss = masked_bce_logits(tape, logits, {t0});
  tape.backward(loss);
  CHECK(logits.grad()[1] == 0.0);
  CHECK(logits.grad()[3] == 0.0);
  CHECK(logits.grad()[0] != 0.0);
}

TEST_CASE("losses pass grad_check") {
  Rng rng(37);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> pd(12), td(12);
    for (auto& v : pd) v = rng.uniform(-2.0, 2.0);
    for (auto& v : td) v = rng.uniform(-2.0, 2.0);
    Tensor pred = Tensor::from_data({2, 6}, pd);
    Tensor target = Tensor::from_data({2, 6}, td);
    auto fm = [target](Tape& t, const Tensor& v) { return mse_loss(t, v, target); };
    CHECK(grad_check(fm, pred, 1e-5) < 1e-4);

    std::vector<double> lg(8);
    for (auto& v : lg) v = rng.uniform(-3.0, 3.0);
    std::vector<int> labels = {1, 0, 0, 1};
    Tensor logits = Tensor::from_data({4, 2}, lg);
    auto fc = [labels](Tape& t, const Tensor& v) { return cross_entropy_2class(t, v, labels); };
    CHECK(grad_check(fc, logits, 1e-5) < 1e-4);

    std::vector<double> bl(10);
    for (auto& v : bl) v = rng.uniform(-3.0, 3.0);
    std::vector<MaskedBehaviorTarget> ts(2);
    for (auto& tt : ts)
      for (int j = 0; j < 5; ++j) {
        tt.labels[static_cast<std::size_t>(j)] = rng.uniform() < 0.5 ? 0.0 : 1.0;
        tt.mask[static_cast<std::size_t>(j)] = rng.uniform() < 0.7;
      }
    ts[0].mask[0] = true;  // keep at least one element unmasked
    Tensor blog = Tensor::from_data({2, 5}, bl);
    auto fb = [ts](Tape& t, const Tensor& v) { return masked_bce_logits(t, v, ts); };
    CHECK(grad_check(fb, blog, 1e-5) < 1e-4);
  }
}
