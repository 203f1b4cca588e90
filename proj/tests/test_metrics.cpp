// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "emobev/metrics.hpp"

using namespace emobev;

namespace {

// numeric chi2(1dof) survival function via trapezoid quadrature of the pdf,
// independent of the erfc-based implementation
double chi2_sf_quadrature(double x) {
  auto pdf = [](double t) {
    return std::exp(-t / 2.0) / std::sqrt(2.0 * 3.14159265358979323846 * t);
  };
  const double hi = std::max(x + 60.0, 80.0);
  const int steps = 400000;
  const double h = (hi - x) / steps;
  double acc = 0.0;
  for (int i = 0; i <= steps; ++i) {
    const double t = x + i * h;
    if (t <= 0.0) continue;
    const double w = (i == 0 || i == steps) ? 0.5 : 1.0;
    acc += w * pdf(t);
  }
  return acc * h;
}

}  // namespace

TEST_CASE("weighted accuracy examples") {
  CHECK(weighted_accuracy({10, 90, 0, 0}) == doctest::Approx(1.0));
  CHECK(weighted_accuracy({0, 90, 0, 10}) == doctest::Approx(0.5));
  // P=10, N=90, TP=5, TN=45
  CHECK(weighted_accuracy({5, 45, 45, 5}) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(weighted_accuracy({0, 5, 5, 0}), std::invalid_argument);
}

TEST_CASE("weighted accuracy equals plain accuracy when P == N") {
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    const long long p = 1 + static_cast<long long>(rng.uniform_int(200));
    ConfusionCounts c;
    c.tp = static_cast<long long>(rng.uniform_int(static_cast<std::uint64_t>(p) + 1));
    c.fn = p - c.tp;
    c.tn = static_cast<long long>(rng.uniform_int(static_cast<std::uint64_t>(p) + 1));
    c.fp = p - c.tn;
    CHECK(weighted_accuracy(c) == doctest::Approx(plain_accuracy(c)).epsilon(1e-12));
  }
}

TEST_CASE("uncertainty endpoints and paper value") {
  CHECK(uncertainty(0.5) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(uncertainty(1.0) == 0.0);
  CHECK(uncertainty(0.0) == 0.0);
  CHECK(uncertainty(0.6043) == doctest::Approx(0.9685).epsilon(1e-4));
  CHECK_THROWS_AS(uncertainty(-0.1), std::invalid_argument);
  CHECK_THROWS_AS(uncertainty(1.1), std::invalid_argument);
}

TEST_CASE("uncertainty is symmetric, concave and within [0,1] on a grid") {
  for (int i = 0; i <= 1000; ++i) {
    const double p = i / 1000.0;
    const double u = uncertainty(p);
    CHECK(u >= 0.0);
    CHECK(u <= 1.0 + 1e-12);
    CHECK(u == doctest::Approx(uncertainty(1.0 - p)).epsilon(1e-12));
  }
  for (int i = 1; i < 1000; ++i) {
    const double a = uncertainty((i - 1) / 1000.0);
    const double b = uncertainty(i / 1000.0);
    const double c = uncertainty((i + 1) / 1000.0);
    CHECK(b >= (a + c) / 2.0 - 1e-12);  // midpoint concavity
  }
}

TEST_CASE("pur values and antisymmetry") {
  CHECK(pur(0.7, 0.7) == 0.0);
  CHECK(pur(0.5, 1.0) == doctest::Approx(1.0));
  CHECK(pur(0.6043, 0.69) == doctest::Approx(0.0753).epsilon(2e-3));
  Rng rng(5);
  for (int rep = 0; rep < 30; ++rep) {
    const double a = rng.uniform(), b = rng.uniform();
    CHECK(pur(a, b) == doctest::Approx(-pur(b, a)).epsilon(1e-12));
  }
}

TEST_CASE("mcnemar exact branch") {
  CHECK(mcnemar(0, 0) == 1.0);
  CHECK(mcnemar(7, 7) == doctest::Approx(1.0));
  CHECK(mcnemar(0, 10) == doctest::Approx(2.0 * std::pow(0.5, 10)).epsilon(1e-12));
  // exact two-sided binomial oracle for b=3, c=12: 2 * sum_{i<=3} C(15,i)/2^15
  const double expect = 2.0 * (1.0 + 15.0 + 105.0 + 455.0) / 32768.0;
  CHECK(mcnemar(3, 12) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("mcnemar chi-square branch") {
  // chi2 = (|15-40|-1)^2/55 = 10.4727..., p ~ 0.0012
  const double p = mcnemar(15, 40);
  CHECK(p == doctest::Approx(0.00121).epsilon(0.02));
  const double chi2 = std::pow(std::abs(15.0 - 40.0) - 1.0, 2) / 55.0;
  CHECK(p == doctest::Approx(chi2_sf_quadrature(chi2)).epsilon(1e-6));
}

TEST_CASE("chi-square survival matches quadrature oracle") {
  for (double x : {0.5, 1.0, 2.5, 6.0, 10.4727}) {
    CHECK(chi2_sf_1dof(x) == doctest::Approx(chi2_sf_quadrature(x)).epsilon(1e-6));
  }
}

TEST_CASE("mcnemar branches agree near the switch point") {
  Rng rng(11);
  for (int rep = 0; rep < 40; ++rep) {
    const long long n = 25 + static_cast<long long>(rng.uniform_int(16));  // 25..40
    const long long b = static_cast<long long>(rng.uniform_int(static_cast<std::uint64_t>(n) + 1));
    const long long c = n - b;
    // exact two-sided binomial
    const long long k = b < c ? b : c;
    double tail = 0.0, coeff = 1.0;
    for (long long i = 0; i <= k; ++i) {
      tail += coeff;
      coeff = coeff * static_cast<double>(n - i) / static_cast<double>(i + 1);
    }
    double exact = 2.0 * tail * std::pow(0.5, static_cast<double>(n));
    if (exact > 1.0) exact = 1.0;
    CHECK(std::abs(mcnemar(b, c) - exact) < 0.01);
  }
}

TEST_CASE("aggregate_folds pools predictions and reproduces the printed average") {
  // single fold, all correct
  std::vector<PredictionRecord> perfect;
  for (int b = 0; b < 5; ++b)
    perfect.push_back({"s1", b, 1, 2.0, 0});
  auto t = aggregate_folds(perfect);
  for (int b = 0; b < 5; ++b) CHECK(t.accuracy[static_cast<std::size_t>(b)] == 100.0);
  CHECK(t.average == 100.0);

  // the published per-behavior accuracies: average must come out 60.43
  const std::array<double, 5> acc = {61.07, 63.21, 59.64, 59.29, 58.93};
  std::vector<PredictionRecord> rows;
  const int total = 10000;
  for (int b = 0; b < 5; ++b) {
    const int correct = static_cast<int>(std::lround(acc[static_cast<std::size_t>(b)] / 100.0 * total));
    for (int i = 0; i < total; ++i) {
      PredictionRecord r;
      r.session_id = "s" + std::to_string(i);
      r.behavior = b;
      r.label = 1;
      r.logit = i < correct ? 1.0 : -1.0;
      r.fold = i % 26;
      rows.push_back(r);
    }
  }
  auto table = aggregate_folds(rows);
  CHECK(table.average == doctest::Approx(60.43).epsilon(1e-4));

  // masked behavior absent everywhere: n/a, excluded from the average
  std::vector<PredictionRecord> partial;
  partial.push_back({"a", 0, 1, 1.0, 0});
  partial.push_back({"a", 1, 0, 1.0, 0});
  auto t2 = aggregate_folds(partial);
  CHECK(t2.present[0]);
  CHECK_FALSE(t2.present[2]);
  CHECK(t2.average == doctest::Approx(50.0));
  CHECK(accuracy_table_csv(t2).find("n/a") != std::string::npos);

  // duplicate prediction is an error
  std::vector<PredictionRecord> dup = {{"a", 0, 1, 1.0, 0}, {"a", 0, 1, 0.5, 1}};
  CHECK_THROWS_AS(aggregate_folds(dup), DataError);
}

TEST_CASE("prediction csv round-trip") {
  std::vector<PredictionRecord> rows = {{"sess_1", 0, 1, 0.731, 3}, {"sess_2", 4, 0, -2.5, 12}};
  const std::string csv = predictions_to_csv(rows);
  const auto back = predictions_from_csv(csv);
  REQUIRE(back.size() == 2);
  CHECK(back[0].session_id == "sess_1");
  CHECK(back[0].logit == doctest::Approx(0.731));
  CHECK(back[1].behavior == 4);
  CHECK(back[1].fold == 12);
  CHECK(back[1].predicted() == 0);
}
