#include "smore/divergence.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include <doctest.h>

using namespace smore::divergence;

namespace {

// Range of y values per divergence for which the closed-form conjugate is the
// supremum over x > 0 and the maximizer stays well inside [0, 12].
struct YRange {
  Kind kind;
  double lo, hi;
};

const std::vector<YRange> kConjugateRanges = {
    {Kind::kl_reverse, -1.0, 2.0},
    {Kind::chi2, -1.5, 3.0},
    {Kind::squared_hellinger, -2.0, 0.7},
    {Kind::jensen_shannon, -1.5, 0.55},
    {Kind::total_variation, -0.49, 0.49},
};

// Supremum of x*y - f(x) over a dense grid, the independent oracle for the
// closed-form conjugates. The kink point x = 1 is added explicitly so the
// piecewise-linear generator is handled exactly.
double grid_biconjugate(const FDivergence& div, double y) {
  const int n = 60000;
  const double lo = 1e-9, hi = 12.0;
  double best = -std::numeric_limits<double>::infinity();
  for (int i = 0; i <= n; ++i) {
    double x = lo + (hi - lo) * i / n;
    best = std::max(best, x * y - div.f(x));
  }
  best = std::max(best, 1.0 * y - div.f(1.0));
  best = std::max(best, 0.0 - div.f(0.0));
  return best;
}

}  // namespace

TEST_CASE("generator is zero at one for every catalogue entry") {
  for (Kind k : all_kinds()) {
    const FDivergence& d = catalogue(k);
    CHECK(generator_value(d, 1.0) == 0.0);
  }
}

TEST_CASE("catalogue closed forms at pinned points") {
  const FDivergence& chi = catalogue(Kind::chi2);
  CHECK(generator_value(chi, 3.0) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(conjugate_value(chi, 2.0) == doctest::Approx(3.0).epsilon(1e-12));

  const FDivergence& kl = catalogue(Kind::kl_reverse);
  double e = std::exp(1.0);
  CHECK(generator_value(kl, e) == doctest::Approx(e).epsilon(1e-12));
  CHECK(conjugate_value(kl, 1.0) == doctest::Approx(1.0).epsilon(1e-12));

  const FDivergence& sh = catalogue(Kind::squared_hellinger);
  CHECK(generator_value(sh, 4.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(conjugate_value(sh, 0.5) == doctest::Approx(1.0).epsilon(1e-12));

  const FDivergence& tv = catalogue(Kind::total_variation);
  CHECK(generator_value(tv, 3.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(conjugate_value(tv, 0.3) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK_THROWS_AS(conjugate_value(tv, 0.7), std::domain_error);

  const FDivergence& js = catalogue(Kind::jensen_shannon);
  CHECK(generator_value(js, 1.0) == 0.0);
  CHECK(conjugate_value(js, 0.0) == 0.0);
  CHECK_THROWS_AS(conjugate_value(js, std::log(2.0) + 1e-9), std::domain_error);
}

TEST_CASE("generator extends continuously to x = 0") {
  CHECK(generator_value(catalogue(Kind::kl_reverse), 0.0) == 0.0);
  CHECK(generator_value(catalogue(Kind::chi2), 0.0) == 1.0);
  CHECK(generator_value(catalogue(Kind::total_variation), 0.0) == 0.5);
  CHECK(generator_value(catalogue(Kind::squared_hellinger), 0.0) == 1.0);
  CHECK(generator_value(catalogue(Kind::jensen_shannon), 0.0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(generator_value(catalogue(Kind::chi2), -0.1),
                  std::domain_error);
}

TEST_CASE("conjugacy identity f*(f'(x)) = x f'(x) - f(x) on a dense grid") {
  for (Kind k : all_kinds()) {
    const FDivergence& d = catalogue(k);
    for (int i = 0; i < 100; ++i) {
      double x = 0.05 + (10.0 - 0.05) * i / 99.0;
      double slope = derivative_value(d, x);
      double lhs = conjugate_value(d, slope);
      double rhs = x * slope - generator_value(d, x);
      CHECK(std::abs(lhs - rhs) < 1e-9);
    }
  }
}

TEST_CASE("total variation subgradient at the kink keeps conjugacy exact") {
  const FDivergence& tv = catalogue(Kind::total_variation);
  CHECK(derivative_value(tv, 1.0) == 0.0);
  CHECK(conjugate_value(tv, derivative_value(tv, 1.0)) == 0.0);
}

TEST_CASE("derivative inverse pinned values and inverse relation") {
  const FDivergence& chi = catalogue(Kind::chi2);
  CHECK(derivative_inverse(chi, 0.0) == doctest::Approx(1.0));
  CHECK(derivative_inverse(chi, 2.0) == doctest::Approx(2.0));

  const FDivergence& kl = catalogue(Kind::kl_reverse);
  CHECK(derivative_inverse(kl, 1.0) == doctest::Approx(1.0));

  for (Kind k : {Kind::kl_reverse, Kind::chi2, Kind::squared_hellinger,
                 Kind::jensen_shannon}) {
    const FDivergence& d = catalogue(k);
    for (double x : {0.2, 0.7, 1.0, 1.9, 4.2}) {
      double y = derivative_value(d, x);
      CHECK(derivative_inverse(d, y) == doctest::Approx(x).epsilon(1e-9));
    }
  }

  CHECK_THROWS_AS(derivative_inverse(catalogue(Kind::total_variation), 0.1),
                  std::domain_error);
  CHECK_THROWS_AS(derivative_inverse(catalogue(Kind::squared_hellinger), 1.5),
                  std::domain_error);
}

TEST_CASE("conjugate derivative equals derivative inverse") {
  // (f*)' = (f')^{-1}, checked by central differences on f*.
  for (Kind k : {Kind::kl_reverse, Kind::chi2, Kind::squared_hellinger,
                 Kind::jensen_shannon}) {
    const FDivergence& d = catalogue(k);
    for (double y : {-1.0, -0.3, 0.0, 0.2, 0.5}) {
      double h = 1e-6;
      double fd = (conjugate_value(d, y + h) - conjugate_value(d, y - h)) /
                  (2.0 * h);
      CHECK(fd == doctest::Approx(derivative_inverse(d, y)).epsilon(1e-6));
    }
  }
}

TEST_CASE("closed-form conjugate matches grid supremum") {
  std::mt19937_64 rng(20240817);
  for (const YRange& r : kConjugateRanges) {
    const FDivergence& d = catalogue(r.kind);
    std::uniform_real_distribution<double> draw(r.lo, r.hi);
    for (int i = 0; i < 20; ++i) {
      double y = draw(rng);
      double closed = conjugate_value(d, y);
      double grid = grid_biconjugate(d, y);
      CHECK(std::abs(closed - grid) < 1e-4);
    }
  }
}

TEST_CASE("divergence of a distribution with itself is zero") {
  std::vector<double> p = {0.1, 0.2, 0.3, 0.4};
  for (Kind k : all_kinds()) {
    CHECK(divergence(catalogue(k), p, p) == doctest::Approx(0.0));
  }
}

TEST_CASE("divergence pinned values on a two-point pair") {
  std::vector<double> p = {0.5, 0.5};
  std::vector<double> q = {0.25, 0.75};

  // chi2: 0.25*(2-1)^2 + 0.75*(2/3-1)^2 = 1/3.
  CHECK(divergence(catalogue(Kind::chi2), p, q) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // KL(P||Q) through E_Q[f(P/Q)] with f = x log x.
  double expected = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  CHECK(divergence(catalogue(Kind::kl_reverse), p, q) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("divergence support conventions") {
  const FDivergence& chi = catalogue(Kind::chi2);
  std::vector<double> p = {0.5, 0.5, 0.0};
  std::vector<double> q = {0.5, 0.5, 0.0};
  CHECK(divergence(chi, p, q) == 0.0);

  std::vector<double> p_bad = {0.5, 0.0, 0.5};
  CHECK_THROWS_WITH_AS(
      [&] { return divergence(chi, p_bad, q); }(),
      doctest::Contains("support violation at index 2"), std::domain_error);

  std::vector<double> p_neg = {0.5, -0.1, 0.6};
  CHECK_THROWS_AS(divergence(chi, p_neg, q), std::domain_error);
  CHECK_THROWS_AS(divergence(chi, p, std::vector<double>{0.5, 0.5}),
                  std::invalid_argument);
}

TEST_CASE("catalogue lookup by name") {
  CHECK(catalogue("chi2").kind == Kind::chi2);
  CHECK(catalogue("jensen_shannon").kind == Kind::jensen_shannon);
  CHECK_THROWS_AS(catalogue("notadivergence"), std::invalid_argument);
}
