#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "powerlab/numeric.hpp"

using namespace powerlab;

TEST_CASE("logsumexp") {
  Eigen::ArrayXd x(3);
  x << std::log(1.0), std::log(2.0), std::log(5.0);
  CHECK(logsumexp(x) == doctest::Approx(std::log(8.0)).epsilon(1e-15));

  const double inf = std::numeric_limits<double>::infinity();
  Eigen::ArrayXd all_neg(2);
  all_neg << -inf, -inf;
  CHECK(logsumexp(all_neg) == -inf);

  Eigen::ArrayXd big(2);
  big << 1000.0, 1000.0;
  CHECK(logsumexp(big) == doctest::Approx(1000.0 + std::log(2.0)));
}

TEST_CASE("log_normalize") {
  Eigen::ArrayXd w(3);
  w << 0.0, std::log(3.0), -std::numeric_limits<double>::infinity();
  const Eigen::ArrayXd lp = log_normalize(w);
  CHECK(std::exp(lp[0]) == doctest::Approx(0.25));
  CHECK(std::exp(lp[1]) == doctest::Approx(0.75));
  CHECK(std::isinf(lp[2]));
  Eigen::ArrayXd none = Eigen::ArrayXd::Constant(2, -std::numeric_limits<double>::infinity());
  CHECK_THROWS(log_normalize(none));
}

TEST_CASE("total variation") {
  Eigen::ArrayXd p(3), q(3);
  p << 0.5, 0.5, 0.0;
  q << 0.0, 0.5, 0.5;
  CHECK(total_variation(p, q) == doctest::Approx(0.5));
  CHECK(total_variation(p, p) == 0.0);
}

TEST_CASE("spearman and count_increases") {
  const std::vector<double> a{1, 2, 3, 4, 5};
  const std::vector<double> b{10, 20, 30, 40, 50};
  const std::vector<double> c{5, 4, 3, 2, 1};
  CHECK(spearman(a, b) == doctest::Approx(1.0));
  CHECK(spearman(a, c) == doctest::Approx(-1.0));
  // Ties take average ranks: ranks (1, 2.5, 2.5, 4) vs (1, 2, 3, 4).
  const std::vector<double> t{1, 2, 2, 3};
  const std::vector<double> u{1, 2, 3, 4};
  CHECK(spearman(t, u) == doctest::Approx(4.5 / std::sqrt(4.5 * 5.0)));

  const std::vector<double> seq{3, 2, 2, 4, 1, 1.5};
  CHECK(count_increases(seq) == 2);
  CHECK(count_increases(c) == 0);
}
