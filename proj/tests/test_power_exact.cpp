#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "powerlab/errors.hpp"
#include "powerlab/power_exact.hpp"

using namespace powerlab;

namespace {

// First token a (0.6) has a uniform 4-way suffix, b (0.4) a deterministic one.
ARModel reversal_model() {
  return ARModel::from_function({2, 4}, 1, [](std::size_t, std::span<const Token> prefix) {
    Eigen::ArrayXd p(prefix.empty() ? 2 : 4);
    if (prefix.empty()) {
      p << 0.6, 0.4;
    } else if (prefix[0] == 0) {
      p << 0.25, 0.25, 0.25, 0.25;
    } else {
      p << 1.0, 0.0, 0.0, 0.0;
    }
    return ProbRow::from_probs(p);
  });
}

}  // namespace

TEST_CASE("log normalizer of a uniform model") {
  const ARModel m = uniform_model({3, 3, 3, 3});
  for (double alpha : {0.5, 1.0, 2.0, 4.0}) {
    const PowerCache c = build_power_cache(m, alpha);
    CHECK(c.log_z(0) == doctest::Approx(4.0 * (1.0 - alpha) * std::log(3.0)).epsilon(1e-13));
  }
}

TEST_CASE("log normalizer matches brute force") {
  SeededRng rng(4);
  const ARModel m = random_dirichlet_model({3, 2, 3}, 2, rng);
  for (double alpha : {0.5, 1.5, 4.0}) {
    const PowerCache c = build_power_cache(m, alpha);
    for (std::size_t x = 0; x < 2; ++x) {
      const auto e = oracle::enumerate(m, x);
      CHECK(c.log_z(x) == doctest::Approx(std::log(oracle::sum_pow(e.probs, alpha))).epsilon(1e-12));
      // Interior node: completions of prefix (1).
      const auto sub = oracle::enumerate(m, x, {1});
      CHECK(c.log_suffix_mass(x, 1, 1) ==
            doctest::Approx(std::log(oracle::sum_pow(sub.probs, alpha))).epsilon(1e-12));
    }
    CHECK(c.log_suffix_mass(0, 3, 7) == 0.0);
  }
}

TEST_CASE("alpha = 1 leaves conditionals untouched") {
  SeededRng rng(6);
  const ARModel m = random_dirichlet_model({3, 3}, 1, rng);
  const PowerCache c = build_power_cache(m, 1.0);
  const std::vector<Token> prefix{2};
  CHECK((power_next_token(c, m, 0, prefix).probs == m.next_row(0, prefix).probs).all());
  CHECK((temp_next_token(m.next_row(0, {}), 1.0).probs == m.next_row(0, {}).probs).all());
}

TEST_CASE("temperature conditional") {
  Eigen::ArrayXd p(3);
  p << 0.5, 0.3, 0.2;
  const ProbRow t = temp_next_token(ProbRow::from_probs(p), 2.0);
  CHECK(t.probs[0] == doctest::Approx(0.25 / 0.38));
  CHECK(t.probs[1] == doctest::Approx(0.09 / 0.38));
  CHECK(t.probs[2] == doctest::Approx(0.04 / 0.38));
}

TEST_CASE("power conditional equals the brute-force marginal") {
  SeededRng rng(10);
  const ARModel m = random_dirichlet_model({3, 4, 2}, 1, rng);
  const double alpha = 3.0;
  const PowerCache c = build_power_cache(m, alpha);
  const auto e = oracle::enumerate(m, 0);
  const auto pw = oracle::power(e.probs, alpha);

  std::vector<double> first(3, 0.0);
  for (std::size_t i = 0; i < e.seqs.size(); ++i) first[e.seqs[i][0]] += pw[i];
  const ProbRow root = power_next_token(c, m, 0, {});
  for (int s = 0; s < 3; ++s) CHECK(root.probs[s] == doctest::Approx(first[s]).epsilon(1e-12));

  // Conditional on the prefix (2, 1).
  std::vector<double> cond(2, 0.0);
  double mass = 0.0;
  for (std::size_t i = 0; i < e.seqs.size(); ++i) {
    if (e.seqs[i][0] == 2 && e.seqs[i][1] == 1) {
      cond[e.seqs[i][2]] += pw[i];
      mass += pw[i];
    }
  }
  const std::vector<Token> prefix{2, 1};
  const ProbRow last = power_next_token(c, m, 0, prefix);
  CHECK(last.probs[0] == doctest::Approx(cond[0] / mass).epsilon(1e-12));
  CHECK(last.probs[1] == doctest::Approx(cond[1] / mass).epsilon(1e-12));
  // At the final step power and temperature coincide.
  CHECK((last.probs - temp_next_token(m.next_row(0, prefix), alpha).probs).abs().maxCoeff() <= 1e-15);
}

TEST_CASE("Renyi entropy") {
  Eigen::ArrayXd half(2);
  half << 0.5, 0.5;
  CHECK(renyi_entropy(half, 2.0) == doctest::Approx(std::log(2.0)));
  const Eigen::ArrayXd u = Eigen::ArrayXd::Constant(5, 0.2);
  CHECK(renyi_entropy(u, 3.0) == doctest::Approx(std::log(5.0)));
  Eigen::ArrayXd p(2);
  p << 0.8, 0.2;
  CHECK(renyi_entropy(p, 2.0) == doctest::Approx(-std::log(0.68)));
  CHECK_THROWS(renyi_entropy(p, 1.0));
}

TEST_CASE("hand-built rank reversal") {
  const ARModel m = reversal_model();
  const PowerCache c = build_power_cache(m, 2.0);
  const auto pairs = rank_reversal_scan(m, c, 0);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].temp_log_odds == doctest::Approx(2.0 * std::log(1.5)));
  // (4 * 0.15^2) / 0.4^2
  CHECK(pairs[0].pow_log_odds == doctest::Approx(std::log(0.5625)));
  CHECK(pairs[0].reversed);
  // H_2 of the uniform suffix is log 4, of the point mass 0.
  CHECK(pairs[0].correction == doctest::Approx(-std::log(4.0)));

  const auto oc = odds_correction(m, c, 0, {}, 0, 1);
  CHECK(oc.closed_form == doctest::Approx(-std::log(4.0)));
  CHECK(oc.renyi_predicted == doctest::Approx(-std::log(4.0)));
}

TEST_CASE("odds correction matches brute-force suffix entropies") {
  SeededRng rng(12);
  const ARModel m = random_dirichlet_model({4, 3, 3}, 1, rng);
  const double alpha = 2.5;
  const PowerCache c = build_power_cache(m, alpha);
  const auto qa = oracle::enumerate(m, 0, {1});
  const auto qb = oracle::enumerate(m, 0, {3});
  const double ha = std::log(oracle::sum_pow(qa.probs, alpha)) / (1 - alpha);
  const double hb = std::log(oracle::sum_pow(qb.probs, alpha)) / (1 - alpha);
  const auto oc = odds_correction(m, c, 0, {}, 1, 3);
  CHECK(oc.renyi_predicted == doctest::Approx((1 - alpha) * (ha - hb)).epsilon(1e-12));
  CHECK(std::abs(oc.closed_form - oc.renyi_predicted) <= 1e-12);
}

TEST_CASE("exact power distribution") {
  SeededRng rng(14);
  const ARModel m = random_dirichlet_model({2, 3, 2}, 2, rng);
  const SequenceDist d = exact_power_dist(m, 4.0);
  for (std::size_t x = 0; x < 2; ++x) {
    const auto pw = oracle::power(oracle::enumerate(m, x).probs, 4.0);
    const Eigen::ArrayXd p = d.probs(x);
    for (std::size_t i = 0; i < pw.size(); ++i) CHECK(p[i] == doctest::Approx(pw[i]).epsilon(1e-12));
  }
  const SequenceDist b = base_sequence_dist(m);
  CHECK(b.probs(1).sum() == doctest::Approx(1.0));
}

TEST_CASE("argmax set") {
  SeededRng rng(20);
  const ARModel m = random_logit_model({3, 3, 3}, 1, 1.0, rng);
  const auto e = oracle::enumerate(m, 0);
  const auto best = std::max_element(e.probs.begin(), e.probs.end()) - e.probs.begin();
  const auto set = power_argmax_set(m, 0);
  REQUIRE(set.size() == 1);
  CHECK(set[0].tokens == e.seqs[best]);
  const double expected = std::pow(e.probs[best], 8.0) / oracle::sum_pow(e.probs, 8.0);
  CHECK(power_mass_on_argmax(m, 8.0, 0) == doctest::Approx(expected).epsilon(1e-12));

  // Every sequence of a uniform model is a maximizer.
  const ARModel u = uniform_model({2, 3});
  CHECK(power_argmax_set(u, 0).size() == 6);
  CHECK(power_mass_on_argmax(u, 5.0, 0) == doctest::Approx(1.0));

  // (1, 0) has probability 0.4, every other sequence at most 0.15.
  const ARModel r = reversal_model();
  const auto rs = power_argmax_set(r, 0);
  REQUIRE(rs.size() == 1);
  CHECK(rs[0].tokens == std::vector<Token>{1, 0});
}

TEST_CASE("resource caps") {
  const ARModel m = uniform_model({4, 4, 4});
  CHECK_THROWS_AS(build_power_cache(m, 2.0, 10), ResourceLimitError);
  CHECK_THROWS_AS(enumerate_logprobs(m, 0, 10), ResourceLimitError);
  CHECK_THROWS_AS(exact_power_dist(m, 2.0, 63), ResourceLimitError);
  CHECK_NOTHROW(exact_power_dist(m, 2.0, 64));
}

TEST_CASE("identical suffixes give zero corrections") {
  const ARModel m = ARModel::from_function({2, 5}, 1, [](std::size_t, std::span<const Token> prefix) {
    return prefix.empty() ? zipf_row(2, 1.0) : zipf_row(5, 1.3);
  });
  for (double alpha : {1.5, 4.0}) {
    const PowerCache c = build_power_cache(m, alpha);
    const auto oc = odds_correction(m, c, 0, {}, 0, 1);
    CHECK(std::abs(oc.closed_form) <= 1e-14);
    CHECK(std::abs(oc.renyi_predicted) <= 1e-14);
    for (const auto& p : rank_reversal_scan(m, c, 0)) CHECK_FALSE(p.reversed);
  }
}
