#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "powerlab/ar_model.hpp"

using namespace powerlab;

TEST_CASE("zipf row") {
  const ProbRow r = zipf_row(3, 1.0);
  CHECK(r.probs[0] == doctest::Approx(6.0 / 11.0).epsilon(1e-15));
  CHECK(r.probs[1] == doctest::Approx(3.0 / 11.0).epsilon(1e-15));
  CHECK(r.probs[2] == doctest::Approx(2.0 / 11.0).epsilon(1e-15));
  CHECK(r.log_probs[1] == doctest::Approx(std::log(3.0 / 11.0)));
  CHECK_THROWS(zipf_row(0, 1.0));
  CHECK_THROWS(zipf_row(3, std::nan("")));
}

TEST_CASE("suffix exponent") {
  CHECK(suffix_exponent(0, 4) == doctest::Approx(1.0));
  CHECK(suffix_exponent(1, 4) == doctest::Approx(0.5 + 0.05 * (2.0 / 3.0 - 1.0)));
  CHECK(suffix_exponent(2, 4) == doctest::Approx(1.05 + 0.05 * (4.0 / 3.0 - 1.0)));
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(suffix_exponent(i, 64) >= 0.45 - 1e-12);
    CHECK(suffix_exponent(i, 64) <= 1.65 + 1e-12);
  }
}

TEST_CASE("ProbRow constructors") {
  Eigen::ArrayXd bad(2);
  bad << 0.5, 0.6;
  CHECK_THROWS_AS(ProbRow::from_probs(bad), std::invalid_argument);
  Eigen::ArrayXd neg(2);
  neg << 1.5, -0.5;
  CHECK_THROWS_AS(ProbRow::from_probs(neg), std::invalid_argument);

  Eigen::ArrayXd counts(3);
  counts << 1.0, 2.0, 0.0;
  const ProbRow c = ProbRow::from_counts(counts);
  CHECK(c.probs[0] == 1.0 / 3.0);
  CHECK(c.probs[1] == 2.0 / 3.0);
  CHECK(std::isinf(c.log_probs[2]));

  const ProbRow u = ProbRow::uniform(4);
  CHECK(u.probs.sum() == doctest::Approx(1.0));
  CHECK(u.log_probs[3] == doctest::Approx(-std::log(4.0)));
}

TEST_CASE("synthetic two-step construction") {
  const ARModel m = build_synthetic_two_step(64, 256, 1.05);
  CHECK(m.horizon() == 2);
  CHECK(m.vocab_size(0) == 64);
  CHECK(m.vocab_size(1) == 256);
  CHECK(m.sequence_count() == 64 * 256);
  CHECK(m.node_count() == 1 + 64 + 64 * 256);

  double z1 = 0.0;
  for (int i = 1; i <= 64; ++i) z1 += std::pow(i, -1.05);
  CHECK(m.next_row(0, {}).probs[4] == doctest::Approx(std::pow(5.0, -1.05) / z1).epsilon(1e-13));

  const Token a = 9;
  const double s = suffix_exponent(9, 64);
  double z2 = 0.0;
  for (int k = 1; k <= 256; ++k) z2 += std::pow(k, -s);
  const std::vector<Token> prefix{a};
  CHECK(m.next_row(0, prefix).probs[30] == doctest::Approx(std::pow(31.0, -s) / z2).epsilon(1e-13));
}

TEST_CASE("prefix indexing round trip") {
  const ARModel m = uniform_model({2, 3, 4});
  for (std::size_t i = 0; i < m.sequence_count(); ++i) {
    CHECK(m.prefix_index(m.decode_sequence(i)) == i);
  }
  const std::vector<Token> y{1, 2, 3};
  CHECK(m.prefix_index(y) == (1 * 3 + 2) * 4 + 3);
  CHECK(m.decode(2, 5) == std::vector<Token>{1, 2});
}

TEST_CASE("sequence validation") {
  const ARModel m = uniform_model({2, 3}, 2);
  CHECK(m.is_valid(Sequence{1, {1, 2}}));
  CHECK_FALSE(m.is_valid(Sequence{2, {1, 2}}));
  CHECK_FALSE(m.is_valid(Sequence{0, {2, 0}}));
  CHECK_FALSE(m.is_valid(Sequence{0, {1}}));
  CHECK_THROWS_AS(m.check_sequence(Sequence{0, {0, 3}}), std::invalid_argument);
  const std::vector<Token> too_long{0, 0, 0};
  CHECK_THROWS_AS(m.check_prefix(0, too_long), std::invalid_argument);
}

TEST_CASE("seq_logprob is the product of conditionals") {
  SeededRng rng(5);
  const ARModel m = random_dirichlet_model({3, 2, 4}, 2, rng);
  for (std::size_t x = 0; x < 2; ++x) {
    const auto e = oracle::enumerate(m, x);
    double total = 0.0;
    for (std::size_t i = 0; i < e.seqs.size(); ++i) {
      const Sequence y{x, e.seqs[i]};
      CHECK(seq_logprob(m, y) == doctest::Approx(std::log(e.probs[i])).epsilon(1e-12));
      CHECK(seq_logprob_per_token(m, y) == doctest::Approx(std::log(e.probs[i]) / 3.0).epsilon(1e-12));
      total += e.probs[i];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("ancestral sampling frequencies") {
  SeededRng build(8);
  const ARModel m = random_dirichlet_model({2, 3}, 1, build);
  const auto e = oracle::enumerate(m, 0);
  SeededRng rng(9);
  const int n = 100000;
  std::vector<double> freq(e.probs.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    freq[m.prefix_index(sample_sequence(m, 0, rng).tokens)] += 1.0 / n;
  }
  for (std::size_t i = 0; i < freq.size(); ++i) {
    const double se = std::sqrt(e.probs[i] * (1 - e.probs[i]) / n);
    CHECK(std::abs(freq[i] - e.probs[i]) < 5 * se + 1e-12);
  }
}

TEST_CASE("random models are valid distributions") {
  SeededRng rng(2);
  const ARModel d = random_dirichlet_model({3, 3}, 2, rng);
  const ARModel l = random_logit_model({3, 3}, 2, 2.0, rng);
  for (const ARModel* m : {&d, &l}) {
    for (std::size_t x = 0; x < 2; ++x) {
      for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t n = 0; n < m->nodes_at_depth(t); ++n) {
          CHECK(m->row_at(x, t, n).probs.sum() == doctest::Approx(1.0).epsilon(1e-12));
          CHECK((m->row_at(x, t, n).probs > 0.0).all());
        }
      }
    }
  }
}

TEST_CASE("PromptDist") {
  CHECK_THROWS(PromptDist(Eigen::ArrayXd::Constant(2, 0.6)));
  const PromptDist mu = PromptDist::uniform(4);
  CHECK(mu.size() == 4);
  CHECK(mu.weights()[2] == 0.25);
}
