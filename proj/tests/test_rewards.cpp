#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "powerlab/reward_fn.hpp"
#include "powerlab/rewards.hpp"

using namespace powerlab;

namespace {

// R(alpha) by brute force.
double brute_expectation(const ARModel& m, double alpha, const RewardFn& r) {
  const auto e = oracle::enumerate(m, 0);
  const auto pw = oracle::power(e.probs, alpha);
  double acc = 0.0;
  for (std::size_t i = 0; i < pw.size(); ++i) acc += pw[i] * r(Sequence{0, e.seqs[i]});
  return acc;
}

}  // namespace

TEST_CASE("token serialization and SHA-256 prefix") {
  CHECK(serialize_tokens({}) == "");
  const std::vector<Token> y{1, 23, 4};
  CHECK(serialize_tokens(y) == "1,23,4");
  // Reference digests from Python's hashlib.
  CHECK(hash_u64({}) == 0xe3b0c44298fc1c14ULL);
  const std::vector<Token> a{1, 2, 3};
  CHECK(hash_u64(a) == 0x8a6ae15122001229ULL);
  const std::vector<Token> b{0, 17};
  CHECK(hash_u64(b) == 0xe65cd77232b369ddULL);
  CHECK(hash_fraction(Sequence{0, a}) == 0.5406933615759046);
  CHECK(hash_fraction(Sequence{0, b}) == 0.8998541501811822);
}

TEST_CASE("expectation and covariance against brute force") {
  SeededRng rng(1);
  const ARModel m = random_dirichlet_model({3, 3, 2}, 1, rng);
  const RewardFn self = self_reward(m);
  const RewardFn h = [](const Sequence& y) { return hash_fraction(y); };
  for (double alpha : {1.0, 2.0, 4.0}) {
    CHECK(reward_expectation(m, alpha, h, 0) == doctest::Approx(brute_expectation(m, alpha, h)).epsilon(1e-12));
    const double eh = brute_expectation(m, alpha, h);
    const double es = brute_expectation(m, alpha, self);
    const double ehs = brute_expectation(m, alpha, [&](const Sequence& y) { return h(y) * self(y); });
    CHECK(covariance_under_power(m, alpha, h, self, 0) == doctest::Approx(ehs - eh * es).epsilon(1e-10));
  }
}

TEST_CASE("self-reward covariance is a variance") {
  // Two equally likely first tokens, then a 0.5/0.5 or a 0.9/0.1 step.
  const ARModel m = ARModel::from_function({2, 2}, 1, [](std::size_t, std::span<const Token> prefix) {
    Eigen::ArrayXd p(2);
    if (prefix.empty() || prefix[0] == 0) p << 0.5, 0.5; else p << 0.9, 0.1;
    return ProbRow::from_probs(p);
  });
  const RewardFn self = self_reward(m);
  const double l[4] = {std::log(0.25), std::log(0.25), std::log(0.45), std::log(0.05)};
  const double pr[4] = {0.25, 0.25, 0.45, 0.05};
  double mean = 0.0, sq = 0.0;
  for (int i = 0; i < 4; ++i) {
    mean += pr[i] * l[i];
    sq += pr[i] * l[i] * l[i];
  }
  CHECK(covariance_under_power(m, 1.0, self, self, 0) == doctest::Approx(sq - mean * mean));
  const ARModel u = uniform_model({3, 3});
  CHECK(covariance_under_power(u, 2.0, self_reward(u), self_reward(u), 0) == doctest::Approx(0.0));
}

TEST_CASE("finite-difference derivative check") {
  SeededRng rng(2);
  const ARModel m = random_dirichlet_model({3, 2, 2}, 1, rng);
  const RewardFn h = [](const Sequence& y) { return hash_fraction(y); };
  for (double alpha : {1.0, 2.0}) {
    const auto d = reward_derivative_check(m, alpha, h, 0);
    CHECK(d.rel_err <= 1e-4);
    const double fd = (brute_expectation(m, alpha + 1e-4, h) - brute_expectation(m, alpha - 1e-4, h)) / 2e-4;
    CHECK(d.fd_estimate == doctest::Approx(fd).epsilon(1e-6));
  }
  CHECK_THROWS(reward_derivative_check(m, 1e-5, h, 0, 1e-4));
}

TEST_CASE("integrated covariance equals the gain") {
  SeededRng rng(3);
  const ARModel m = random_dirichlet_model({3, 3}, 1, rng);
  const RewardFn h = [](const Sequence& y) { return hash_fraction(y); };
  const double gain = brute_expectation(m, 4.0, h) - brute_expectation(m, 1.0, h);
  CHECK(integrated_covariance(m, 1.0, 4.0, h, 0, 1e-10) == doctest::Approx(gain).epsilon(1e-8));
}

TEST_CASE("reward statistics") {
  SeededRng rng(4);
  const ARModel m = random_dirichlet_model({2, 3}, 1, rng);
  const auto e = oracle::enumerate(m, 0);
  double ms = 0.0, mh = 0.0, ss = 0.0, sh = 0.0;
  for (std::size_t i = 0; i < e.probs.size(); ++i) {
    const double s = std::log(e.probs[i]);
    const double h = hash_fraction(Sequence{0, e.seqs[i]});
    ms += e.probs[i] * s;
    mh += e.probs[i] * h;
    ss += e.probs[i] * s * s;
    sh += e.probs[i] * h * h;
  }
  const auto st = exact_reward_stats(m, 0);
  CHECK(st.mean_self == doctest::Approx(ms));
  CHECK(st.mean_hash == doctest::Approx(mh));
  CHECK(st.std_self == doctest::Approx(std::sqrt(ss - ms * ms)));
  CHECK(st.std_hash == doctest::Approx(std::sqrt(sh - mh * mh)));
}

TEST_CASE("synthetic correlated reward") {
  SeededRng rng(5);
  const ARModel m = random_dirichlet_model({3, 3}, 1, rng);
  const auto stats = exact_reward_stats(m, 0);
  const Sequence y{0, {2, 1}};
  SyntheticRewardSpec pure{1.0, 0.5, 3, stats};
  CHECK(synthetic_reward(pure, y, m) == doctest::Approx((seq_logprob(m, y) - stats.mean_self) / stats.std_self));

  SyntheticRewardSpec mix{0.0, 0.0, 3, stats};
  CHECK(synthetic_reward(mix, y, m) == doctest::Approx((hash_fraction(y) - stats.mean_hash) / stats.std_hash));

  SyntheticRewardSpec noisy{0.0, 0.5, 3, stats};
  const double r1 = synthetic_reward(noisy, y, m);
  CHECK(r1 == synthetic_reward(noisy, y, m));
  SeededRng eps(derive_seed(3, hash_u64(y.tokens)));
  CHECK(r1 == doctest::Approx((hash_fraction(y) - stats.mean_hash) / stats.std_hash + 0.5 * eps.normal()));

  CHECK_THROWS(SyntheticRewardSpec{1.5, 0.5, 0, stats}.validate());
  CHECK_THROWS(SyntheticRewardSpec{0.5, -1.0, 0, stats}.validate());
  CHECK_THROWS(synthetic_reward(SyntheticRewardSpec{0.5, 0.5, 0, std::nullopt}, y, m));
}

TEST_CASE("covariance sweep table") {
  SeededRng rng(6);
  const ARModel m = random_dirichlet_model({3, 3}, 1, rng);
  const auto t = covariance_gain_sweep(m, 4.0, {-1.0, 0.0, 1.0}, SyntheticRewardSpec{0.0, 0.5, 1, std::nullopt}, 0);
  CHECK(t.header() == "lambda,cov_at_1,integrated_cov,gain,alpha");
  REQUIRE(t.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(t.number(i, "integrated_cov") == doctest::Approx(t.number(i, "gain")).epsilon(1e-8));
  }
  // lambda = 1 is the z-scored self-reward, whose R increases with alpha.
  CHECK(t.number(2, "gain") > 0.0);
  CHECK(t.number(0, "gain") == doctest::Approx(-t.number(2, "gain")));
}
