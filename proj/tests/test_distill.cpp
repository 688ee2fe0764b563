#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "powerlab/distill.hpp"
#include "powerlab/power_exact.hpp"
#include "powerlab/reward_fn.hpp"

using namespace powerlab;

namespace {

SequenceDist point_mass(const ARModel& m, std::size_t index, double mass) {
  Eigen::ArrayXd p = Eigen::ArrayXd::Constant(static_cast<Eigen::Index>(m.sequence_count()),
                                              (1.0 - mass) / static_cast<double>(m.sequence_count() - 1));
  p[static_cast<Eigen::Index>(index)] = mass;
  return SequenceDist(m.vocab_sizes(), {p.log()});
}

}  // namespace

TEST_CASE("KL divergence") {
  Eigen::ArrayXd p(2), q(2);
  p << 0.5, 0.5;
  q << 0.25, 0.75;
  const auto kl = kl_divergence(p.log(), q.log());
  CHECK(kl.value == doctest::Approx(0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0)));
  CHECK_FALSE(kl.support_violation);
  CHECK(kl_divergence(p.log(), p.log()).value == 0.0);

  Eigen::ArrayXd r(2);
  r << 1.0, 0.0;
  const auto bad = kl_divergence(p.log(), r.log());
  CHECK(bad.support_violation);
  CHECK(std::isinf(bad.value));
  CHECK(kl_divergence(r.log(), p.log()).value == doctest::Approx(std::log(2.0)));
}

TEST_CASE("tilting by the self-reward gives the power distribution") {
  SeededRng rng(1);
  const ARModel m = random_dirichlet_model({3, 2, 2}, 2, rng);
  for (double beta : {1.0 / 3.0, 0.5, 1.0, 2.0}) {
    const TiltedPolicy t = tilted_policy(m, self_reward(m), beta);
    for (std::size_t x = 0; x < 2; ++x) {
      const auto pw = oracle::power(oracle::enumerate(m, x).probs, 1.0 + 1.0 / beta);
      const Eigen::ArrayXd lp = t.dist.log_probs(x);
      for (std::size_t i = 0; i < pw.size(); ++i) CHECK(lp[i] == doctest::Approx(std::log(pw[i])).epsilon(1e-12));
    }
  }
}

TEST_CASE("decomposition residual and optimality") {
  SeededRng rng(2);
  const ARModel m = random_dirichlet_model({2, 3, 2}, 1, rng);
  const double beta = 0.5;
  const PromptDist mu = PromptDist::uniform(1);
  const RewardFn r = self_reward(m);
  const TiltedPolicy best = tilted_policy(m, r, beta);
  const double j_star = kl_rl_objective(best.dist, m, r, beta, mu).value;
  // J at the optimum is beta log Z_r.
  CHECK(j_star == doctest::Approx(beta * best.log_z[0]).epsilon(1e-12));
  for (int k = 0; k < 20; ++k) {
    const SequenceDist q = random_policy(m, rng);
    CHECK(std::abs(rl_kl_decomposition_check(q, m, beta, 0)) <= 1e-9);
    CHECK(kl_rl_objective(q, m, r, beta, mu).value < j_star);
  }
}

TEST_CASE("objective flags support violations") {
  const ARModel m = ARModel::from_function({2}, 1, [](std::size_t, std::span<const Token>) {
    Eigen::ArrayXd p(2);
    p << 1.0, 0.0;
    return ProbRow::from_probs(p);
  });
  Eigen::ArrayXd q(2);
  q << 0.5, 0.5;
  const SequenceDist off(m.vocab_sizes(), {q.log()});
  const auto res = kl_rl_objective(off, m, [](const Sequence&) { return 0.0; }, 1.0, PromptDist::uniform(1));
  CHECK(res.support_violation);
  CHECK(res.value == -std::numeric_limits<double>::infinity());
}

TEST_CASE("tabular MLE from hand-made records") {
  const ARModel base = uniform_model({2, 2});
  DistillDataset ds;
  ds.teacher_alpha = 2.0;
  ds.records = {{0, {0, 0}}, {0, {0, 1}}, {0, {0, 1}}, {0, {1, 0}}};
  const auto s = fit_tabular_mle(ds, base);
  CHECK(s.model.next_row(0, {}).probs[0] == 0.75);
  const std::vector<Token> p0{0}, p1{1};
  CHECK(s.model.next_row(0, p0).probs[1] == 2.0 / 3.0);
  CHECK(s.model.next_row(0, p1).probs[0] == 1.0);
  CHECK(s.model.next_row(0, p1).probs[1] == 0.0);

  const auto smooth = fit_tabular_mle(ds, base, 1.0);
  CHECK(smooth.model.next_row(0, {}).probs[0] == doctest::Approx(4.0 / 6.0));
  CHECK(smooth.model.next_row(0, p1).probs[1] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("unvisited prefixes") {
  SeededRng rng(3);
  const ARModel base = random_dirichlet_model({2, 3}, 1, rng);
  DistillDataset ds;
  ds.records = {{0, {0, 2}}};
  const std::vector<Token> p1{1};
  CHECK((fit_tabular_mle(ds, base).model.next_row(0, p1).probs == base.next_row(0, p1).probs).all());
  CHECK(fit_tabular_mle(ds, base, 0.5).model.next_row(0, p1).probs[2] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("dataset collection is thread-count independent") {
  SeededRng rng(4);
  const ARModel m = random_dirichlet_model({3, 3}, 2, rng);
  const PromptDist mu = PromptDist::uniform(2);
  const auto a = collect_distill_dataset(m, 4.0, mu, 500, TeacherConfig{}, 77, 1);
  const auto b = collect_distill_dataset(m, 4.0, mu, 500, TeacherConfig{}, 77, 3);
  CHECK(a.records == b.records);
  TeacherConfig mh{TeacherMode::MH, MHConfig{4.0, 1, 5, 0.25}};
  const auto c = collect_distill_dataset(m, 4.0, mu, 50, mh, 77, 1);
  const auto d = collect_distill_dataset(m, 4.0, mu, 50, mh, 77, 2);
  CHECK(c.records == d.records);
}

TEST_CASE("exact teacher frequencies") {
  SeededRng rng(5);
  const ARModel m = random_dirichlet_model({2, 2}, 1, rng);
  const auto pw = oracle::power(oracle::enumerate(m, 0).probs, 3.0);
  const auto ds = collect_distill_dataset(m, 3.0, PromptDist::uniform(1), 40000, TeacherConfig{}, 1);
  std::vector<double> freq(4, 0.0);
  for (const auto& y : ds.records) freq[m.prefix_index(y.tokens)] += 1.0 / 40000;
  for (int i = 0; i < 4; ++i) CHECK(std::abs(freq[i] - pw[i]) < 5 * std::sqrt(pw[i] * (1 - pw[i]) / 40000) + 1e-12);
}

TEST_CASE("dataset file round trip and errors") {
  SeededRng rng(6);
  const ARModel m = random_dirichlet_model({3, 2}, 2, rng);
  const auto ds = collect_distill_dataset(m, 2.0, PromptDist::uniform(2), 30, TeacherConfig{}, 9);
  const auto dir = std::filesystem::temp_directory_path() / "powerlab_distill_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "ds.jsonl";
  save_dataset(ds, path);
  const auto back = load_dataset(path, m);
  CHECK(back.records == ds.records);
  CHECK(back.teacher_alpha == 2.0);
  CHECK(back.seed == ds.seed);

  std::ofstream(dir / "bad.jsonl") << R"({"prompt_id":0,"tokens":[0,1],"teacher_alpha":2,"mode":"exact","seed":9})" "\n"
                                   << R"({"prompt_id":0,"tokens":[5,1],"teacher_alpha":2,"mode":"exact","seed":9})" "\n";
  try {
    load_dataset(dir / "bad.jsonl", m);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("sharpening probability") {
  const ARModel m = ARModel::from_function({2, 2}, 1, [](std::size_t, std::span<const Token> prefix) {
    Eigen::ArrayXd p(2);
    if (prefix.empty()) p << 0.7, 0.3; else p << 0.6, 0.4;
    return ProbRow::from_probs(p);
  });
  const PromptDist mu = PromptDist::uniform(1);
  // y* = (0, 0).
  CHECK(sharpening_prob(point_mass(m, 0, 0.95), m, mu, 0.1) == 0.0);
  CHECK(sharpening_prob(point_mass(m, 0, 0.85), m, mu, 0.1) == 1.0);
  CHECK(sharpening_prob(point_mass(m, 3, 0.95), m, mu, 0.1) == 1.0);
}

TEST_CASE("Hellinger and TV") {
  Eigen::ArrayXd p(2), q(2);
  p << 1.0, 0.0;
  q << 0.5, 0.5;
  CHECK(hellinger_sq(p, q) == doctest::Approx(2.0 - std::sqrt(2.0)));
  CHECK(hellinger_sq(p, p) == 0.0);
  Eigen::ArrayXd r(2);
  r << 0.0, 1.0;
  CHECK(hellinger_sq(p, r) == doctest::Approx(2.0));

  const ARModel m = uniform_model({2});
  const SequenceDist a(m.vocab_sizes(), {p.log(), q.log()});
  const SequenceDist b(m.vocab_sizes(), {q.log(), q.log()});
  Eigen::ArrayXd w(2);
  w << 0.25, 0.75;
  CHECK(mean_total_variation(a, b, PromptDist(w)) == doctest::Approx(0.25 * 0.5));
}

TEST_CASE("best of N picks the highest scorer") {
  SeededRng build(7);
  const ARModel m = random_dirichlet_model({3, 3}, 1, build);
  SeededRng rng(8);
  const Sequence y = best_of_n_self_reward(m, m, 0, 200, rng);
  // The maximizer has probability >= 1/9, so 200 draws miss it with probability < 1e-10.
  const auto set = power_argmax_set(m, 0);
  CHECK(y == set.front());
}
