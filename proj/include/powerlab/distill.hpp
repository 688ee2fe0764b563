#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "powerlab/ar_model.hpp"
#include "powerlab/power_exact.hpp"
#include "powerlab/reward_fn.hpp"
#include "powerlab/samplers.hpp"

namespace powerlab {

struct KLResult {
  double value;
  /// Set when p has mass where q has none; value is then +inf.
  bool support_violation = false;
};

KLResult kl_divergence(const Eigen::Ref<const Eigen::ArrayXd>& log_p,
                       const Eigen::Ref<const Eigen::ArrayXd>& log_q);
KLResult kl_divergence(const SequenceDist& p, const SequenceDist& q, std::size_t prompt);

struct ObjectiveResult {
  double value;
  /// q leaves the support of pi; value is then -inf.
  bool support_violation = false;
};

/// J_beta(q) = E_mu [ E_q[r] - beta KL(q || pi) ].
ObjectiveResult kl_rl_objective(const SequenceDist& q, const ARModel& model,
                                const RewardFn& reward, double beta, const PromptDist& mu);

struct TiltedPolicy {
  SequenceDist dist;
  /// log Z_r(x) = log sum_y pi(y|x) exp(r(x,y) / beta), per prompt.
  std::vector<double> log_z;
};

/// pi*_beta proportional to pi exp(r / beta), computed in log-space.
TiltedPolicy tilted_policy(const ARModel& model, const RewardFn& reward, double beta);

/// E_q[r_self] - beta KL(q||pi) + beta KL(q||pi_alpha) - beta log Z_r with
/// alpha = 1 + 1/beta; zero up to rounding for any in-support q.
double rl_kl_decomposition_check(const SequenceDist& q, const ARModel& model, double beta,
                                 std::size_t prompt);

/// Random policy of the model's shape with Dirichlet(1) rows at every prefix.
SequenceDist random_policy(const ARModel& shape, SeededRng& rng);

// ---------------------------------------------------------- distillation

enum class TeacherMode { Exact, MH };

std::string_view to_string(TeacherMode mode);
TeacherMode parse_teacher_mode(std::string_view name);

struct TeacherConfig {
  TeacherMode mode = TeacherMode::Exact;
  /// Used in MH mode; its alpha is overridden by the teacher alpha.
  MHConfig mh{};
};

/// Draws completions approximately from pi_alpha. Exact mode inverts the CDF
/// of the enumerated power distribution; MH mode runs mh_power_sample.
class TeacherSampler {
 public:
  TeacherSampler(const ARModel& model, double alpha, TeacherConfig config);
  Sequence sample(std::size_t prompt, SeededRng& rng) const;
  double alpha() const { return alpha_; }
  const TeacherConfig& config() const { return config_; }

 private:
  const ARModel* model_;
  double alpha_;
  TeacherConfig config_;
  std::vector<std::vector<double>> cdf_;  // exact mode, per prompt
};

Sequence teacher_sample(const ARModel& model, double alpha, const TeacherConfig& config,
                        std::size_t prompt, SeededRng& rng);

struct DistillDataset {
  std::vector<Sequence> records;
  TeacherMode mode = TeacherMode::Exact;
  double teacher_alpha = 1.0;
  std::uint64_t seed = 0;
};

/// n records with prompts drawn from mu. Record i uses derive_seed(seed, i), so
/// the result does not depend on `threads`.
DistillDataset collect_distill_dataset(const ARModel& model, double alpha, const PromptDist& mu,
                                       std::size_t n, const TeacherConfig& config,
                                       std::uint64_t seed, unsigned threads = 1);

/// One JSON object per line: {prompt_id, tokens, teacher_alpha, mode, seed}.
void save_dataset(const DistillDataset& dataset, const std::filesystem::path& path);
/// Validates every record against the model's shape.
DistillDataset load_dataset(const std::filesystem::path& path, const ARModel& shape);

struct TabularStudent {
  /// counts[prompt][depth] holds nodes_at_depth * vocab entries, row-major by node.
  std::vector<std::vector<Eigen::ArrayXd>> counts;
  double epsilon = 0.0;
  /// Visited prefixes: (count + eps) / (total + eps V). Unvisited prefixes copy
  /// the base row when eps = 0 and are uniform when eps > 0.
  ARModel model;
};

/// Closed-form maximum-likelihood tabular student.
TabularStudent fit_tabular_mle(const DistillDataset& dataset, const ARModel& base,
                               double epsilon = 0.0);

/// P_{x~mu}[ dist(y*(x) | x) <= 1 - delta ].
double sharpening_prob(const SequenceDist& dist, const ARModel& model, const PromptDist& mu,
                       double delta, double tol = kDefaultArgmaxTol);

/// sum (sqrt p - sqrt q)^2, in [0, 2].
double hellinger_sq(const Eigen::Ref<const Eigen::ArrayXd>& p,
                    const Eigen::Ref<const Eigen::ArrayXd>& q);

/// mu-weighted total variation between two sequence distributions.
double mean_total_variation(const SequenceDist& p, const SequenceDist& q, const PromptDist& mu);

/// Samples N completions from `model`, returns the first one with the highest
/// per-token log-likelihood under `scorer`.
Sequence best_of_n_self_reward(const ARModel& model, const ARModel& scorer, std::size_t prompt,
                               std::size_t n, SeededRng& rng);

}  // namespace powerlab
