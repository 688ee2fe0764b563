#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "powerlab/ar_model.hpp"

namespace powerlab {

inline constexpr std::size_t kDefaultNodeCap = 10'000'000;
inline constexpr std::size_t kDefaultSequenceCap = 1'000'000;
inline constexpr double kDefaultArgmaxTol = 1e-12;

/// Backward DP over the prefix tree.
///
/// log_suffix_mass(x, t, node) = log sum_{suffixes s} pi(s | x, prefix)^alpha,
/// i.e. the suffix power mass relative to the prefix. It is zero at depth T and
/// satisfies S_t(p) = logsumexp_s [alpha log pi(s|p) + S_{t+1}(p s)].
/// log_z(x) is S_0 at the root.
class PowerCache {
 public:
  double alpha() const { return alpha_; }
  double log_z(std::size_t prompt) const { return log_mass_.at(prompt).front()[0]; }
  double log_suffix_mass(std::size_t prompt, std::size_t depth, std::size_t node) const {
    return log_mass_.at(prompt).at(depth)[static_cast<Eigen::Index>(node)];
  }
  const Eigen::ArrayXd& depth_masses(std::size_t prompt, std::size_t depth) const {
    return log_mass_.at(prompt).at(depth);
  }

 private:
  friend PowerCache build_power_cache(const ARModel&, double, std::size_t);
  double alpha_ = 1.0;
  std::vector<std::vector<Eigen::ArrayXd>> log_mass_;
};

/// Throws ResourceLimitError when the tree has more than `node_cap` nodes.
PowerCache build_power_cache(const ARModel& model, double alpha,
                             std::size_t node_cap = kDefaultNodeCap);

/// Per-token temperature: row proportional to p^alpha. alpha == 1 returns the
/// row unchanged.
ProbRow temp_next_token(const ProbRow& row, double alpha);
ProbRow temp_next_token(const ARModel& model, double alpha, std::size_t prompt,
                        std::span<const Token> prefix);

/// Next-token conditional of the sequence-level power distribution:
/// row(s) proportional to pi(s|prefix)^alpha * S_{t+1}(prefix s).
ProbRow power_next_token(const PowerCache& cache, const ARModel& model, std::size_t prompt,
                         std::span<const Token> prefix);

/// H_alpha(p) = log(sum p^alpha) / (1 - alpha). alpha == 1 is rejected.
double renyi_entropy(const Eigen::Ref<const Eigen::ArrayXd>& probs, double alpha);
inline double renyi_entropy(const ProbRow& row, double alpha) {
  return renyi_entropy(row.probs, alpha);
}

/// Probabilities of every completion of `prefix`, in mixed-radix order.
Eigen::ArrayXd suffix_distribution(const ARModel& model, std::size_t prompt,
                                   std::span<const Token> prefix,
                                   std::size_t sequence_cap = kDefaultSequenceCap);

struct OddsCorrection {
  /// log of (power odds a:b) / (temperature odds a:b).
  double closed_form;
  /// (1 - alpha) * (H_alpha(q_a) - H_alpha(q_b)) from the enumerated suffix
  /// distributions after prefix.a and prefix.b.
  double renyi_predicted;
};

OddsCorrection odds_correction(const ARModel& model, const PowerCache& cache, std::size_t prompt,
                               std::span<const Token> prefix, Token a, Token b);

/// Explicit distribution over all sequences, per prompt, as log-probs indexed
/// by ARModel's leaf index.
class SequenceDist {
 public:
  SequenceDist(std::vector<std::size_t> vocab_sizes, std::vector<Eigen::ArrayXd> log_probs);

  const std::vector<std::size_t>& vocab_sizes() const { return vocab_sizes_; }
  std::size_t prompt_count() const { return log_probs_.size(); }
  std::size_t size() const { return static_cast<std::size_t>(log_probs_.front().size()); }
  const Eigen::ArrayXd& log_probs(std::size_t prompt) const { return log_probs_.at(prompt); }
  Eigen::ArrayXd probs(std::size_t prompt) const { return log_probs_.at(prompt).exp(); }

 private:
  std::vector<std::size_t> vocab_sizes_;
  std::vector<Eigen::ArrayXd> log_probs_;
};

/// Enumerated log pi(y|x) for every y. Throws ResourceLimitError past the cap.
Eigen::ArrayXd enumerate_logprobs(const ARModel& model, std::size_t prompt,
                                  std::size_t sequence_cap = kDefaultSequenceCap);

/// pi(y|x) itself as a SequenceDist.
SequenceDist base_sequence_dist(const ARModel& model,
                                std::size_t sequence_cap = kDefaultSequenceCap);

/// pi_alpha(y|x) = pi(y|x)^alpha / Z_alpha(x) by full enumeration.
SequenceDist exact_power_dist(const ARModel& model, double alpha,
                              std::size_t sequence_cap = kDefaultSequenceCap);

/// All sequences whose log-probability is within `tol` of the maximum,
/// found by max-product DP and a pruned back-trace. Order is lexicographic.
std::vector<Sequence> power_argmax_set(const ARModel& model, std::size_t prompt,
                                       double tol = kDefaultArgmaxTol,
                                       std::size_t node_cap = kDefaultNodeCap);

/// pi_alpha(y*(x) | x) = |y*| m^alpha / Z_alpha.
double power_mass_on_argmax(const ARModel& model, double alpha, std::size_t prompt,
                            double tol = kDefaultArgmaxTol);

struct OddsPair {
  Token a;
  Token b;
  double temp_log_odds;
  double pow_log_odds;
  double correction;
  bool reversed;
};

/// Every pair a < b with positive base probability at `prefix`; `reversed`
/// marks a sign disagreement between the temperature and power log odds.
std::vector<OddsPair> rank_reversal_scan(const ARModel& model, const PowerCache& cache,
                                         std::size_t prompt, std::span<const Token> prefix = {});

}  // namespace powerlab
