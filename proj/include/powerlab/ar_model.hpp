#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "powerlab/rng.hpp"

namespace powerlab {

using Token = std::int32_t;

/// A next-token distribution stored both linearly and in natural log.
/// log_probs is exactly -inf where probs is 0.
struct ProbRow {
  Eigen::ArrayXd probs;
  Eigen::ArrayXd log_probs;

  /// Validates nonnegativity and |sum - 1| <= tol, then renormalizes unless the
  /// sum is already 1 to within rounding.
  static ProbRow from_probs(Eigen::ArrayXd probs, double tol = 1e-9);
  /// Normalizes arbitrary log-weights (-inf allowed) into a row.
  static ProbRow from_log_weights(const Eigen::Ref<const Eigen::ArrayXd>& log_weights);
  static ProbRow uniform(std::size_t size);
  /// probs = counts / sum(counts) with no further renormalization.
  static ProbRow from_counts(const Eigen::Ref<const Eigen::ArrayXd>& counts);

  Eigen::Index size() const { return probs.size(); }
};

/// p_i proportional to (i+1)^-exponent.
ProbRow zipf_row(std::size_t vocab, double exponent);

/// q(z) proportional to z^-s for z = 1..M.
ProbRow powerlaw_suffix_row(std::size_t support, double s);

/// Token-dependent suffix sharpness: sinusoid over the rank plus a linear
/// trend, spanning exactly [0.45, 1.65].
double suffix_exponent(std::size_t token, std::size_t vocab);

struct Sequence {
  std::size_t prompt = 0;
  std::vector<Token> tokens;

  friend bool operator==(const Sequence&, const Sequence&) = default;
};

/// Weights over prompt indices.
class PromptDist {
 public:
  explicit PromptDist(Eigen::ArrayXd weights);
  static PromptDist uniform(std::size_t prompts);

  const Eigen::ArrayXd& weights() const { return weights_; }
  std::size_t size() const { return static_cast<std::size_t>(weights_.size()); }
  std::size_t sample(SeededRng& rng) const { return rng.categorical(weights_); }

 private:
  Eigen::ArrayXd weights_;
};

/// Finite-horizon autoregressive model stored as an explicit prefix tree.
///
/// Step t has its own vocabulary size. A prefix of length t is addressed by
/// its mixed-radix node index ((y_0 * v_1 + y_1) * v_2 + ...), so the
/// children of node n at depth t are n * v_t + s. Leaves at depth T are the
/// sequence indices used by SequenceDist.
class ARModel {
 public:
  /// rows[prompt][t][node] with nodes_at_depth(t) rows of size v_t per depth.
  using RowTable = std::vector<std::vector<std::vector<ProbRow>>>;
  using RowFunction = std::function<ProbRow(std::size_t prompt, std::span<const Token> prefix)>;

  ARModel(std::vector<std::size_t> vocab_sizes, std::vector<std::string> prompt_ids,
          RowTable rows, std::string kind = "tabular");

  /// Tabulates `row_fn` over every prefix of every prompt.
  static ARModel from_function(std::vector<std::size_t> vocab_sizes, std::size_t prompts,
                               const RowFunction& row_fn, std::string kind = "tabular");

  std::size_t horizon() const { return vocab_sizes_.size(); }
  const std::vector<std::size_t>& vocab_sizes() const { return vocab_sizes_; }
  std::size_t vocab_size(std::size_t step) const { return vocab_sizes_.at(step); }
  std::size_t prompt_count() const { return prompt_ids_.size(); }
  const std::vector<std::string>& prompt_ids() const { return prompt_ids_; }
  const std::string& kind() const { return kind_; }

  /// Number of length-t prefixes, 0 <= t <= T.
  std::size_t nodes_at_depth(std::size_t depth) const { return depth_sizes_.at(depth); }
  /// Prefix-tree nodes including the leaves.
  std::size_t node_count() const;
  /// |Y| = product of the per-step vocabularies.
  std::size_t sequence_count() const { return depth_sizes_.back(); }

  std::size_t prefix_index(std::span<const Token> prefix) const;
  std::vector<Token> decode(std::size_t depth, std::size_t node) const;
  std::vector<Token> decode_sequence(std::size_t index) const { return decode(horizon(), index); }

  const ProbRow& row_at(std::size_t prompt, std::size_t depth, std::size_t node) const;
  const ProbRow& next_row(std::size_t prompt, std::span<const Token> prefix) const;

  bool is_valid(const Sequence& y) const;
  /// Throws std::invalid_argument describing the first problem.
  void check_sequence(const Sequence& y) const;
  void check_prefix(std::size_t prompt, std::span<const Token> prefix) const;

 private:
  std::vector<std::size_t> vocab_sizes_;
  std::vector<std::size_t> depth_sizes_;
  std::vector<std::string> prompt_ids_;
  RowTable rows_;
  std::string kind_;
};

/// Every row uniform.
ARModel uniform_model(std::vector<std::size_t> vocab_sizes, std::size_t prompts = 1);

/// T = 2 model: Zipf first step, then a power-law suffix row whose exponent
/// depends on the first token.
ARModel build_synthetic_two_step(std::size_t vocab, std::size_t suffix_support,
                                 double zipf_exponent);

/// Rows drawn i.i.d. from a symmetric Dirichlet(1) (normalized exponentials).
ARModel random_dirichlet_model(std::vector<std::size_t> vocab_sizes, std::size_t prompts,
                               SeededRng& rng);

/// Rows softmax(scale * g) with g i.i.d. standard normal. Larger `scale`
/// gives more peaked, still tie-free, rows.
ARModel random_logit_model(std::vector<std::size_t> vocab_sizes, std::size_t prompts,
                           double scale, SeededRng& rng);

/// log pi(y | x) = sum_t log pi(y_t | x, y_<t). This is the total self-reward.
double seq_logprob(const ARModel& model, const Sequence& y);

/// seq_logprob / T.
double seq_logprob_per_token(const ARModel& model, const Sequence& y);

/// Ancestral sample from pi(. | prompt).
Sequence sample_sequence(const ARModel& model, std::size_t prompt, SeededRng& rng);

}  // namespace powerlab
