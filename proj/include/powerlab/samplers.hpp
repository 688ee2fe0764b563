#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "powerlab/ar_model.hpp"
#include "powerlab/power_exact.hpp"
#include "powerlab/rng.hpp"

namespace powerlab {

/// Blockwise Metropolis-Hastings power sampling parameters.
struct MHConfig {
  double alpha = 4.0;
  /// Block length B; 0 means the whole horizon. Must divide T.
  std::size_t block_size = 0;
  std::size_t n_mcmc = 10;
  /// Proposal temperature tau: p_prop(s|.) proportional to pi(s|.)^(1/tau).
  double proposal_temp = 0.25;

  std::size_t block_for(std::size_t horizon) const { return block_size == 0 ? horizon : block_size; }
  /// Throws std::invalid_argument for alpha <= 0, tau <= 0 or B not dividing T.
  void validate(std::size_t horizon) const;

  /// The long-horizon setting (3072 tokens, B = 192, N_MCMC = 10, tau = 1/alpha).
  /// Documented preset only; desk-scale models never use it.
  static MHConfig long_horizon_preset();
};

struct MHStep {
  std::size_t block;
  std::size_t iteration;
  /// alpha * log pi of the proposal over the current block extent.
  double proposal_logprob_alpha;
  bool accepted;
  /// log pi of the current state's extent after the accept/reject decision.
  double current_logprob;
};

struct MHTrace {
  std::vector<MHStep> steps;
  std::size_t accepted = 0;
  std::size_t proposed = 0;

  double acceptance_rate() const {
    return proposed == 0 ? 1.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
  }
  /// Steps whose current log-prob dropped below the previous step's within a block.
  std::size_t monotonicity_violations() const;
};

struct MHResult {
  Sequence sequence;
  MHTrace trace;
};

/// Suffix-resampling MH targeting pi^alpha on each grown prefix.
MHResult mh_power_sample(const ARModel& model, const MHConfig& cfg, std::size_t prompt,
                         SeededRng& rng);

/// Same proposal mechanics, accepting only strict increases of pi(y|x).
/// cfg.alpha is ignored.
MHResult power_inf_sample(const ARModel& model, const MHConfig& cfg, std::size_t prompt,
                          SeededRng& rng);

/// CSV with header `block,iteration,proposal_logprob_alpha,accepted,current_logprob`.
void write_trace_csv(std::ostream& out, const MHTrace& trace);

// ------------------------------------------------------------------ SIS

enum class ProposalKind { Base, Temperature, Uniform, Oracle };

std::string_view to_string(ProposalKind kind);
/// Parses "base", "temperature", "uniform" or "oracle".
ProposalKind parse_proposal_kind(std::string_view name);

/// Temperature uses `alpha`; Oracle needs a cache built with the same alpha.
ProbRow one_step_proposal(ProposalKind kind, const ARModel& model, const PowerCache* cache,
                          double alpha, std::size_t prompt, std::span<const Token> prefix);

/// W = f(token) / q(token). Throws SupportViolation when q(token) = 0 < f(token).
double incremental_weight(const ProbRow& target, const ProbRow& proposal, Token token);
double log_incremental_weight(const ProbRow& target, const ProbRow& proposal, Token token);

struct EssExact {
  double mean_weight;
  double cv2;
  double ess_frac;
};

/// Closed-form moments of W = f/q under q.
EssExact ess_exact(const ProbRow& target, const ProbRow& proposal);

struct EssMonteCarlo {
  double mean_ess_frac;
  double std_ess_frac;
};

/// Self-normalized ESS/N = (sum w)^2 / (N sum w^2) over N draws from the
/// proposal, averaged over `reps` replicates. Std is the sample std across reps.
EssMonteCarlo ess_monte_carlo(const ProbRow& target, const ProbRow& proposal, std::size_t n,
                              std::size_t reps, SeededRng& rng);

struct ParticleSet {
  std::vector<Sequence> particles;
  /// log w_T per particle; equals the row sum of step_log_weights.
  Eigen::ArrayXd log_weights;
  /// log W_t, one row per particle, one column per step.
  Eigen::ArrayXXd step_log_weights;
  /// log q(y) of each full trajectory under the proposal.
  Eigen::ArrayXd log_proposal;

  /// sum_i w_i g_i / sum_i w_i.
  double self_normalized_mean(const Eigen::Ref<const Eigen::ArrayXd>& values) const;
  double ess() const;
};

/// Sequential importance sampling without resampling towards pi_alpha
/// (alpha = cache.alpha()), one-step proposal `kind` at every step.
ParticleSet sis_run(const ARModel& model, const PowerCache& cache, ProposalKind kind,
                    std::size_t n, std::size_t prompt, SeededRng& rng);

}  // namespace powerlab
