#include "powerlab/samplers.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

#include "powerlab/errors.hpp"

namespace powerlab {

void MHConfig::validate(std::size_t horizon) const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("MHConfig: alpha must be > 0");
  if (!(proposal_temp > 0.0) || !std::isfinite(proposal_temp)) {
    throw std::invalid_argument("MHConfig: proposal_temp must be > 0");
  }
  const std::size_t b = block_for(horizon);
  if (b == 0 || horizon % b != 0) {
    throw std::invalid_argument("MHConfig: block size " + std::to_string(b) +
                                " does not divide horizon " + std::to_string(horizon));
  }
}

MHConfig MHConfig::long_horizon_preset() {
  return MHConfig{.alpha = 4.0, .block_size = 192, .n_mcmc = 10, .proposal_temp = 0.25};
}

std::size_t MHTrace::monotonicity_violations() const {
  std::size_t violations = 0;
  for (std::size_t i = 1; i < steps.size(); ++i) {
    if (steps[i].block == steps[i - 1].block &&
        steps[i].current_logprob < steps[i - 1].current_logprob) {
      ++violations;
    }
  }
  return violations;
}

namespace {

enum class Acceptance { Metropolis, Greedy };

struct ChainState {
  std::vector<Token> tokens;
  std::vector<double> log_base;  // log pi(y_t | y_<t)
  std::vector<double> log_prop;  // log p_prop(y_t | y_<t)
};

// Resamples positions [from, to) of `state` from the proposal.
void extend(const ARModel& model, std::size_t prompt, double inv_tau, std::size_t from,
            std::size_t to, ChainState& state, SeededRng& rng) {
  for (std::size_t t = from; t < to; ++t) {
    const auto& row = model.next_row(prompt, std::span<const Token>(state.tokens.data(), t));
    const ProbRow prop = temp_next_token(row, inv_tau);
    const auto tok = static_cast<Eigen::Index>(rng.categorical(prop.probs));
    state.tokens[t] = static_cast<Token>(tok);
    state.log_base[t] = row.log_probs[tok];
    state.log_prop[t] = prop.log_probs[tok];
  }
}

double range_sum(const std::vector<double>& v, std::size_t from, std::size_t to) {
  double s = 0.0;
  for (std::size_t t = from; t < to; ++t) s += v[t];
  return s;
}

MHResult run_chain(const ARModel& model, const MHConfig& cfg, std::size_t prompt, SeededRng& rng,
                   Acceptance rule) {
  const std::size_t horizon = model.horizon();
  cfg.validate(horizon);
  model.check_prefix(prompt, {});
  const std::size_t block = cfg.block_for(horizon);
  const double inv_tau = 1.0 / cfg.proposal_temp;
  const double alpha = cfg.alpha;

  ChainState current{std::vector<Token>(horizon), std::vector<double>(horizon),
                     std::vector<double>(horizon)};
  MHResult result;
  result.trace.steps.reserve((horizon / block) * (cfg.n_mcmc + 1));

  for (std::size_t k = 0; k * block < horizon; ++k) {
    const std::size_t extent = (k + 1) * block;
    extend(model, prompt, inv_tau, k * block, extent, current, rng);
    double current_lp = range_sum(current.log_base, 0, extent);
    result.trace.steps.push_back({k, 0, alpha * current_lp, true, current_lp});

    for (std::size_t n = 1; n <= cfg.n_mcmc; ++n) {
      const std::size_t m = rng.below(extent);
      ChainState proposal = current;
      extend(model, prompt, inv_tau, m, extent, proposal, rng);
      const double proposal_lp = range_sum(proposal.log_base, 0, extent);

      bool accept = false;
      if (rule == Acceptance::Greedy) {
        accept = proposal_lp > current_lp;
      } else {
        // Shared prefix y_<m cancels in both ratios.
        const double target_ratio =
            alpha * (range_sum(proposal.log_base, m, extent) - range_sum(current.log_base, m, extent));
        const double proposal_ratio =
            range_sum(current.log_prop, m, extent) - range_sum(proposal.log_prop, m, extent);
        const double log_accept = target_ratio + proposal_ratio;
        const double u = rng.uniform();
        accept = log_accept >= 0.0 || u <= std::exp(log_accept);
      }
      ++result.trace.proposed;
      if (accept) {
        ++result.trace.accepted;
        current = std::move(proposal);
        current_lp = proposal_lp;
      }
      result.trace.steps.push_back({k, n, alpha * proposal_lp, accept, current_lp});
    }
  }
  result.sequence = Sequence{prompt, std::move(current.tokens)};
  return result;
}

}  // namespace

MHResult mh_power_sample(const ARModel& model, const MHConfig& cfg, std::size_t prompt,
                         SeededRng& rng) {
  return run_chain(model, cfg, prompt, rng, Acceptance::Metropolis);
}

MHResult power_inf_sample(const ARModel& model, const MHConfig& cfg, std::size_t prompt,
                          SeededRng& rng) {
  MHConfig greedy = cfg;
  greedy.alpha = 1.0;
  return run_chain(model, greedy, prompt, rng, Acceptance::Greedy);
}

void write_trace_csv(std::ostream& out, const MHTrace& trace) {
  out << "block,iteration,proposal_logprob_alpha,accepted,current_logprob\n";
  char buf[64];
  for (const auto& s : trace.steps) {
    out << s.block << ',' << s.iteration << ',';
    std::snprintf(buf, sizeof buf, "%.17g", s.proposal_logprob_alpha);
    out << buf << ',' << (s.accepted ? 1 : 0) << ',';
    std::snprintf(buf, sizeof buf, "%.17g", s.current_logprob);
    out << buf << '\n';
  }
}

// ------------------------------------------------------------------ SIS

std::string_view to_string(ProposalKind kind) {
  switch (kind) {
    case ProposalKind::Base: return "base";
    case ProposalKind::Temperature: return "temperature";
    case ProposalKind::Uniform: return "uniform";
    case ProposalKind::Oracle: return "oracle";
  }
  return "unknown";
}

ProposalKind parse_proposal_kind(std::string_view name) {
  if (name == "base") return ProposalKind::Base;
  if (name == "temperature") return ProposalKind::Temperature;
  if (name == "uniform") return ProposalKind::Uniform;
  if (name == "oracle") return ProposalKind::Oracle;
  throw std::invalid_argument("unknown proposal kind '" + std::string(name) + "'");
}

ProbRow one_step_proposal(ProposalKind kind, const ARModel& model, const PowerCache* cache,
                          double alpha, std::size_t prompt, std::span<const Token> prefix) {
  model.check_prefix(prompt, prefix);
  const auto& row = model.next_row(prompt, prefix);
  switch (kind) {
    case ProposalKind::Base:
      return row;
    case ProposalKind::Temperature:
      return temp_next_token(row, alpha);
    case ProposalKind::Uniform:
      return ProbRow::uniform(static_cast<std::size_t>(row.size()));
    case ProposalKind::Oracle:
      if (cache == nullptr) throw std::invalid_argument("oracle proposal needs a PowerCache");
      if (cache->alpha() != alpha) {
        throw std::invalid_argument("oracle proposal: cache alpha differs from requested alpha");
      }
      return power_next_token(*cache, model, prompt, prefix);
  }
  throw std::invalid_argument("one_step_proposal: unknown kind");
}

double incremental_weight(const ProbRow& target, const ProbRow& proposal, Token token) {
  if (target.size() != proposal.size() || token < 0 || token >= target.size()) {
    throw std::invalid_argument("incremental_weight: token or row size mismatch");
  }
  const double f = target.probs[token];
  const double q = proposal.probs[token];
  if (q <= 0.0) {
    if (f > 0.0) {
      throw SupportViolation("proposal has zero mass on token " + std::to_string(token) +
                             " which the target supports");
    }
    return 0.0;
  }
  return f / q;
}

double log_incremental_weight(const ProbRow& target, const ProbRow& proposal, Token token) {
  (void)incremental_weight(target, proposal, token);
  return target.log_probs[token] - proposal.log_probs[token];
}

namespace {

void check_support(const ProbRow& target, const ProbRow& proposal) {
  if (target.size() != proposal.size()) throw std::invalid_argument("row size mismatch");
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    if (target.probs[i] > 0.0 && !(proposal.probs[i] > 0.0)) {
      throw SupportViolation("proposal has zero mass on token " + std::to_string(i) +
                             " which the target supports");
    }
  }
}

}  // namespace

EssExact ess_exact(const ProbRow& target, const ProbRow& proposal) {
  check_support(target, proposal);
  double q_total = 0.0;
  double weighted = 0.0;
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    const double q = proposal.probs[i];
    if (q <= 0.0) continue;
    q_total += q;
    weighted += q * (target.probs[i] / q);
  }
  const double mean = weighted / q_total;
  double var = 0.0;
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    const double q = proposal.probs[i];
    if (q <= 0.0) continue;
    const double d = target.probs[i] / q - mean;
    var += q * d * d;
  }
  var /= q_total;
  const double cv2 = var / (mean * mean);
  return {weighted, cv2, 1.0 / (1.0 + cv2)};
}

EssMonteCarlo ess_monte_carlo(const ProbRow& target, const ProbRow& proposal, std::size_t n,
                              std::size_t reps, SeededRng& rng) {
  if (n < 2) throw std::invalid_argument("ess_monte_carlo: need N >= 2");
  if (reps == 0) throw std::invalid_argument("ess_monte_carlo: need reps >= 1");
  check_support(target, proposal);
  Eigen::ArrayXd fracs(static_cast<Eigen::Index>(reps));
  for (std::size_t r = 0; r < reps; ++r) {
    double sum = 0.0;
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto tok = static_cast<Eigen::Index>(rng.categorical(proposal.probs));
      const double w = target.probs[tok] / proposal.probs[tok];
      sum += w;
      sum_sq += w * w;
    }
    fracs[static_cast<Eigen::Index>(r)] = (sum * sum) / (sum_sq * static_cast<double>(n));
  }
  const double mean = fracs.mean();
  const double std =
      reps > 1 ? std::sqrt((fracs - mean).square().sum() / static_cast<double>(reps - 1)) : 0.0;
  return {mean, std};
}

double ParticleSet::self_normalized_mean(const Eigen::Ref<const Eigen::ArrayXd>& values) const {
  if (values.size() != log_weights.size()) throw std::invalid_argument("value count mismatch");
  const Eigen::ArrayXd w = (log_weights - log_weights.maxCoeff()).exp();
  return (w * values).sum() / w.sum();
}

double ParticleSet::ess() const {
  const Eigen::ArrayXd w = (log_weights - log_weights.maxCoeff()).exp();
  return w.sum() * w.sum() / w.square().sum();
}

ParticleSet sis_run(const ARModel& model, const PowerCache& cache, ProposalKind kind,
                    std::size_t n, std::size_t prompt, SeededRng& rng) {
  if (n == 0) throw std::invalid_argument("sis_run: need at least one particle");
  const std::size_t horizon = model.horizon();
  const auto rows = static_cast<Eigen::Index>(n);
  ParticleSet set;
  set.particles.reserve(n);
  set.log_weights = Eigen::ArrayXd::Zero(rows);
  set.log_proposal = Eigen::ArrayXd::Zero(rows);
  set.step_log_weights = Eigen::ArrayXXd::Zero(rows, static_cast<Eigen::Index>(horizon));
  for (Eigen::Index i = 0; i < rows; ++i) {
    Sequence y{prompt, std::vector<Token>(horizon)};
    for (std::size_t t = 0; t < horizon; ++t) {
      const std::span<const Token> prefix(y.tokens.data(), t);
      const ProbRow target = power_next_token(cache, model, prompt, prefix);
      const ProbRow q = one_step_proposal(kind, model, &cache, cache.alpha(), prompt, prefix);
      const auto tok = static_cast<Token>(rng.categorical(q.probs));
      y.tokens[t] = tok;
      const double log_w = log_incremental_weight(target, q, tok);
      set.step_log_weights(i, static_cast<Eigen::Index>(t)) = log_w;
      set.log_weights[i] += log_w;
      set.log_proposal[i] += q.log_probs[tok];
    }
    set.particles.push_back(std::move(y));
  }
  return set;
}

}  // namespace powerlab
