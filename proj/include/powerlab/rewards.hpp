#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "powerlab/ar_model.hpp"
#include "powerlab/result_table.hpp"
#include "powerlab/reward_fn.hpp"

namespace powerlab {

/// R(alpha; x) = E_{pi_alpha}[r], exact over the support of pi(.|x).
double reward_expectation(const ARModel& model, double alpha, const RewardFn& reward,
                          std::size_t prompt);

/// Cov_{pi_alpha}(f, g) over the support of pi(.|x).
double covariance_under_power(const ARModel& model, double alpha, const RewardFn& f,
                              const RewardFn& g, std::size_t prompt);

struct DerivativeCheck {
  /// Cov_{pi_alpha}(r, r_self).
  double cov_value;
  /// [R(alpha + h) - R(alpha - h)] / 2h.
  double fd_estimate;
  /// |cov - fd| / max(|cov|, 1e-8).
  double rel_err;
};

DerivativeCheck reward_derivative_check(const ARModel& model, double alpha,
                                        const RewardFn& reward, std::size_t prompt,
                                        double h = 1e-4);

/// Integral over [alpha_lo, alpha_hi] of Cov_{pi_a}(r, r_self) da by adaptive
/// Gauss-Kronrod quadrature. Equals R(alpha_hi) - R(alpha_lo).
double integrated_covariance(const ARModel& model, double alpha_lo, double alpha_hi,
                             const RewardFn& reward, std::size_t prompt, double rel_tol = 1e-6);

/// Decimal token ids joined by commas ("" for no tokens).
std::string serialize_tokens(std::span<const Token> tokens);
/// Leading 64 bits (big-endian) of SHA-256 over the UTF-8 serialization.
std::uint64_t hash_u64(std::span<const Token> tokens);
/// hash_u64 scaled to [0, 1); the low 11 bits are dropped so the value is an
/// exact double strictly below 1.
double hash_fraction(const Sequence& y);

/// Moments used to z-score the self-reward and the hash reward.
struct RewardStats {
  double mean_self;
  double std_self;
  double mean_hash;
  double std_hash;
};

/// Exact moments under pi(.|x) (population standard deviations).
RewardStats exact_reward_stats(const ARModel& model, std::size_t prompt);

/// r_lambda(y) = lambda z_self(y) + sqrt(1 - lambda^2) (z_r(y) + eps(y)), with
/// eps(y) ~ N(0, sigma^2) drawn from SeededRng(derive_seed(seed, hash_u64(y)))
/// so the reward is a fixed function of y.
struct SyntheticRewardSpec {
  double lambda = 0.0;
  double sigma = 0.5;
  std::uint64_t seed = 0;
  std::optional<RewardStats> stats;

  void validate() const;
};

/// Throws std::invalid_argument when spec.stats is empty.
double synthetic_reward(const SyntheticRewardSpec& spec, const Sequence& y, const ARModel& model);
/// Callable form; holds a reference to `model`.
RewardFn synthetic_reward_fn(SyntheticRewardSpec spec, const ARModel& model);

/// One row per lambda with header `lambda,cov_at_1,integrated_cov,gain,alpha`:
/// Cov_pi(r_lambda, r_self), the integral of that covariance over [1, alpha],
/// and the exact gain R(alpha) - R(1). Missing stats default to exact_reward_stats.
ResultTable covariance_gain_sweep(const ARModel& model, double alpha,
                                  const std::vector<double>& lambdas,
                                  const SyntheticRewardSpec& spec_template, std::size_t prompt);

}  // namespace powerlab
