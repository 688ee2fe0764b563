#include "powerlab/rewards.hpp"

#include <cmath>
#include <stdexcept>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <openssl/evp.h>

#include "powerlab/numeric.hpp"
#include "powerlab/power_exact.hpp"

namespace powerlab {

RewardFn self_reward(const ARModel& model) {
  return [&model](const Sequence& y) { return seq_logprob(model, y); };
}

RewardFn self_reward_per_token(const ARModel& model) {
  return [&model](const Sequence& y) { return seq_logprob_per_token(model, y); };
}

Eigen::ArrayXd tabulate_reward(const ARModel& model, std::size_t prompt, const RewardFn& reward) {
  const std::size_t count = model.sequence_count();
  if (count > kDefaultSequenceCap) {
    throw std::invalid_argument("tabulate_reward: model is not enumerable");
  }
  Eigen::ArrayXd out(static_cast<Eigen::Index>(count));
  Sequence y{prompt, {}};
  for (std::size_t i = 0; i < count; ++i) {
    y.tokens = model.decode_sequence(i);
    out[static_cast<Eigen::Index>(i)] = reward(y);
  }
  return out;
}

namespace {

// Support of pi(.|x): log-probs and reward values restricted to lp > -inf.
struct Supported {
  Eigen::ArrayXd logp;
  Eigen::ArrayXd reward;
};

Supported restrict_to_support(const Eigen::ArrayXd& logp, const Eigen::ArrayXd& reward) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < logp.size(); ++i) {
    if (std::isfinite(logp[i])) keep.push_back(i);
  }
  Supported s{Eigen::ArrayXd(static_cast<Eigen::Index>(keep.size())),
              Eigen::ArrayXd(static_cast<Eigen::Index>(keep.size()))};
  for (std::size_t k = 0; k < keep.size(); ++k) {
    s.logp[static_cast<Eigen::Index>(k)] = logp[keep[k]];
    s.reward[static_cast<Eigen::Index>(k)] = reward[keep[k]];
  }
  if (!s.reward.allFinite()) throw std::invalid_argument("reward is not finite on the support");
  return s;
}

Eigen::ArrayXd power_weights(const Eigen::ArrayXd& logp, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be > 0");
  return log_normalize(alpha * logp).exp();
}

double expectation(const Eigen::ArrayXd& logp, double alpha, const Eigen::ArrayXd& r) {
  return (power_weights(logp, alpha) * r).sum();
}

double covariance(const Eigen::ArrayXd& logp, double alpha, const Eigen::ArrayXd& f,
                  const Eigen::ArrayXd& g) {
  const Eigen::ArrayXd w = power_weights(logp, alpha);
  const double mf = (w * f).sum();
  const double mg = (w * g).sum();
  return (w * (f - mf) * (g - mg)).sum();
}

Supported tabulate_supported(const ARModel& model, std::size_t prompt, const RewardFn& reward) {
  return restrict_to_support(enumerate_logprobs(model, prompt),
                             tabulate_reward(model, prompt, reward));
}

double integrate_cov(const Supported& s, double lo, double hi, double rel_tol) {
  auto integrand = [&](double a) { return covariance(s.logp, a, s.reward, s.logp); };
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand, lo, hi, 15,
                                                                        rel_tol);
}

}  // namespace

double reward_expectation(const ARModel& model, double alpha, const RewardFn& reward,
                          std::size_t prompt) {
  const auto s = tabulate_supported(model, prompt, reward);
  return expectation(s.logp, alpha, s.reward);
}

double covariance_under_power(const ARModel& model, double alpha, const RewardFn& f,
                              const RewardFn& g, std::size_t prompt) {
  const auto sf = tabulate_supported(model, prompt, f);
  const auto sg = tabulate_supported(model, prompt, g);
  return covariance(sf.logp, alpha, sf.reward, sg.reward);
}

DerivativeCheck reward_derivative_check(const ARModel& model, double alpha,
                                        const RewardFn& reward, std::size_t prompt, double h) {
  if (!(h > 0.0) || !(alpha - h > 0.0)) {
    throw std::invalid_argument("reward_derivative_check: need h > 0 and alpha - h > 0");
  }
  const auto s = tabulate_supported(model, prompt, reward);
  DerivativeCheck out{};
  out.cov_value = covariance(s.logp, alpha, s.reward, s.logp);
  out.fd_estimate =
      (expectation(s.logp, alpha + h, s.reward) - expectation(s.logp, alpha - h, s.reward)) /
      (2.0 * h);
  out.rel_err = std::abs(out.cov_value - out.fd_estimate) / std::max(std::abs(out.cov_value), 1e-8);
  return out;
}

double integrated_covariance(const ARModel& model, double alpha_lo, double alpha_hi,
                             const RewardFn& reward, std::size_t prompt, double rel_tol) {
  if (!(alpha_lo > 0.0) || !(alpha_hi > 0.0)) throw std::invalid_argument("alpha must be > 0");
  return integrate_cov(tabulate_supported(model, prompt, reward), alpha_lo, alpha_hi, rel_tol);
}

// ---------------------------------------------------------------- hashing

std::string serialize_tokens(std::span<const Token> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(tokens[i]);
  }
  return out;
}

std::uint64_t hash_u64(std::span<const Token> tokens) {
  const std::string text = serialize_tokens(tokens);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &length, EVP_sha256(), nullptr) != 1 ||
      length != 32) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  std::uint64_t value = 0;
  for (int i = 0; i < 8; ++i) value = (value << 8) | digest[i];
  return value;
}

double hash_fraction(const Sequence& y) {
  return static_cast<double>(hash_u64(y.tokens) >> 11) * 0x1.0p-53;
}

RewardStats exact_reward_stats(const ARModel& model, std::size_t prompt) {
  const Eigen::ArrayXd logp = enumerate_logprobs(model, prompt);
  Eigen::ArrayXd hashes(logp.size());
  Sequence y{prompt, {}};
  for (Eigen::Index i = 0; i < logp.size(); ++i) {
    y.tokens = model.decode_sequence(static_cast<std::size_t>(i));
    hashes[i] = hash_fraction(y);
  }
  const auto self = restrict_to_support(logp, logp);
  const auto hash = restrict_to_support(logp, hashes);
  const Eigen::ArrayXd w = self.logp.exp();
  RewardStats stats{};
  stats.mean_self = (w * self.reward).sum();
  stats.std_self = std::sqrt((w * (self.reward - stats.mean_self).square()).sum());
  stats.mean_hash = (w * hash.reward).sum();
  stats.std_hash = std::sqrt((w * (hash.reward - stats.mean_hash).square()).sum());
  return stats;
}

void SyntheticRewardSpec::validate() const {
  if (!(lambda >= -1.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [-1, 1]");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("sigma must be >= 0");
  if (stats && (!(stats->std_self > 0.0) || !(stats->std_hash > 0.0) ||
                !std::isfinite(stats->mean_self) || !std::isfinite(stats->mean_hash))) {
    throw std::invalid_argument("reward stats need finite means and positive stds");
  }
}

double synthetic_reward(const SyntheticRewardSpec& spec, const Sequence& y, const ARModel& model) {
  if (!spec.stats) throw std::invalid_argument("synthetic_reward: normalization stats missing");
  spec.validate();
  const auto& st = *spec.stats;
  const double z_self = (seq_logprob(model, y) - st.mean_self) / st.std_self;
  const std::uint64_t h = hash_u64(y.tokens);
  const double z_hash = (static_cast<double>(h >> 11) * 0x1.0p-53 - st.mean_hash) / st.std_hash;
  SeededRng noise(derive_seed(spec.seed, h));
  const double eps = spec.sigma * noise.normal();
  return spec.lambda * z_self + std::sqrt(1.0 - spec.lambda * spec.lambda) * (z_hash + eps);
}

RewardFn synthetic_reward_fn(SyntheticRewardSpec spec, const ARModel& model) {
  if (!spec.stats) throw std::invalid_argument("synthetic_reward: normalization stats missing");
  spec.validate();
  return [spec, &model](const Sequence& y) { return synthetic_reward(spec, y, model); };
}

ResultTable covariance_gain_sweep(const ARModel& model, double alpha,
                                  const std::vector<double>& lambdas,
                                  const SyntheticRewardSpec& spec_template, std::size_t prompt) {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be > 0");
  SyntheticRewardSpec spec = spec_template;
  if (!spec.stats) spec.stats = exact_reward_stats(model, prompt);
  ResultTable table("cov_sweep", {"lambda", "cov_at_1", "integrated_cov", "gain", "alpha"});
  for (double lambda : lambdas) {
    spec.lambda = lambda;
    const auto s = tabulate_supported(model, prompt, synthetic_reward_fn(spec, model));
    const double cov_at_1 = covariance(s.logp, 1.0, s.reward, s.logp);
    const double integrated = alpha == 1.0 ? 0.0 : integrate_cov(s, 1.0, alpha, 1e-10);
    const double gain = expectation(s.logp, alpha, s.reward) - expectation(s.logp, 1.0, s.reward);
    table.add_row({lambda, cov_at_1, integrated, gain, alpha});
  }
  return table;
}

}  // namespace powerlab
