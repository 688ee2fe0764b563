#include "powerlab/power_exact.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "powerlab/errors.hpp"
#include "powerlab/numeric.hpp"

namespace powerlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_positive_alpha(double alpha, const char* where) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument(std::string(where) + ": alpha must be positive and finite");
  }
}

void require_node_cap(const ARModel& model, std::size_t cap) {
  const auto nodes = model.node_count();
  if (nodes > cap) {
    throw ResourceLimitError("prefix tree has " + std::to_string(nodes) + " nodes, cap is " +
                             std::to_string(cap));
  }
}

void require_sequence_cap(std::size_t count, std::size_t cap) {
  if (count > cap) {
    throw ResourceLimitError("enumeration needs " + std::to_string(count) +
                             " sequences, cap is " + std::to_string(cap));
  }
}

void require_matching_cache(const PowerCache& cache, const ARModel& model, std::size_t prompt) {
  if (prompt >= model.prompt_count()) throw std::invalid_argument("prompt out of range");
  for (std::size_t t = 0; t <= model.horizon(); ++t) {
    if (static_cast<std::size_t>(cache.depth_masses(prompt, t).size()) != model.nodes_at_depth(t)) {
      throw std::invalid_argument("PowerCache was built for a different model shape");
    }
  }
}

Eigen::ArrayXd child_slice(const Eigen::ArrayXd& next_depth, std::size_t node, std::size_t width) {
  return next_depth.segment(static_cast<Eigen::Index>(node * width),
                            static_cast<Eigen::Index>(width));
}

}  // namespace

PowerCache build_power_cache(const ARModel& model, double alpha, std::size_t node_cap) {
  require_positive_alpha(alpha, "build_power_cache");
  require_node_cap(model, node_cap);
  const std::size_t horizon = model.horizon();
  PowerCache cache;
  cache.alpha_ = alpha;
  cache.log_mass_.resize(model.prompt_count());
  for (std::size_t x = 0; x < model.prompt_count(); ++x) {
    auto& mass = cache.log_mass_[x];
    mass.resize(horizon + 1);
    mass[horizon] = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(model.nodes_at_depth(horizon)));
    for (std::size_t t = horizon; t-- > 0;) {
      const std::size_t width = model.vocab_size(t);
      mass[t].resize(static_cast<Eigen::Index>(model.nodes_at_depth(t)));
      for (std::size_t node = 0; node < model.nodes_at_depth(t); ++node) {
        const auto& row = model.row_at(x, t, node);
        mass[t][static_cast<Eigen::Index>(node)] =
            logsumexp(alpha * row.log_probs + child_slice(mass[t + 1], node, width));
      }
    }
    if (!std::isfinite(mass[0][0])) {
      throw std::runtime_error("build_power_cache: non-finite normalizer");
    }
  }
  return cache;
}

ProbRow temp_next_token(const ProbRow& row, double alpha) {
  require_positive_alpha(alpha, "temp_next_token");
  if (alpha == 1.0) return row;
  return ProbRow::from_log_weights(alpha * row.log_probs);
}

ProbRow temp_next_token(const ARModel& model, double alpha, std::size_t prompt,
                        std::span<const Token> prefix) {
  model.check_prefix(prompt, prefix);
  return temp_next_token(model.next_row(prompt, prefix), alpha);
}

ProbRow power_next_token(const PowerCache& cache, const ARModel& model, std::size_t prompt,
                         std::span<const Token> prefix) {
  require_matching_cache(cache, model, prompt);
  model.check_prefix(prompt, prefix);
  const auto& row = model.next_row(prompt, prefix);
  const double alpha = cache.alpha();
  if (alpha == 1.0) return row;
  const std::size_t t = prefix.size();
  const auto children =
      child_slice(cache.depth_masses(prompt, t + 1), model.prefix_index(prefix), model.vocab_size(t));
  return ProbRow::from_log_weights(alpha * row.log_probs + children);
}

double renyi_entropy(const Eigen::Ref<const Eigen::ArrayXd>& probs, double alpha) {
  require_positive_alpha(alpha, "renyi_entropy");
  if (alpha == 1.0) throw std::invalid_argument("renyi_entropy: alpha = 1 is not supported");
  const Eigen::ArrayXd logs =
      probs.unaryExpr([](double p) { return p > 0.0 ? std::log(p) : kNegInf; });
  return logsumexp(alpha * logs) / (1.0 - alpha);
}

Eigen::ArrayXd suffix_distribution(const ARModel& model, std::size_t prompt,
                                   std::span<const Token> prefix, std::size_t sequence_cap) {
  model.check_prefix(prompt, prefix);
  std::size_t count = 1;
  for (std::size_t t = prefix.size(); t < model.horizon(); ++t) {
    require_sequence_cap(count *= model.vocab_size(t), sequence_cap);
  }
  std::vector<std::size_t> nodes{model.prefix_index(prefix)};
  Eigen::ArrayXd logp = Eigen::ArrayXd::Zero(1);
  for (std::size_t t = prefix.size(); t < model.horizon(); ++t) {
    const std::size_t width = model.vocab_size(t);
    std::vector<std::size_t> next_nodes(nodes.size() * width);
    Eigen::ArrayXd next_logp(static_cast<Eigen::Index>(next_nodes.size()));
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const auto& row = model.row_at(prompt, t, nodes[k]);
      for (std::size_t s = 0; s < width; ++s) {
        next_nodes[k * width + s] = nodes[k] * width + s;
        next_logp[static_cast<Eigen::Index>(k * width + s)] =
            logp[static_cast<Eigen::Index>(k)] + row.log_probs[static_cast<Eigen::Index>(s)];
      }
    }
    nodes = std::move(next_nodes);
    logp = std::move(next_logp);
  }
  return logp.exp();
}

OddsCorrection odds_correction(const ARModel& model, const PowerCache& cache, std::size_t prompt,
                               std::span<const Token> prefix, Token a, Token b) {
  model.check_prefix(prompt, prefix);
  if (prefix.size() >= model.horizon()) {
    throw std::invalid_argument("odds_correction: prefix must leave at least one step");
  }
  const auto& base = model.next_row(prompt, prefix);
  const auto width = base.size();
  if (a < 0 || b < 0 || a >= width || b >= width) {
    throw std::invalid_argument("odds_correction: token out of range");
  }
  if (!(base.probs[a] > 0.0) || !(base.probs[b] > 0.0)) {
    throw std::invalid_argument("odds_correction: tokens need positive base probability");
  }
  const double alpha = cache.alpha();
  const ProbRow pow = power_next_token(cache, model, prompt, prefix);
  const ProbRow temp = temp_next_token(base, alpha);
  OddsCorrection out{};
  out.closed_form = (pow.log_probs[a] - pow.log_probs[b]) - (temp.log_probs[a] - temp.log_probs[b]);
  if (alpha == 1.0) {
    out.renyi_predicted = 0.0;
    return out;
  }
  std::vector<Token> extended(prefix.begin(), prefix.end());
  extended.push_back(a);
  const double h_a = renyi_entropy(suffix_distribution(model, prompt, extended), alpha);
  extended.back() = b;
  const double h_b = renyi_entropy(suffix_distribution(model, prompt, extended), alpha);
  out.renyi_predicted = (1.0 - alpha) * (h_a - h_b);
  return out;
}

// ------------------------------------------------------------ SequenceDist

SequenceDist::SequenceDist(std::vector<std::size_t> vocab_sizes,
                           std::vector<Eigen::ArrayXd> log_probs)
    : vocab_sizes_(std::move(vocab_sizes)), log_probs_(std::move(log_probs)) {
  if (log_probs_.empty()) throw std::invalid_argument("SequenceDist: no prompts");
  std::size_t count = 1;
  for (auto v : vocab_sizes_) count *= v;
  for (const auto& lp : log_probs_) {
    if (static_cast<std::size_t>(lp.size()) != count) {
      throw std::invalid_argument("SequenceDist: wrong number of sequences");
    }
    if (std::abs(lp.exp().sum() - 1.0) > 1e-9) {
      throw std::invalid_argument("SequenceDist: distribution is not normalized");
    }
  }
}

Eigen::ArrayXd enumerate_logprobs(const ARModel& model, std::size_t prompt,
                                  std::size_t sequence_cap) {
  require_sequence_cap(model.sequence_count(), sequence_cap);
  if (prompt >= model.prompt_count()) throw std::invalid_argument("prompt out of range");
  Eigen::ArrayXd logp = Eigen::ArrayXd::Zero(1);
  for (std::size_t t = 0; t < model.horizon(); ++t) {
    const auto width = static_cast<Eigen::Index>(model.vocab_size(t));
    Eigen::ArrayXd next(logp.size() * width);
    for (Eigen::Index node = 0; node < logp.size(); ++node) {
      const auto& row = model.row_at(prompt, t, static_cast<std::size_t>(node));
      next.segment(node * width, width) = logp[node] + row.log_probs;
    }
    logp = std::move(next);
  }
  return logp;
}

SequenceDist base_sequence_dist(const ARModel& model, std::size_t sequence_cap) {
  std::vector<Eigen::ArrayXd> per_prompt;
  for (std::size_t x = 0; x < model.prompt_count(); ++x) {
    per_prompt.push_back(enumerate_logprobs(model, x, sequence_cap));
  }
  return SequenceDist(model.vocab_sizes(), std::move(per_prompt));
}

SequenceDist exact_power_dist(const ARModel& model, double alpha, std::size_t sequence_cap) {
  require_positive_alpha(alpha, "exact_power_dist");
  std::vector<Eigen::ArrayXd> per_prompt;
  for (std::size_t x = 0; x < model.prompt_count(); ++x) {
    per_prompt.push_back(log_normalize(alpha * enumerate_logprobs(model, x, sequence_cap)));
  }
  return SequenceDist(model.vocab_sizes(), std::move(per_prompt));
}

// ---------------------------------------------------------------- argmax

std::vector<Sequence> power_argmax_set(const ARModel& model, std::size_t prompt, double tol,
                                       std::size_t node_cap) {
  if (!(tol >= 0.0)) throw std::invalid_argument("power_argmax_set: tol must be >= 0");
  require_node_cap(model, node_cap);
  model.check_prefix(prompt, {});
  const std::size_t horizon = model.horizon();

  // best[t][node]: max log-prob of any completion of the node.
  std::vector<Eigen::ArrayXd> best(horizon + 1);
  best[horizon] = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(model.nodes_at_depth(horizon)));
  for (std::size_t t = horizon; t-- > 0;) {
    const std::size_t width = model.vocab_size(t);
    best[t].resize(static_cast<Eigen::Index>(model.nodes_at_depth(t)));
    for (std::size_t node = 0; node < model.nodes_at_depth(t); ++node) {
      best[t][static_cast<Eigen::Index>(node)] =
          (model.row_at(prompt, t, node).log_probs + child_slice(best[t + 1], node, width))
              .maxCoeff();
    }
  }
  const double top = best[0][0];
  // Prune with a little slack so paths whose forward and backward sums round
  // differently survive; the exact filter below uses forward sums only.
  const double slack = tol + 1e-12 * (1.0 + std::abs(top));

  struct Frame {
    std::size_t depth;
    std::size_t node;
    double acc;
  };
  std::vector<std::pair<std::size_t, double>> leaves;  // (leaf index, forward logprob)
  std::vector<Frame> stack{{0, 0, 0.0}};
  while (!stack.empty()) {
    const Frame f = stack.back();
    stack.pop_back();
    if (f.depth == horizon) {
      leaves.emplace_back(f.node, f.acc);
      continue;
    }
    const std::size_t width = model.vocab_size(f.depth);
    const auto& row = model.row_at(prompt, f.depth, f.node);
    for (std::size_t s = width; s-- > 0;) {
      const auto si = static_cast<Eigen::Index>(s);
      const std::size_t child = f.node * width + s;
      if (f.acc + row.log_probs[si] + best[f.depth + 1][static_cast<Eigen::Index>(child)] >=
          top - slack) {
        stack.push_back({f.depth + 1, child, f.acc + row.log_probs[si]});
      }
    }
  }
  double forward_top = -std::numeric_limits<double>::infinity();
  for (const auto& [leaf, lp] : leaves) forward_top = std::max(forward_top, lp);
  std::vector<Sequence> out;
  for (const auto& [leaf, lp] : leaves) {
    if (lp >= forward_top - tol) out.push_back({prompt, model.decode_sequence(leaf)});
  }
  return out;
}

double power_mass_on_argmax(const ARModel& model, double alpha, std::size_t prompt, double tol) {
  require_positive_alpha(alpha, "power_mass_on_argmax");
  const Eigen::ArrayXd powered = alpha * enumerate_logprobs(model, prompt);
  const auto argmax = power_argmax_set(model, prompt, tol);
  Eigen::ArrayXd members(static_cast<Eigen::Index>(argmax.size()));
  for (std::size_t k = 0; k < argmax.size(); ++k) {
    members[static_cast<Eigen::Index>(k)] = powered[static_cast<Eigen::Index>(model.prefix_index(argmax[k].tokens))];
  }
  return std::exp(logsumexp(members) - logsumexp(powered));
}

std::vector<OddsPair> rank_reversal_scan(const ARModel& model, const PowerCache& cache,
                                         std::size_t prompt, std::span<const Token> prefix) {
  const auto& base = model.next_row(prompt, prefix);
  const double alpha = cache.alpha();
  const ProbRow pow = power_next_token(cache, model, prompt, prefix);
  const ProbRow temp = temp_next_token(base, alpha);

  // (1 - alpha) H_alpha of each token's suffix distribution, enumerated directly.
  const auto width = base.size();
  Eigen::ArrayXd scaled_entropy = Eigen::ArrayXd::Zero(width);
  std::vector<Token> extended(prefix.begin(), prefix.end());
  extended.push_back(0);
  for (Eigen::Index s = 0; s < width; ++s) {
    if (!(base.probs[s] > 0.0) || alpha == 1.0) continue;
    extended.back() = static_cast<Token>(s);
    scaled_entropy[s] =
        (1.0 - alpha) * renyi_entropy(suffix_distribution(model, prompt, extended), alpha);
  }

  std::vector<OddsPair> out;
  for (Eigen::Index a = 0; a < width; ++a) {
    if (!(base.probs[a] > 0.0)) continue;
    for (Eigen::Index b = a + 1; b < width; ++b) {
      if (!(base.probs[b] > 0.0)) continue;
      OddsPair pair{};
      pair.a = static_cast<Token>(a);
      pair.b = static_cast<Token>(b);
      pair.temp_log_odds = temp.log_probs[a] - temp.log_probs[b];
      pair.pow_log_odds = pow.log_probs[a] - pow.log_probs[b];
      pair.correction = scaled_entropy[a] - scaled_entropy[b];
      pair.reversed = (pair.temp_log_odds > 0.0 && pair.pow_log_odds < 0.0) ||
                      (pair.temp_log_odds < 0.0 && pair.pow_log_odds > 0.0);
      out.push_back(pair);
    }
  }
  return out;
}

}  // namespace powerlab
