#include "powerlab/ar_model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "powerlab/numeric.hpp"

namespace powerlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Eigen::ArrayXd safe_log(const Eigen::ArrayXd& p) {
  return p.unaryExpr([](double v) { return v > 0.0 ? std::log(v) : kNegInf; });
}

std::size_t checked_mul(std::size_t a, std::size_t b) {
  if (b != 0 && a > std::numeric_limits<std::size_t>::max() / b) {
    throw std::overflow_error("ARModel: prefix tree size overflows size_t");
  }
  return a * b;
}

}  // namespace

ProbRow ProbRow::from_probs(Eigen::ArrayXd probs, double tol) {
  if (probs.size() == 0) throw std::invalid_argument("ProbRow: empty row");
  if (!probs.allFinite() || (probs < 0.0).any()) {
    throw std::invalid_argument("ProbRow: entries must be finite and nonnegative");
  }
  const double total = probs.sum();
  if (std::abs(total - 1.0) > tol) {
    throw std::invalid_argument("ProbRow: entries sum to " + std::to_string(total));
  }
  // Rows already normalized to rounding are kept bit-exact so that
  // serialization round trips do not drift.
  if (std::abs(total - 1.0) > 1e-15 * static_cast<double>(probs.size())) probs /= total;
  ProbRow row;
  row.log_probs = safe_log(probs);
  row.probs = std::move(probs);
  return row;
}

ProbRow ProbRow::from_log_weights(const Eigen::Ref<const Eigen::ArrayXd>& log_weights) {
  ProbRow row;
  row.log_probs = log_normalize(log_weights);
  row.probs = row.log_probs.exp();
  return row;
}

ProbRow ProbRow::uniform(std::size_t size) {
  if (size == 0) throw std::invalid_argument("ProbRow::uniform: size must be positive");
  const auto n = static_cast<Eigen::Index>(size);
  ProbRow row;
  row.probs = Eigen::ArrayXd::Constant(n, 1.0 / static_cast<double>(size));
  row.log_probs = Eigen::ArrayXd::Constant(n, -std::log(static_cast<double>(size)));
  return row;
}

ProbRow ProbRow::from_counts(const Eigen::Ref<const Eigen::ArrayXd>& counts) {
  if (counts.size() == 0 || !counts.allFinite() || (counts < 0.0).any()) {
    throw std::invalid_argument("ProbRow::from_counts: counts must be finite and nonnegative");
  }
  const double total = counts.sum();
  if (!(total > 0.0)) throw std::invalid_argument("ProbRow::from_counts: no mass");
  ProbRow row;
  row.probs = counts / total;
  row.log_probs = safe_log(row.probs);
  return row;
}

ProbRow zipf_row(std::size_t vocab, double exponent) {
  if (vocab == 0) throw std::invalid_argument("zipf_row: vocabulary must be nonempty");
  if (!std::isfinite(exponent)) throw std::invalid_argument("zipf_row: exponent must be finite");
  const Eigen::ArrayXd ranks =
      Eigen::ArrayXd::LinSpaced(static_cast<Eigen::Index>(vocab), 1.0, static_cast<double>(vocab));
  const Eigen::ArrayXd weights = ranks.pow(-exponent);
  return ProbRow::from_probs(weights / weights.sum());
}

ProbRow powerlaw_suffix_row(std::size_t support, double s) {
  if (support == 0) throw std::invalid_argument("powerlaw_suffix_row: support must be nonempty");
  // Same shape as the Zipf row: z = 1..M plays the role of i + 1.
  return zipf_row(support, s);
}

double suffix_exponent(std::size_t token, std::size_t vocab) {
  if (vocab < 2 || token >= vocab) {
    throw std::invalid_argument("suffix_exponent: need 0 <= token < vocab and vocab >= 2");
  }
  const double i = static_cast<double>(token);
  const double v = static_cast<double>(vocab);
  const double trend = 2.0 * i / (v - 1.0) - 1.0;
  return 1.05 + 0.55 * std::sin(6.0 * std::numbers::pi * i / v) + 0.05 * trend;
}

PromptDist::PromptDist(Eigen::ArrayXd weights) : weights_(std::move(weights)) {
  if (weights_.size() == 0 || !weights_.allFinite() || (weights_ < 0.0).any() ||
      std::abs(weights_.sum() - 1.0) > 1e-12) {
    throw std::invalid_argument("PromptDist: weights must be nonnegative and sum to 1");
  }
}

PromptDist PromptDist::uniform(std::size_t prompts) {
  return PromptDist(ProbRow::uniform(prompts).probs);
}

// ---------------------------------------------------------------- ARModel

ARModel::ARModel(std::vector<std::size_t> vocab_sizes, std::vector<std::string> prompt_ids,
                 RowTable rows, std::string kind)
    : vocab_sizes_(std::move(vocab_sizes)),
      prompt_ids_(std::move(prompt_ids)),
      rows_(std::move(rows)),
      kind_(std::move(kind)) {
  if (vocab_sizes_.empty()) throw std::invalid_argument("ARModel: horizon must be positive");
  if (prompt_ids_.empty()) throw std::invalid_argument("ARModel: need at least one prompt");
  depth_sizes_.assign(vocab_sizes_.size() + 1, 1);
  for (std::size_t t = 0; t < vocab_sizes_.size(); ++t) {
    if (vocab_sizes_[t] == 0) throw std::invalid_argument("ARModel: vocabulary must be nonempty");
    depth_sizes_[t + 1] = checked_mul(depth_sizes_[t], vocab_sizes_[t]);
  }
  if (rows_.size() != prompt_ids_.size()) {
    throw std::invalid_argument("ARModel: one row table per prompt required");
  }
  for (const auto& per_prompt : rows_) {
    if (per_prompt.size() != horizon()) throw std::invalid_argument("ARModel: rows per depth");
    for (std::size_t t = 0; t < horizon(); ++t) {
      if (per_prompt[t].size() != depth_sizes_[t]) {
        throw std::invalid_argument("ARModel: depth " + std::to_string(t) + " needs " +
                                    std::to_string(depth_sizes_[t]) + " rows");
      }
      for (const auto& row : per_prompt[t]) {
        if (row.size() != static_cast<Eigen::Index>(vocab_sizes_[t]) ||
            row.log_probs.size() != row.size()) {
          throw std::invalid_argument("ARModel: row width differs from step vocabulary");
        }
      }
    }
  }
}

ARModel ARModel::from_function(std::vector<std::size_t> vocab_sizes, std::size_t prompts,
                               const RowFunction& row_fn, std::string kind) {
  std::vector<std::size_t> sizes(vocab_sizes.size() + 1, 1);
  for (std::size_t t = 0; t < vocab_sizes.size(); ++t) {
    sizes[t + 1] = checked_mul(sizes[t], vocab_sizes[t]);
  }
  RowTable rows(prompts);
  std::vector<std::string> ids(prompts);
  std::vector<Token> prefix;
  for (std::size_t x = 0; x < prompts; ++x) {
    ids[x] = std::to_string(x);
    rows[x].resize(vocab_sizes.size());
    for (std::size_t t = 0; t < vocab_sizes.size(); ++t) {
      rows[x][t].reserve(sizes[t]);
      prefix.assign(t, 0);
      for (std::size_t node = 0; node < sizes[t]; ++node) {
        std::size_t rest = node;
        for (std::size_t u = t; u-- > 0;) {
          prefix[u] = static_cast<Token>(rest % vocab_sizes[u]);
          rest /= vocab_sizes[u];
        }
        rows[x][t].push_back(row_fn(x, prefix));
      }
    }
  }
  return ARModel(std::move(vocab_sizes), std::move(ids), std::move(rows), std::move(kind));
}

std::size_t ARModel::node_count() const {
  std::size_t total = 0;
  for (auto n : depth_sizes_) {
    if (total > std::numeric_limits<std::size_t>::max() - n) {
      return std::numeric_limits<std::size_t>::max();
    }
    total += n;
  }
  return total;
}

std::size_t ARModel::prefix_index(std::span<const Token> prefix) const {
  if (prefix.size() > horizon()) throw std::invalid_argument("prefix longer than horizon");
  std::size_t node = 0;
  for (std::size_t t = 0; t < prefix.size(); ++t) {
    const auto tok = prefix[t];
    if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_sizes_[t]) {
      throw std::invalid_argument("token " + std::to_string(tok) + " out of range at step " +
                                  std::to_string(t));
    }
    node = node * vocab_sizes_[t] + static_cast<std::size_t>(tok);
  }
  return node;
}

std::vector<Token> ARModel::decode(std::size_t depth, std::size_t node) const {
  if (depth > horizon() || node >= depth_sizes_[depth]) {
    throw std::out_of_range("ARModel::decode: node out of range");
  }
  std::vector<Token> tokens(depth);
  for (std::size_t u = depth; u-- > 0;) {
    tokens[u] = static_cast<Token>(node % vocab_sizes_[u]);
    node /= vocab_sizes_[u];
  }
  return tokens;
}

const ProbRow& ARModel::row_at(std::size_t prompt, std::size_t depth, std::size_t node) const {
  return rows_.at(prompt).at(depth).at(node);
}

const ProbRow& ARModel::next_row(std::size_t prompt, std::span<const Token> prefix) const {
  if (prefix.size() >= horizon()) {
    throw std::invalid_argument("next_row: prefix must be shorter than the horizon");
  }
  return rows_.at(prompt)[prefix.size()][prefix_index(prefix)];
}

void ARModel::check_prefix(std::size_t prompt, std::span<const Token> prefix) const {
  if (prompt >= prompt_count()) {
    throw std::invalid_argument("prompt " + std::to_string(prompt) + " out of range");
  }
  (void)prefix_index(prefix);
}

void ARModel::check_sequence(const Sequence& y) const {
  if (y.tokens.size() != horizon()) {
    throw std::invalid_argument("sequence length " + std::to_string(y.tokens.size()) +
                                " != horizon " + std::to_string(horizon()));
  }
  check_prefix(y.prompt, y.tokens);
}

bool ARModel::is_valid(const Sequence& y) const {
  try {
    check_sequence(y);
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

// ------------------------------------------------------------- factories

ARModel uniform_model(std::vector<std::size_t> vocab_sizes, std::size_t prompts) {
  return ARModel::from_function(
      vocab_sizes, prompts,
      [&](std::size_t, std::span<const Token> prefix) {
        return ProbRow::uniform(vocab_sizes[prefix.size()]);
      },
      "uniform");
}

ARModel build_synthetic_two_step(std::size_t vocab, std::size_t suffix_support,
                                 double zipf_exponent) {
  if (vocab < 2) throw std::invalid_argument("build_synthetic_two_step: vocab must be >= 2");
  ProbRow first = zipf_row(vocab, zipf_exponent);
  std::vector<ProbRow> second;
  second.reserve(vocab);
  for (std::size_t i = 0; i < vocab; ++i) {
    second.push_back(powerlaw_suffix_row(suffix_support, suffix_exponent(i, vocab)));
  }
  ARModel::RowTable rows(1);
  rows[0].push_back({std::move(first)});
  rows[0].push_back(std::move(second));
  return ARModel({vocab, suffix_support}, {"0"}, std::move(rows), "synthetic_two_step");
}

ARModel random_dirichlet_model(std::vector<std::size_t> vocab_sizes, std::size_t prompts,
                               SeededRng& rng) {
  return ARModel::from_function(
      vocab_sizes, prompts,
      [&](std::size_t, std::span<const Token> prefix) {
        Eigen::ArrayXd w(static_cast<Eigen::Index>(vocab_sizes[prefix.size()]));
        for (auto& v : w) v = rng.exponential();
        return ProbRow::from_probs(w / w.sum());
      },
      "random_dirichlet");
}

ARModel random_logit_model(std::vector<std::size_t> vocab_sizes, std::size_t prompts,
                           double scale, SeededRng& rng) {
  if (!std::isfinite(scale)) throw std::invalid_argument("random_logit_model: scale must be finite");
  return ARModel::from_function(
      vocab_sizes, prompts,
      [&](std::size_t, std::span<const Token> prefix) {
        Eigen::ArrayXd logits(static_cast<Eigen::Index>(vocab_sizes[prefix.size()]));
        for (auto& v : logits) v = scale * rng.normal();
        return ProbRow::from_log_weights(logits);
      },
      "random_logit");
}

// ------------------------------------------------------------ operations

double seq_logprob(const ARModel& model, const Sequence& y) {
  model.check_sequence(y);
  double total = 0.0;
  std::size_t node = 0;
  for (std::size_t t = 0; t < model.horizon(); ++t) {
    const auto tok = static_cast<Eigen::Index>(y.tokens[t]);
    total += model.row_at(y.prompt, t, node).log_probs[tok];
    node = node * model.vocab_size(t) + static_cast<std::size_t>(tok);
  }
  return total;
}

double seq_logprob_per_token(const ARModel& model, const Sequence& y) {
  return seq_logprob(model, y) / static_cast<double>(model.horizon());
}

Sequence sample_sequence(const ARModel& model, std::size_t prompt, SeededRng& rng) {
  model.check_prefix(prompt, {});
  Sequence y{prompt, std::vector<Token>(model.horizon())};
  std::size_t node = 0;
  for (std::size_t t = 0; t < model.horizon(); ++t) {
    const auto tok = rng.categorical(model.row_at(prompt, t, node).probs);
    y.tokens[t] = static_cast<Token>(tok);
    node = node * model.vocab_size(t) + tok;
  }
  return y;
}

}  // namespace powerlab
