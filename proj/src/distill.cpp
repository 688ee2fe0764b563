#include "powerlab/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "parallel.hpp"
#include "powerlab/numeric.hpp"

namespace powerlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_positive_beta(double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("beta must be > 0");
}

void require_same_shape(const SequenceDist& q, const ARModel& model) {
  if (q.vocab_sizes() != model.vocab_sizes() || q.prompt_count() != model.prompt_count()) {
    throw std::invalid_argument("distribution shape does not match the model");
  }
}

}  // namespace

KLResult kl_divergence(const Eigen::Ref<const Eigen::ArrayXd>& log_p,
                       const Eigen::Ref<const Eigen::ArrayXd>& log_q) {
  if (log_p.size() != log_q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < log_p.size(); ++i) {
    if (std::isinf(log_p[i]) && log_p[i] < 0) continue;
    if (std::isinf(log_q[i]) && log_q[i] < 0) return {kInf, true};
    total += std::exp(log_p[i]) * (log_p[i] - log_q[i]);
  }
  return {total, false};
}

KLResult kl_divergence(const SequenceDist& p, const SequenceDist& q, std::size_t prompt) {
  return kl_divergence(p.log_probs(prompt), q.log_probs(prompt));
}

ObjectiveResult kl_rl_objective(const SequenceDist& q, const ARModel& model,
                                const RewardFn& reward, double beta, const PromptDist& mu) {
  require_positive_beta(beta);
  require_same_shape(q, model);
  if (mu.size() != model.prompt_count()) throw std::invalid_argument("mu size mismatch");
  double total = 0.0;
  for (std::size_t x = 0; x < model.prompt_count(); ++x) {
    const double weight = mu.weights()[static_cast<Eigen::Index>(x)];
    if (weight == 0.0) continue;
    const Eigen::ArrayXd base = enumerate_logprobs(model, x);
    const auto kl = kl_divergence(q.log_probs(x), base);
    if (kl.support_violation) return {-kInf, true};
    const Eigen::ArrayXd r = tabulate_reward(model, x, reward);
    const auto& lq = q.log_probs(x);
    double expected = 0.0;
    for (Eigen::Index i = 0; i < lq.size(); ++i) {
      if (std::isinf(lq[i]) && lq[i] < 0) continue;
      expected += std::exp(lq[i]) * r[i];
    }
    total += weight * (expected - beta * kl.value);
  }
  return {total, false};
}

TiltedPolicy tilted_policy(const ARModel& model, const RewardFn& reward, double beta) {
  require_positive_beta(beta);
  std::vector<Eigen::ArrayXd> per_prompt;
  std::vector<double> log_z;
  for (std::size_t x = 0; x < model.prompt_count(); ++x) {
    const Eigen::ArrayXd base = enumerate_logprobs(model, x);
    const Eigen::ArrayXd r = tabulate_reward(model, x, reward);
    Eigen::ArrayXd logw(base.size());
    for (Eigen::Index i = 0; i < base.size(); ++i) {
      // pi(y) = 0 stays at zero mass whatever the reward.
      logw[i] = std::isinf(base[i]) && base[i] < 0 ? -kInf : base[i] + r[i] / beta;
    }
    const double lz = logsumexp(logw);
    if (!std::isfinite(lz)) throw std::overflow_error("tilted_policy: normalizer is not finite");
    log_z.push_back(lz);
    per_prompt.push_back(logw - lz);
  }
  return {SequenceDist(model.vocab_sizes(), std::move(per_prompt)), std::move(log_z)};
}

double rl_kl_decomposition_check(const SequenceDist& q, const ARModel& model, double beta,
                                 std::size_t prompt) {
  require_positive_beta(beta);
  require_same_shape(q, model);
  const double alpha = 1.0 + 1.0 / beta;
  const Eigen::ArrayXd base = enumerate_logprobs(model, prompt);
  const Eigen::ArrayXd powered = log_normalize(alpha * base);
  const double log_z_r = logsumexp(base + base / beta);
  const auto& lq = q.log_probs(prompt);
  double expected_self = 0.0;
  for (Eigen::Index i = 0; i < lq.size(); ++i) {
    if (std::isinf(lq[i]) && lq[i] < 0) continue;
    expected_self += std::exp(lq[i]) * base[i];
  }
  const auto kl_base = kl_divergence(lq, base);
  const auto kl_power = kl_divergence(lq, powered);
  if (kl_base.support_violation || kl_power.support_violation) {
    throw std::invalid_argument("rl_kl_decomposition_check: q leaves the support of pi");
  }
  return expected_self - beta * kl_base.value + beta * kl_power.value - beta * log_z_r;
}

SequenceDist random_policy(const ARModel& shape, SeededRng& rng) {
  return base_sequence_dist(random_dirichlet_model(shape.vocab_sizes(), shape.prompt_count(), rng));
}

// ---------------------------------------------------------- distillation

std::string_view to_string(TeacherMode mode) {
  return mode == TeacherMode::Exact ? "exact" : "mh";
}

TeacherMode parse_teacher_mode(std::string_view name) {
  if (name == "exact") return TeacherMode::Exact;
  if (name == "mh") return TeacherMode::MH;
  throw std::invalid_argument("unknown teacher mode '" + std::string(name) + "'");
}

TeacherSampler::TeacherSampler(const ARModel& model, double alpha, TeacherConfig config)
    : model_(&model), alpha_(alpha), config_(config) {
  config_.mh.alpha = alpha;
  if (config_.mode == TeacherMode::MH) {
    config_.mh.validate(model.horizon());
    return;
  }
  const SequenceDist target = exact_power_dist(model, alpha);
  cdf_.resize(model.prompt_count());
  for (std::size_t x = 0; x < model.prompt_count(); ++x) {
    const Eigen::ArrayXd p = target.probs(x);
    cdf_[x].resize(static_cast<std::size_t>(p.size()));
    double acc = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) cdf_[x][static_cast<std::size_t>(i)] = acc += p[i];
  }
}

Sequence TeacherSampler::sample(std::size_t prompt, SeededRng& rng) const {
  if (config_.mode == TeacherMode::MH) {
    return mh_power_sample(*model_, config_.mh, prompt, rng).sequence;
  }
  const auto& cdf = cdf_.at(prompt);
  const double u = rng.uniform() * cdf.back();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  if (it == cdf.end()) --it;
  return {prompt, model_->decode_sequence(static_cast<std::size_t>(it - cdf.begin()))};
}

Sequence teacher_sample(const ARModel& model, double alpha, const TeacherConfig& config,
                        std::size_t prompt, SeededRng& rng) {
  return TeacherSampler(model, alpha, config).sample(prompt, rng);
}

DistillDataset collect_distill_dataset(const ARModel& model, double alpha, const PromptDist& mu,
                                       std::size_t n, const TeacherConfig& config,
                                       std::uint64_t seed, unsigned threads) {
  if (n == 0) throw std::invalid_argument("collect_distill_dataset: n must be >= 1");
  if (mu.size() != model.prompt_count()) throw std::invalid_argument("mu size mismatch");
  const TeacherSampler teacher(model, alpha, config);
  DistillDataset ds;
  ds.mode = config.mode;
  ds.teacher_alpha = alpha;
  ds.seed = seed;
  ds.records.resize(n);
  detail::parallel_for(n, threads, [&](std::size_t i) {
    SeededRng rng(derive_seed(seed, i));
    const std::size_t prompt = mu.sample(rng);
    ds.records[i] = teacher.sample(prompt, rng);
  });
  return ds;
}

void save_dataset(const DistillDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& y : dataset.records) {
    nlohmann::ordered_json line{{"prompt_id", y.prompt},
                                {"tokens", y.tokens},
                                {"teacher_alpha", dataset.teacher_alpha},
                                {"mode", to_string(dataset.mode)},
                                {"seed", dataset.seed}};
    out << line.dump() << '\n';
  }
}

DistillDataset load_dataset(const std::filesystem::path& path, const ARModel& shape) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  DistillDataset ds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      Sequence y{j.at("prompt_id").get<std::size_t>(), j.at("tokens").get<std::vector<Token>>()};
      shape.check_sequence(y);
      const auto mode = parse_teacher_mode(j.at("mode").get<std::string>());
      const auto alpha = j.at("teacher_alpha").get<double>();
      const auto seed = j.at("seed").get<std::uint64_t>();
      if (ds.records.empty()) {
        ds.mode = mode;
        ds.teacher_alpha = alpha;
        ds.seed = seed;
      } else if (mode != ds.mode || alpha != ds.teacher_alpha || seed != ds.seed) {
        throw std::invalid_argument("provenance differs from the first record");
      }
      ds.records.push_back(std::move(y));
    } catch (const std::exception& e) {
      throw std::invalid_argument(where + ": " + e.what());
    }
  }
  if (ds.records.empty()) throw std::invalid_argument(path.string() + ": dataset is empty");
  return ds;
}

TabularStudent fit_tabular_mle(const DistillDataset& dataset, const ARModel& base,
                               double epsilon) {
  if (dataset.records.empty()) throw std::invalid_argument("fit_tabular_mle: empty dataset");
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw std::invalid_argument("fit_tabular_mle: epsilon must be >= 0");
  }
  const std::size_t horizon = base.horizon();
  std::vector<std::vector<Eigen::ArrayXd>> counts(base.prompt_count());
  for (auto& per_prompt : counts) {
    for (std::size_t t = 0; t < horizon; ++t) {
      per_prompt.push_back(Eigen::ArrayXd::Zero(
          static_cast<Eigen::Index>(base.nodes_at_depth(t) * base.vocab_size(t))));
    }
  }
  for (const auto& y : dataset.records) {
    base.check_sequence(y);
    std::size_t node = 0;
    for (std::size_t t = 0; t < horizon; ++t) {
      const auto tok = static_cast<std::size_t>(y.tokens[t]);
      counts[y.prompt][t][static_cast<Eigen::Index>(node * base.vocab_size(t) + tok)] += 1.0;
      node = node * base.vocab_size(t) + tok;
    }
  }
  ARModel::RowTable rows(base.prompt_count());
  for (std::size_t x = 0; x < base.prompt_count(); ++x) {
    rows[x].resize(horizon);
    for (std::size_t t = 0; t < horizon; ++t) {
      const auto width = static_cast<Eigen::Index>(base.vocab_size(t));
      rows[x][t].reserve(base.nodes_at_depth(t));
      for (std::size_t node = 0; node < base.nodes_at_depth(t); ++node) {
        const Eigen::ArrayXd seg = counts[x][t].segment(static_cast<Eigen::Index>(node) * width, width);
        if (seg.sum() == 0.0 && epsilon == 0.0) {
          rows[x][t].push_back(base.row_at(x, t, node));
        } else {
          rows[x][t].push_back(ProbRow::from_counts(seg + epsilon));
        }
      }
    }
  }
  return {std::move(counts), epsilon,
          ARModel(base.vocab_sizes(), base.prompt_ids(), std::move(rows), "tabular_student")};
}

double sharpening_prob(const SequenceDist& dist, const ARModel& model, const PromptDist& mu,
                       double delta, double tol) {
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
  require_same_shape(dist, model);
  if (mu.size() != model.prompt_count()) throw std::invalid_argument("mu size mismatch");
  double prob = 0.0;
  for (std::size_t x = 0; x < model.prompt_count(); ++x) {
    double mass = 0.0;
    for (const auto& y : power_argmax_set(model, x, tol)) {
      mass += std::exp(dist.log_probs(x)[static_cast<Eigen::Index>(model.prefix_index(y.tokens))]);
    }
    if (mass <= 1.0 - delta) prob += mu.weights()[static_cast<Eigen::Index>(x)];
  }
  return prob;
}

double hellinger_sq(const Eigen::Ref<const Eigen::ArrayXd>& p,
                    const Eigen::Ref<const Eigen::ArrayXd>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("hellinger_sq: size mismatch");
  return (p.sqrt() - q.sqrt()).square().sum();
}

double mean_total_variation(const SequenceDist& p, const SequenceDist& q, const PromptDist& mu) {
  if (p.prompt_count() != q.prompt_count() || mu.size() != p.prompt_count()) {
    throw std::invalid_argument("mean_total_variation: prompt count mismatch");
  }
  double total = 0.0;
  for (std::size_t x = 0; x < p.prompt_count(); ++x) {
    total += mu.weights()[static_cast<Eigen::Index>(x)] * total_variation(p.probs(x), q.probs(x));
  }
  return total;
}

Sequence best_of_n_self_reward(const ARModel& model, const ARModel& scorer, std::size_t prompt,
                               std::size_t n, SeededRng& rng) {
  if (n == 0) throw std::invalid_argument("best_of_n_self_reward: N must be >= 1");
  Sequence best = sample_sequence(model, prompt, rng);
  double best_score = seq_logprob_per_token(scorer, best);
  for (std::size_t i = 1; i < n; ++i) {
    Sequence y = sample_sequence(model, prompt, rng);
    const double score = seq_logprob_per_token(scorer, y);
    if (score > best_score) {
      best_score = score;
      best = std::move(y);
    }
  }
  return best;
}

}  // namespace powerlab
