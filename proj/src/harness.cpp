#include "powerlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "parallel.hpp"
#include "powerlab/model_io.hpp"
#include "powerlab/numeric.hpp"
#include "powerlab/power_exact.hpp"
#include "powerlab/result_table.hpp"
#include "powerlab/rewards.hpp"

namespace powerlab::harness {

using nlohmann::json;

namespace {

// ------------------------------------------------------------ config reader

/// Typed access to one JSON object that remembers which keys were read, so
/// leftovers can be reported as unknown.
class Reader {
 public:
  Reader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError("type-mismatch", path_, "expected a JSON object");
  }

  std::string field(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  const json* find(std::string_view key) {
    used_.insert(std::string(key));
    auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  const json& require(std::string_view key) {
    const json* v = find(key);
    if (v == nullptr) throw ConfigError("missing-key", field(key), "required key is missing");
    return *v;
  }

  double number(std::string_view key, double fallback) {
    const json* v = find(key);
    return v == nullptr ? fallback : as_number(*v, field(key));
  }

  std::size_t count(std::string_view key, std::size_t fallback) {
    const json* v = find(key);
    return v == nullptr ? fallback : as_count(*v, field(key));
  }

  std::uint64_t u64(std::string_view key, std::uint64_t fallback) {
    return static_cast<std::uint64_t>(count(key, static_cast<std::size_t>(fallback)));
  }

  bool boolean(std::string_view key, bool fallback) {
    const json* v = find(key);
    if (v == nullptr) return fallback;
    if (!v->is_boolean()) throw ConfigError("type-mismatch", field(key), "expected true/false");
    return v->get<bool>();
  }

  std::string text(std::string_view key, std::string fallback) {
    const json* v = find(key);
    if (v == nullptr) return fallback;
    if (!v->is_string()) throw ConfigError("type-mismatch", field(key), "expected a string");
    return v->get<std::string>();
  }

  std::vector<double> numbers(std::string_view key, std::vector<double> fallback) {
    const json* v = find(key);
    if (v == nullptr) return fallback;
    const auto f = field(key);
    if (!v->is_array() || v->empty()) throw ConfigError("type-mismatch", f, "expected a non-empty array");
    std::vector<double> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      out.push_back(as_number((*v)[i], f + "[" + std::to_string(i) + "]"));
    }
    return out;
  }

  std::vector<std::size_t> counts(std::string_view key, std::vector<std::size_t> fallback) {
    const json* v = find(key);
    if (v == nullptr) return fallback;
    const auto f = field(key);
    if (!v->is_array() || v->empty()) throw ConfigError("type-mismatch", f, "expected a non-empty array");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      out.push_back(as_count((*v)[i], f + "[" + std::to_string(i) + "]"));
    }
    return out;
  }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!used_.contains(it.key())) throw ConfigError("unknown-key", field(it.key()), "unknown key");
    }
  }

  static double as_number(const json& v, const std::string& f) {
    if (!v.is_number()) throw ConfigError("type-mismatch", f, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError("invalid-value", f, "must be finite");
    return d;
  }

  static std::size_t as_count(const json& v, const std::string& f) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw ConfigError("type-mismatch", f, "expected a nonnegative integer");
    }
    return v.get<std::size_t>();
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string, std::less<>> used_;
};

void require_alpha(double alpha, const std::string& f) {
  if (!(alpha > 0.0)) throw ConfigError("alpha-nonpositive", f, "alpha must be > 0");
}

void require_alphas(const std::vector<double>& alphas, const std::string& f) {
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    require_alpha(alphas[i], f + "[" + std::to_string(i) + "]");
  }
}

void require_nonzero(std::size_t n, const std::string& f) {
  if (n == 0) throw ConfigError("n-zero", f, "must be >= 1");
}

void require_lambda(double lambda, const std::string& f) {
  if (!(lambda >= -1.0 && lambda <= 1.0)) {
    throw ConfigError("lambda-out-of-range", f, "lambda must lie in [-1, 1]");
  }
}

void require_block(std::size_t block, std::size_t horizon, const std::string& f) {
  const std::size_t b = block == 0 ? horizon : block;
  if (horizon % b != 0) {
    throw ConfigError("block-size-not-divisor", f,
                      "block size " + std::to_string(b) + " does not divide horizon " +
                          std::to_string(horizon));
  }
}

ModelSpec parse_model(const json* node, ModelSpec fallback) {
  if (node == nullptr) return fallback;
  Reader r(*node, "model");
  ModelSpec spec;
  spec.type = r.text("type", "synthetic_two_step");
  if (spec.type == "synthetic_two_step") {
    spec.vocab = r.count("vocab", 64);
    spec.suffix_support = r.count("suffix_support", 256);
    spec.zipf_exponent = r.number("zipf_exponent", 1.05);
    if (spec.vocab < 2) throw ConfigError("invalid-value", "model.vocab", "must be >= 2");
    require_nonzero(spec.suffix_support, "model.suffix_support");
  } else if (spec.type == "random_dirichlet" || spec.type == "random_logit" ||
             spec.type == "uniform") {
    spec.vocab_sizes = r.counts("vocab_sizes", {3, 3, 3, 3});
    for (std::size_t i = 0; i < spec.vocab_sizes.size(); ++i) {
      require_nonzero(spec.vocab_sizes[i], "model.vocab_sizes[" + std::to_string(i) + "]");
    }
    spec.prompts = r.count("prompts", 1);
    require_nonzero(spec.prompts, "model.prompts");
    if (spec.type != "uniform") spec.seed = r.u64("seed", 0);
    if (spec.type == "random_logit") spec.scale = r.number("scale", 1.0);
  } else if (spec.type == "file") {
    spec.path = r.text("path", "");
    if (spec.path.empty()) throw ConfigError("missing-key", "model.path", "file model needs a path");
  } else {
    throw ConfigError("invalid-value", "model.type", "unknown model type '" + spec.type + "'");
  }
  r.finish();
  return spec;
}

std::size_t model_horizon(const ModelSpec& spec) {
  if (spec.type == "synthetic_two_step") return 2;
  if (spec.type == "file") return spec.build().horizon();
  return spec.vocab_sizes.size();
}

ModelSpec tiny_model(std::uint64_t seed, std::size_t prompts = 1, double scale = 1.0,
                     std::vector<std::size_t> vocab_sizes = {3, 3, 3, 3}) {
  ModelSpec spec;
  spec.type = "random_logit";
  spec.vocab_sizes = std::move(vocab_sizes);
  spec.prompts = prompts;
  spec.scale = scale;
  spec.seed = seed;
  return spec;
}

MHConfig parse_mh(Reader& r, double alpha) {
  MHConfig cfg;
  cfg.alpha = alpha;
  cfg.block_size = r.count("block_size", 0);
  cfg.n_mcmc = r.count("n_mcmc", 10);
  require_nonzero(cfg.n_mcmc, r.field("n_mcmc"));
  cfg.proposal_temp = r.number("proposal_temp", 1.0 / alpha);
  if (!(cfg.proposal_temp > 0.0)) {
    throw ConfigError("invalid-value", r.field("proposal_temp"), "must be > 0");
  }
  return cfg;
}

}  // namespace

// ------------------------------------------------------------- ModelSpec

ARModel ModelSpec::build() const {
  if (type == "synthetic_two_step") return build_synthetic_two_step(vocab, suffix_support, zipf_exponent);
  if (type == "uniform") return uniform_model(vocab_sizes, prompts);
  if (type == "random_dirichlet") {
    SeededRng rng(seed);
    return random_dirichlet_model(vocab_sizes, prompts, rng);
  }
  if (type == "random_logit") {
    SeededRng rng(seed);
    return random_logit_model(vocab_sizes, prompts, scale, rng);
  }
  if (type == "file") {
    try {
      return load_model(path);
    } catch (const std::exception& e) {
      throw ConfigError("invalid-value", "model.path", e.what());
    }
  }
  throw ConfigError("invalid-value", "model.type", "unknown model type '" + type + "'");
}

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"synth-odds", "synth-sis",   "distill",
                                              "cov-sweep",  "mh-validate", "model-info"};
  return names;
}

RunConfig parse_run_config(const json& doc) {
  Reader r(doc, "");
  RunConfig cfg;
  const json& experiment = r.require("experiment");
  if (!experiment.is_string()) throw ConfigError("type-mismatch", "experiment", "expected a string");
  cfg.experiment = experiment.get<std::string>();
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), cfg.experiment) == names.end()) {
    throw ConfigError("unknown-experiment", "experiment", "unknown experiment '" + cfg.experiment + "'");
  }
  cfg.seed = r.u64("seed", 0);
  cfg.output_dir = r.text("output_dir", ".");
  const json* model = r.find("model");

  if (cfg.experiment == "synth-odds") {
    cfg.model = parse_model(model, ModelSpec{});
    SynthOddsParams p;
    p.alphas = r.numbers("alphas", p.alphas);
    require_alphas(p.alphas, "alphas");
    p.reversal_alpha = r.number("reversal_alpha", p.reversal_alpha);
    require_alpha(p.reversal_alpha, "reversal_alpha");
    p.tolerance = r.number("tolerance", p.tolerance);
    p.histogram_bins = r.count("histogram_bins", p.histogram_bins);
    require_nonzero(p.histogram_bins, "histogram_bins");
    p.prompt = r.count("prompt", 0);
    cfg.params = p;
  } else if (cfg.experiment == "synth-sis") {
    cfg.model = parse_model(model, ModelSpec{});
    SynthSisParams p;
    p.alphas = r.numbers("alphas", p.alphas);
    require_alphas(p.alphas, "alphas");
    if (const json* props = r.find("proposals")) {
      if (!props->is_array() || props->empty()) {
        throw ConfigError("type-mismatch", "proposals", "expected a non-empty array of names");
      }
      p.proposals.clear();
      for (std::size_t i = 0; i < props->size(); ++i) {
        const auto f = "proposals[" + std::to_string(i) + "]";
        if (!(*props)[i].is_string()) throw ConfigError("type-mismatch", f, "expected a string");
        try {
          p.proposals.push_back(parse_proposal_kind((*props)[i].get<std::string>()));
        } catch (const std::invalid_argument& e) {
          throw ConfigError("invalid-value", f, e.what());
        }
      }
    }
    if (const json* mc = r.find("monte_carlo")) {
      Reader m(*mc, "monte_carlo");
      p.mc_alpha = m.number("alpha", p.mc_alpha);
      require_alpha(p.mc_alpha, "monte_carlo.alpha");
      p.mc_n = m.counts("n", p.mc_n);
      for (std::size_t i = 0; i < p.mc_n.size(); ++i) {
        if (p.mc_n[i] < 2) throw ConfigError("n-zero", "monte_carlo.n[" + std::to_string(i) + "]", "must be >= 2");
      }
      p.mc_reps = m.count("reps", p.mc_reps);
      require_nonzero(p.mc_reps, "monte_carlo.reps");
      m.finish();
    }
    p.prompt = r.count("prompt", 0);
    cfg.params = p;
  } else if (cfg.experiment == "distill") {
    cfg.model = parse_model(model, tiny_model(6, 3, 2.0));
    DistillParams p;
    p.alpha = r.number("alpha", p.alpha);
    require_alpha(p.alpha, "alpha");
    p.n_grid = r.counts("n_grid", p.n_grid);
    for (std::size_t i = 0; i < p.n_grid.size(); ++i) require_nonzero(p.n_grid[i], "n_grid[" + std::to_string(i) + "]");
    if (const json* seeds = r.find("seeds")) {
      if (!seeds->is_array() || seeds->empty()) throw ConfigError("type-mismatch", "seeds", "expected a non-empty array");
      p.seeds.clear();
      for (std::size_t i = 0; i < seeds->size(); ++i) {
        p.seeds.push_back(Reader::as_count((*seeds)[i], "seeds[" + std::to_string(i) + "]"));
      }
    }
    if (const json* teacher = r.find("teacher")) {
      Reader t(*teacher, "teacher");
      try {
        p.teacher.mode = parse_teacher_mode(t.text("mode", "exact"));
      } catch (const std::invalid_argument& e) {
        throw ConfigError("invalid-value", "teacher.mode", e.what());
      }
      if (const json* mh = t.find("mh")) {
        Reader m(*mh, "teacher.mh");
        p.teacher.mh = parse_mh(m, p.alpha);
        m.finish();
      } else {
        p.teacher.mh = MHConfig{.alpha = p.alpha, .block_size = 0, .n_mcmc = 10,
                                .proposal_temp = 1.0 / p.alpha};
      }
      t.finish();
      require_block(p.teacher.mh.block_size, model_horizon(cfg.model), "teacher.mh.block_size");
    }
    p.epsilon = r.number("epsilon", p.epsilon);
    if (p.epsilon < 0.0) throw ConfigError("invalid-value", "epsilon", "must be >= 0");
    p.delta = r.number("delta", p.delta);
    if (!(p.delta > 0.0 && p.delta < 1.0)) throw ConfigError("invalid-value", "delta", "must lie in (0, 1)");
    p.sharpening_alphas = r.numbers("sharpening_alphas", p.sharpening_alphas);
    require_alphas(p.sharpening_alphas, "sharpening_alphas");
    if (const json* reward = r.find("reward")) {
      Reader rw(*reward, "reward");
      p.reward_lambda = rw.number("lambda", p.reward_lambda);
      require_lambda(p.reward_lambda, "reward.lambda");
      p.reward_sigma = rw.number("sigma", p.reward_sigma);
      if (p.reward_sigma < 0.0) throw ConfigError("invalid-value", "reward.sigma", "must be >= 0");
      p.reward_seed = rw.u64("seed", p.reward_seed);
      rw.finish();
    }
    p.tv_threshold = r.number("tv_threshold", p.tv_threshold);
    p.allowed_inversions = r.count("allowed_inversions", p.allowed_inversions);
    p.save_artifacts = r.boolean("save_artifacts", p.save_artifacts);
    cfg.params = p;
  } else if (cfg.experiment == "cov-sweep") {
    cfg.model = parse_model(model, tiny_model(5, 1, 1.0, {4, 4, 4}));
    CovSweepParams p;
    p.alpha = r.number("alpha", p.alpha);
    require_alpha(p.alpha, "alpha");
    p.lambdas = r.numbers("lambdas", p.lambdas);
    for (std::size_t i = 0; i < p.lambdas.size(); ++i) require_lambda(p.lambdas[i], "lambdas[" + std::to_string(i) + "]");
    p.sigma = r.number("sigma", p.sigma);
    if (p.sigma < 0.0) throw ConfigError("invalid-value", "sigma", "must be >= 0");
    p.reward_seed = r.u64("reward_seed", p.reward_seed);
    if (const json* d = r.find("derivative")) {
      Reader dr(*d, "derivative");
      p.derivative_alphas = dr.numbers("alphas", p.derivative_alphas);
      p.h = dr.number("h", p.h);
      if (!(p.h > 0.0)) throw ConfigError("invalid-value", "derivative.h", "must be > 0");
      for (std::size_t i = 0; i < p.derivative_alphas.size(); ++i) {
        const auto f = "derivative.alphas[" + std::to_string(i) + "]";
        require_alpha(p.derivative_alphas[i], f);
        if (!(p.derivative_alphas[i] - p.h > 0.0)) throw ConfigError("alpha-nonpositive", f, "alpha - h must be > 0");
      }
      p.random_rewards = dr.count("random_rewards", p.random_rewards);
      p.rel_err_threshold = dr.number("rel_err_threshold", p.rel_err_threshold);
      dr.finish();
    }
    p.spearman_threshold = r.number("spearman_threshold", p.spearman_threshold);
    p.prompt = r.count("prompt", 0);
    cfg.params = p;
  } else if (cfg.experiment == "mh-validate") {
    cfg.model = parse_model(model, tiny_model(3));
    MhValidateParams p;
    p.alpha = r.number("alpha", p.alpha);
    require_alpha(p.alpha, "alpha");
    p.chains = r.count("chains", p.chains);
    require_nonzero(p.chains, "chains");
    p.n_mcmc_schedule = r.counts("n_mcmc_schedule", p.n_mcmc_schedule);
    for (std::size_t i = 0; i < p.n_mcmc_schedule.size(); ++i) {
      require_nonzero(p.n_mcmc_schedule[i], "n_mcmc_schedule[" + std::to_string(i) + "]");
    }
    p.block_size = r.count("block_size", 0);
    require_block(p.block_size, model_horizon(cfg.model), "block_size");
    if (const json* tau = r.find("proposal_temp")) {
      p.proposal_temp = Reader::as_number(*tau, "proposal_temp");
      if (!(*p.proposal_temp > 0.0)) throw ConfigError("invalid-value", "proposal_temp", "must be > 0");
    }
    p.tv_threshold = r.number("tv_threshold", p.tv_threshold);
    p.power_inf_chains = r.count("power_inf_chains", p.power_inf_chains);
    require_nonzero(p.power_inf_chains, "power_inf_chains");
    p.unit_chains = r.count("unit_chains", p.unit_chains);
    require_nonzero(p.unit_chains, "unit_chains");
    p.trace = r.boolean("trace", p.trace);
    p.prompt = r.count("prompt", 0);
    cfg.params = p;
  } else {
    cfg.model = parse_model(model, ModelSpec{});
    ModelInfoParams p;
    p.alphas = r.numbers("alphas", p.alphas);
    require_alphas(p.alphas, "alphas");
    cfg.params = p;
  }
  r.finish();
  return cfg;
}

json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("io-error", "", "cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const auto upto = text.substr(0, std::min<std::size_t>(e.byte, text.size()));
    const auto line = 1 + std::count(upto.begin(), upto.end(), '\n');
    throw ConfigError("parse-error", "", path.string() + ":" + std::to_string(line) + ": " + e.what());
  }
}

unsigned threads_from_env() {
  if (const char* env = std::getenv("POWERLAB_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

// ------------------------------------------------------------ experiments

namespace {

struct Context {
  const RunConfig& config;
  std::filesystem::path out;
  std::uint64_t seed;
  unsigned threads;
  RunReport& report;

  void write(const ResultTable& table) const {
    const auto path = out / (table.name() + ".csv");
    table.write_csv(path);
    report.files.push_back(path);
  }
};

std::string fmt(double v) { return format_double(v); }

void check_prompt(const ARModel& model, std::size_t prompt) {
  if (prompt >= model.prompt_count()) {
    throw ConfigError("invalid-value", "prompt", "prompt index out of range for the model");
  }
}

bool same_sign(double a, double b, double zero_tol) {
  const int sa = std::abs(a) <= zero_tol ? 0 : (a > 0 ? 1 : -1);
  const int sb = std::abs(b) <= zero_tol ? 0 : (b > 0 ? 1 : -1);
  return sa == sb;
}

void run_synth_odds(const Context& ctx, const SynthOddsParams& p) {
  const ARModel model = ctx.config.model.build();
  check_prompt(model, p.prompt);
  const ProbRow& root = model.next_row(p.prompt, {});

  ResultTable odds("odds_identity", {"alpha", "a", "b", "closed_form", "renyi_predicted", "abs_diff"});
  double max_diff = 0.0;
  for (double alpha : p.alphas) {
    const PowerCache cache = build_power_cache(model, alpha);
    for (Eigen::Index a = 0; a < root.size(); ++a) {
      if (!(root.probs[a] > 0.0)) continue;
      for (Eigen::Index b = a + 1; b < root.size(); ++b) {
        if (!(root.probs[b] > 0.0)) continue;
        const auto oc = odds_correction(model, cache, p.prompt, {}, static_cast<Token>(a),
                                        static_cast<Token>(b));
        const double diff = std::abs(oc.closed_form - oc.renyi_predicted);
        max_diff = std::max(max_diff, diff);
        odds.add_row({alpha, std::int64_t{a}, std::int64_t{b}, oc.closed_form, oc.renyi_predicted, diff});
      }
    }
  }
  ctx.write(odds);

  const PowerCache cache = build_power_cache(model, p.reversal_alpha);
  const auto pairs = rank_reversal_scan(model, cache, p.prompt);
  ResultTable reversals("rank_reversals", {"alpha", "a", "b", "temp_log_odds", "pow_log_odds",
                                           "correction", "reversed"});
  std::size_t reversed = 0;
  double max_inconsistency = 0.0;
  std::vector<double> corrections;
  for (const auto& pr : pairs) {
    reversals.add_row({p.reversal_alpha, std::int64_t{pr.a}, std::int64_t{pr.b}, pr.temp_log_odds,
                       pr.pow_log_odds, pr.correction, std::int64_t{pr.reversed ? 1 : 0}});
    reversed += pr.reversed ? 1 : 0;
    max_inconsistency =
        std::max(max_inconsistency, std::abs(pr.pow_log_odds - (pr.temp_log_odds + pr.correction)));
    corrections.push_back(pr.pow_log_odds - pr.temp_log_odds);
  }
  ctx.write(reversals);

  ResultTable hist("correction_histogram", {"alpha", "bin_lo", "bin_hi", "count"});
  if (!corrections.empty()) {
    const auto [lo_it, hi_it] = std::minmax_element(corrections.begin(), corrections.end());
    const double lo = *lo_it;
    const double width = (*hi_it - lo) / static_cast<double>(p.histogram_bins);
    std::vector<std::int64_t> bins(p.histogram_bins, 0);
    for (double c : corrections) {
      std::size_t k = width > 0.0 ? static_cast<std::size_t>((c - lo) / width) : 0;
      ++bins[std::min(k, p.histogram_bins - 1)];
    }
    for (std::size_t k = 0; k < p.histogram_bins; ++k) {
      hist.add_row({p.reversal_alpha, lo + width * static_cast<double>(k),
                    lo + width * static_cast<double>(k + 1), bins[k]});
    }
  }
  ctx.write(hist);

  ctx.report.summary.push_back("pairs per alpha: " + std::to_string(pairs.size()));
  ctx.report.summary.push_back("max |closed_form - renyi_predicted| = " + fmt(max_diff));
  ctx.report.summary.push_back("rank reversals at alpha=" + fmt(p.reversal_alpha) + ": " +
                               std::to_string(reversed));
  if (max_diff > p.tolerance) {
    ctx.report.failures.push_back("odds identity residual " + fmt(max_diff) + " exceeds " + fmt(p.tolerance));
  }
  if (max_inconsistency > p.tolerance) {
    ctx.report.failures.push_back("pow_log_odds != temp_log_odds + correction (max " +
                                  fmt(max_inconsistency) + ")");
  }
}

void run_synth_sis(const Context& ctx, const SynthSisParams& p) {
  const ARModel model = ctx.config.model.build();
  check_prompt(model, p.prompt);

  ResultTable exact("sis_exact", {"proposal", "alpha", "mean_weight", "cv2", "ess_frac"});
  std::vector<double> sorted_alphas = p.alphas;
  std::sort(sorted_alphas.begin(), sorted_alphas.end());
  std::vector<double> temperature_ess;
  for (double alpha : sorted_alphas) {
    const PowerCache cache = build_power_cache(model, alpha);
    const ProbRow target = power_next_token(cache, model, p.prompt, {});
    for (auto kind : p.proposals) {
      const ProbRow q = one_step_proposal(kind, model, &cache, alpha, p.prompt, {});
      const auto e = ess_exact(target, q);
      exact.add_row({std::string(to_string(kind)), alpha, e.mean_weight, e.cv2, e.ess_frac});
      if (kind == ProposalKind::Oracle && (e.cv2 > 1e-20 || e.ess_frac != 1.0)) {
        ctx.report.failures.push_back("oracle proposal not zero-variance at alpha=" + fmt(alpha) +
                                      " (cv2=" + fmt(e.cv2) + ")");
      }
      if (kind == ProposalKind::Temperature) temperature_ess.push_back(e.ess_frac);
    }
  }
  ctx.write(exact);
  if (count_increases(temperature_ess) > 0) {
    ctx.report.failures.push_back("temperature-proposal ESS/N increases somewhere on the alpha grid");
  }

  const PowerCache cache = build_power_cache(model, p.mc_alpha);
  const ProbRow target = power_next_token(cache, model, p.prompt, {});
  struct Job {
    ProposalKind kind;
    std::size_t n;
    EssMonteCarlo result{};
  };
  std::vector<Job> jobs;
  for (auto kind : p.proposals) {
    for (auto n : p.mc_n) jobs.push_back({kind, n});
  }
  detail::parallel_for(jobs.size(), ctx.threads, [&](std::size_t j) {
    SeededRng rng(derive_seed(ctx.seed, j));
    const ProbRow q = one_step_proposal(jobs[j].kind, model, &cache, p.mc_alpha, p.prompt, {});
    jobs[j].result = ess_monte_carlo(target, q, jobs[j].n, p.mc_reps, rng);
  });
  ResultTable mc("sis_monte_carlo", {"proposal", "alpha", "n", "reps", "mean_ess_frac",
                                     "std_ess_frac", "exact_ess_frac"});
  for (const auto& job : jobs) {
    const ProbRow q = one_step_proposal(job.kind, model, &cache, p.mc_alpha, p.prompt, {});
    const double exact_frac = ess_exact(target, q).ess_frac;
    mc.add_row({std::string(to_string(job.kind)), p.mc_alpha, static_cast<std::int64_t>(job.n),
                static_cast<std::int64_t>(p.mc_reps), job.result.mean_ess_frac,
                job.result.std_ess_frac, exact_frac});
    if (std::abs(job.result.mean_ess_frac - exact_frac) > 3.0 * job.result.std_ess_frac) {
      ctx.report.failures.push_back("Monte Carlo ESS for " + std::string(to_string(job.kind)) +
                                    " at N=" + std::to_string(job.n) + " is " +
                                    fmt(job.result.mean_ess_frac) + ", exact " + fmt(exact_frac));
    }
  }
  ctx.write(mc);
  ctx.report.summary.push_back("exact rows: " + std::to_string(exact.size()) +
                               ", Monte Carlo rows: " + std::to_string(mc.size()));
}

// Sum over prompts of mu(x) * sum_y dist(y|x) * table_x(y), skipping zero mass.
double mean_under(const SequenceDist& dist, const std::vector<Eigen::ArrayXd>& tables,
                  const PromptDist& mu) {
  double total = 0.0;
  for (std::size_t x = 0; x < dist.prompt_count(); ++x) {
    const auto& lp = dist.log_probs(x);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < lp.size(); ++i) {
      if (std::isinf(lp[i])) continue;
      acc += std::exp(lp[i]) * tables[x][i];
    }
    total += mu.weights()[static_cast<Eigen::Index>(x)] * acc;
  }
  return total;
}

void run_distill(const Context& ctx, const DistillParams& p) {
  const ARModel model = ctx.config.model.build();
  const PromptDist mu = PromptDist::uniform(model.prompt_count());
  const SequenceDist base = base_sequence_dist(model);
  const SequenceDist teacher = exact_power_dist(model, p.alpha);

  std::vector<Eigen::ArrayXd> self_tables;
  std::vector<Eigen::ArrayXd> true_tables;
  for (std::size_t x = 0; x < model.prompt_count(); ++x) {
    Eigen::ArrayXd self = enumerate_logprobs(model, x) / static_cast<double>(model.horizon());
    self = self.unaryExpr([](double v) { return std::isfinite(v) ? v : 0.0; });
    self_tables.push_back(self);
    SyntheticRewardSpec spec{p.reward_lambda, p.reward_sigma, p.reward_seed, exact_reward_stats(model, x)};
    true_tables.push_back(tabulate_reward(model, x, synthetic_reward_fn(spec, model)));
  }
  const double self_base = mean_under(base, self_tables, mu);
  const double self_power = mean_under(teacher, self_tables, mu);
  const double true_base = mean_under(base, true_tables, mu);
  const double true_power = mean_under(teacher, true_tables, mu);

  std::vector<std::size_t> grid = p.n_grid;
  std::sort(grid.begin(), grid.end());
  ResultTable table("distill", {"seed", "n", "tv_student", "hellinger_sq_student", "sharpening_prob",
                                "r_self_student", "r_self_base", "r_self_power", "rstar_student",
                                "rstar_base", "rstar_power"});
  std::size_t tv_inversions = 0;
  std::size_t sharp_inversions = 0;
  for (auto seed_value : p.seeds) {
    std::vector<double> tvs;
    std::vector<double> sharps;
    for (auto n : grid) {
      const std::uint64_t ds_seed = derive_seed(derive_seed(ctx.seed, seed_value), n);
      const auto dataset = collect_distill_dataset(model, p.alpha, mu, n, p.teacher, ds_seed, ctx.threads);
      const auto student = fit_tabular_mle(dataset, model, p.epsilon);
      const SequenceDist learned = base_sequence_dist(student.model);
      const double tv = mean_total_variation(learned, teacher, mu);
      double hell = 0.0;
      for (std::size_t x = 0; x < model.prompt_count(); ++x) {
        hell += mu.weights()[static_cast<Eigen::Index>(x)] * hellinger_sq(learned.probs(x), teacher.probs(x));
      }
      const double sharp = sharpening_prob(learned, model, mu, p.delta);
      tvs.push_back(tv);
      sharps.push_back(sharp);
      table.add_row({static_cast<std::int64_t>(seed_value), static_cast<std::int64_t>(n), tv, hell, sharp,
                     mean_under(learned, self_tables, mu), self_base, self_power,
                     mean_under(learned, true_tables, mu), true_base, true_power});
      if (p.save_artifacts) {
        const auto stem = "seed" + std::to_string(seed_value) + "_n" + std::to_string(n);
        const auto ds_path = ctx.out / ("dataset_" + stem + ".jsonl");
        const auto st_path = ctx.out / ("student_" + stem + ".json");
        save_dataset(dataset, ds_path);
        save_model(student.model, st_path);
        ctx.report.files.push_back(ds_path);
        ctx.report.files.push_back(st_path);
      }
    }
    tv_inversions += count_increases(tvs);
    sharp_inversions += count_increases(sharps);
    if (tvs.back() > p.tv_threshold) {
      ctx.report.failures.push_back("TV(student, teacher) at n=" + std::to_string(grid.back()) +
                                    " is " + fmt(tvs.back()) + " > " + fmt(p.tv_threshold));
    }
  }
  ctx.write(table);
  if (tv_inversions > p.allowed_inversions) {
    ctx.report.failures.push_back("TV profile has " + std::to_string(tv_inversions) + " inversions");
  }
  if (sharp_inversions > p.allowed_inversions) {
    ctx.report.failures.push_back("sharpening profile has " + std::to_string(sharp_inversions) + " inversions");
  }

  std::vector<double> alphas = p.sharpening_alphas;
  std::sort(alphas.begin(), alphas.end());
  ResultTable sharpening("sharpening_alpha", {"alpha", "sharpening_prob", "mass_on_argmax"});
  std::vector<double> sharp_by_alpha;
  for (double a : alphas) {
    const double sp = sharpening_prob(exact_power_dist(model, a), model, mu, p.delta);
    double mass = 0.0;
    for (std::size_t x = 0; x < model.prompt_count(); ++x) {
      mass += mu.weights()[static_cast<Eigen::Index>(x)] * power_mass_on_argmax(model, a, x);
    }
    sharp_by_alpha.push_back(sp);
    sharpening.add_row({a, sp, mass});
  }
  ctx.write(sharpening);
  if (count_increases(sharp_by_alpha) > 0) {
    ctx.report.failures.push_back("teacher sharpening probability increases with alpha");
  }
  ctx.report.summary.push_back("TV inversions: " + std::to_string(tv_inversions) +
                               ", sharpening inversions: " + std::to_string(sharp_inversions));
  ctx.report.summary.push_back("teacher sharpening_prob at alpha=" + fmt(alphas.back()) + ": " +
                               fmt(sharp_by_alpha.back()));
}

void run_cov_sweep(const Context& ctx, const CovSweepParams& p) {
  const ARModel model = ctx.config.model.build();
  check_prompt(model, p.prompt);
  SyntheticRewardSpec spec{0.0, p.sigma, p.reward_seed, exact_reward_stats(model, p.prompt)};
  const ResultTable sweep = covariance_gain_sweep(model, p.alpha, p.lambdas, spec, p.prompt);
  ctx.write(sweep);

  std::vector<double> gains;
  std::vector<double> integrated;
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    gains.push_back(sweep.number(i, "gain"));
    integrated.push_back(sweep.number(i, "integrated_cov"));
    if (!same_sign(gains.back(), integrated.back(), 1e-12)) {
      ctx.report.failures.push_back("sign(gain) != sign(integrated covariance) at lambda=" +
                                    fmt(sweep.number(i, "lambda")));
    }
  }
  if (gains.size() >= 2) {
    const double rho = spearman(gains, integrated);
    ctx.report.summary.push_back("Spearman(gain, integrated_cov) = " + fmt(rho));
    if (!(rho > p.spearman_threshold)) {
      ctx.report.failures.push_back("Spearman correlation " + fmt(rho) + " <= " + fmt(p.spearman_threshold));
    }
  }

  // Derivative identity on r_self and on seeded random rewards.
  std::vector<std::pair<std::string, RewardFn>> rewards;
  rewards.emplace_back("r_self", self_reward(model));
  std::vector<Eigen::ArrayXd> random_tables;
  for (std::size_t k = 0; k < p.random_rewards; ++k) {
    SeededRng rng(derive_seed(ctx.seed, k));
    Eigen::ArrayXd values(static_cast<Eigen::Index>(model.sequence_count()));
    for (auto& v : values) v = rng.normal();
    random_tables.push_back(std::move(values));
  }
  for (std::size_t k = 0; k < random_tables.size(); ++k) {
    const Eigen::ArrayXd* table = &random_tables[k];
    rewards.emplace_back("random_" + std::to_string(k), [table, &model](const Sequence& y) {
      return (*table)[static_cast<Eigen::Index>(model.prefix_index(y.tokens))];
    });
  }
  std::vector<double> alphas = p.derivative_alphas;
  std::sort(alphas.begin(), alphas.end());
  ResultTable deriv("derivative_check", {"alpha", "reward", "cov_value", "fd_estimate", "rel_err"});
  double worst = 0.0;
  for (const auto& [name, reward] : rewards) {
    for (double a : alphas) {
      const auto d = reward_derivative_check(model, a, reward, p.prompt, p.h);
      worst = std::max(worst, d.rel_err);
      deriv.add_row({a, name, d.cov_value, d.fd_estimate, d.rel_err});
    }
  }
  ctx.write(deriv);
  ctx.report.summary.push_back("max derivative rel_err = " + fmt(worst));
  if (worst > p.rel_err_threshold) {
    ctx.report.failures.push_back("derivative check rel_err " + fmt(worst) + " > " + fmt(p.rel_err_threshold));
  }
  std::vector<double> r_self_curve;
  const RewardFn self = self_reward(model);
  for (double a : alphas) r_self_curve.push_back(-reward_expectation(model, a, self, p.prompt));
  if (count_increases(r_self_curve) > 0) {
    ctx.report.failures.push_back("R(alpha) for r_self decreases on the alpha grid");
  }
}

void run_mh_validate(const Context& ctx, const MhValidateParams& p) {
  const ARModel model = ctx.config.model.build();
  check_prompt(model, p.prompt);
  const Eigen::ArrayXd target = exact_power_dist(model, p.alpha).probs(p.prompt);
  const double tau = p.proposal_temp.value_or(1.0 / p.alpha);

  ResultTable tv_table("mh_tv", {"n_mcmc", "chains", "tv", "acceptance_rate"});
  std::vector<double> tvs;
  MHTrace first_trace;
  for (std::size_t s = 0; s < p.n_mcmc_schedule.size(); ++s) {
    const MHConfig cfg{p.alpha, p.block_size, p.n_mcmc_schedule[s], tau};
    const std::uint64_t schedule_seed = derive_seed(ctx.seed, s);
    std::vector<std::size_t> leaf(p.chains);
    std::vector<std::size_t> accepted(p.chains);
    std::vector<std::size_t> proposed(p.chains);
    detail::parallel_for(p.chains, ctx.threads, [&](std::size_t c) {
      SeededRng rng(derive_seed(schedule_seed, c));
      auto res = mh_power_sample(model, cfg, p.prompt, rng);
      leaf[c] = model.prefix_index(res.sequence.tokens);
      accepted[c] = res.trace.accepted;
      proposed[c] = res.trace.proposed;
      if (c == 0 && s + 1 == p.n_mcmc_schedule.size()) first_trace = std::move(res.trace);
    });
    Eigen::ArrayXd empirical = Eigen::ArrayXd::Zero(target.size());
    std::size_t acc = 0;
    std::size_t prop = 0;
    for (std::size_t c = 0; c < p.chains; ++c) {
      empirical[static_cast<Eigen::Index>(leaf[c])] += 1.0;
      acc += accepted[c];
      prop += proposed[c];
    }
    empirical /= static_cast<double>(p.chains);
    const double tv = total_variation(empirical, target);
    tvs.push_back(tv);
    tv_table.add_row({static_cast<std::int64_t>(cfg.n_mcmc), static_cast<std::int64_t>(p.chains), tv,
                      prop == 0 ? 1.0 : static_cast<double>(acc) / static_cast<double>(prop)});
  }
  ctx.write(tv_table);
  if (tvs.back() > p.tv_threshold) {
    ctx.report.failures.push_back("TV at the largest budget is " + fmt(tvs.back()) + " > " + fmt(p.tv_threshold));
  }

  // Power(infinity): monotone traces and concentration relative to base sampling.
  const std::size_t largest = *std::max_element(p.n_mcmc_schedule.begin(), p.n_mcmc_schedule.end());
  const MHConfig greedy_cfg{p.alpha, p.block_size, largest, tau};
  std::set<std::size_t> argmax;
  for (const auto& y : power_argmax_set(model, p.prompt)) argmax.insert(model.prefix_index(y.tokens));
  std::vector<std::size_t> violations(p.power_inf_chains);
  std::vector<double> inf_lp(p.power_inf_chains);
  std::vector<double> base_lp(p.power_inf_chains);
  std::vector<int> inf_hit(p.power_inf_chains);
  std::vector<int> base_hit(p.power_inf_chains);
  const std::uint64_t inf_seed = derive_seed(ctx.seed, 1000 + p.n_mcmc_schedule.size());
  const std::uint64_t base_seed = derive_seed(ctx.seed, 2000 + p.n_mcmc_schedule.size());
  detail::parallel_for(p.power_inf_chains, ctx.threads, [&](std::size_t c) {
    SeededRng rng(derive_seed(inf_seed, c));
    const auto res = power_inf_sample(model, greedy_cfg, p.prompt, rng);
    violations[c] = res.trace.monotonicity_violations();
    inf_lp[c] = seq_logprob(model, res.sequence);
    inf_hit[c] = argmax.contains(model.prefix_index(res.sequence.tokens)) ? 1 : 0;
    SeededRng base_rng(derive_seed(base_seed, c));
    const auto y = sample_sequence(model, p.prompt, base_rng);
    base_lp[c] = seq_logprob(model, y);
    base_hit[c] = argmax.contains(model.prefix_index(y.tokens)) ? 1 : 0;
  });
  std::size_t total_violations = 0;
  double inf_sum = 0.0, base_sum = 0.0, inf_hits = 0.0, base_hits = 0.0;
  for (std::size_t c = 0; c < p.power_inf_chains; ++c) {
    total_violations += violations[c];
    inf_sum += inf_lp[c];
    base_sum += base_lp[c];
    inf_hits += inf_hit[c];
    base_hits += base_hit[c];
  }
  const double chains = static_cast<double>(p.power_inf_chains);
  ResultTable inf_table("power_inf", {"chains", "violations", "mean_logprob", "base_mean_logprob",
                                      "argmax_rate", "base_argmax_rate"});
  inf_table.add_row({static_cast<std::int64_t>(p.power_inf_chains), static_cast<std::int64_t>(total_violations),
                     inf_sum / chains, base_sum / chains, inf_hits / chains, base_hits / chains});
  ctx.write(inf_table);
  if (total_violations != 0) {
    ctx.report.failures.push_back("Power(inf) traces have " + std::to_string(total_violations) +
                                  " monotonicity violations");
  }

  // alpha = 1 with tau = 1 proposes from the target itself.
  const MHConfig unit_cfg{1.0, p.block_size, largest, 1.0};
  std::vector<std::size_t> unit_acc(p.unit_chains);
  std::vector<std::size_t> unit_prop(p.unit_chains);
  const std::uint64_t unit_seed = derive_seed(ctx.seed, 3000 + p.n_mcmc_schedule.size());
  detail::parallel_for(p.unit_chains, ctx.threads, [&](std::size_t c) {
    SeededRng rng(derive_seed(unit_seed, c));
    const auto res = mh_power_sample(model, unit_cfg, p.prompt, rng);
    unit_acc[c] = res.trace.accepted;
    unit_prop[c] = res.trace.proposed;
  });
  std::size_t ua = 0, up = 0;
  for (std::size_t c = 0; c < p.unit_chains; ++c) {
    ua += unit_acc[c];
    up += unit_prop[c];
  }
  const double unit_rate = up == 0 ? 1.0 : static_cast<double>(ua) / static_cast<double>(up);
  ResultTable unit("mh_unit_acceptance", {"chains", "acceptance_rate"});
  unit.add_row({static_cast<std::int64_t>(p.unit_chains), unit_rate});
  ctx.write(unit);
  if (unit_rate != 1.0) {
    ctx.report.failures.push_back("alpha=1, tau=1 acceptance rate is " + fmt(unit_rate));
  }

  if (p.trace) {
    const auto path = ctx.out / "mh_trace.csv";
    std::ofstream out(path, std::ios::binary);
    write_trace_csv(out, first_trace);
    ctx.report.files.push_back(path);
  }
  ctx.report.summary.push_back("TV by n_mcmc: " + [&] {
    std::string s;
    for (double tv : tvs) s += (s.empty() ? "" : ", ") + fmt(tv);
    return s;
  }());
  ctx.report.summary.push_back("Power(inf) mean logprob " + fmt(inf_sum / chains) + " vs base " +
                               fmt(base_sum / chains));
}

void run_model_info(const Context& ctx, const ModelInfoParams& p) {
  const ARModel model = ctx.config.model.build();
  std::string vocab;
  for (auto v : model.vocab_sizes()) vocab += (vocab.empty() ? "" : ",") + std::to_string(v);
  ctx.report.summary.push_back("kind: " + model.kind());
  ctx.report.summary.push_back("horizon: " + std::to_string(model.horizon()) + ", vocab_sizes: [" + vocab + "]");
  ctx.report.summary.push_back("prompts: " + std::to_string(model.prompt_count()) +
                               ", tree nodes: " + std::to_string(model.node_count()) +
                               ", sequences: " + std::to_string(model.sequence_count()));
  ResultTable info("model_info", {"prompt", "alpha", "log_z", "argmax_count", "argmax_logprob",
                                  "mass_on_argmax"});
  for (double alpha : p.alphas) {
    const PowerCache cache = build_power_cache(model, alpha);
    for (std::size_t x = 0; x < model.prompt_count(); ++x) {
      const auto argmax = power_argmax_set(model, x);
      info.add_row({static_cast<std::int64_t>(x), alpha, cache.log_z(x),
                    static_cast<std::int64_t>(argmax.size()), seq_logprob(model, argmax.front()),
                    power_mass_on_argmax(model, alpha, x)});
    }
  }
  ctx.write(info);
  const auto path = ctx.out / "model.json";
  save_model(model, path);
  ctx.report.files.push_back(path);
}

}  // namespace

RunReport run_experiment(const RunConfig& config, const RunOptions& options) {
  RunReport report;
  report.experiment = config.experiment;
  const auto out = options.out_dir.value_or(config.output_dir);
  std::filesystem::create_directories(out);
  const Context ctx{config, out, options.seed.value_or(config.seed), std::max(1u, options.threads), report};
  std::visit(
      [&](const auto& params) {
        using P = std::decay_t<decltype(params)>;
        if constexpr (std::is_same_v<P, SynthOddsParams>) run_synth_odds(ctx, params);
        else if constexpr (std::is_same_v<P, SynthSisParams>) run_synth_sis(ctx, params);
        else if constexpr (std::is_same_v<P, DistillParams>) run_distill(ctx, params);
        else if constexpr (std::is_same_v<P, CovSweepParams>) run_cov_sweep(ctx, params);
        else if constexpr (std::is_same_v<P, MhValidateParams>) run_mh_validate(ctx, params);
        else run_model_info(ctx, params);
      },
      config.params);
  return report;
}

}  // namespace powerlab::harness
