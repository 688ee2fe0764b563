#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "powerlab/ar_model.hpp"
#include "powerlab/distill.hpp"
#include "powerlab/samplers.hpp"

namespace powerlab::harness {

enum class ExitCode : int { Ok = 0, Config = 2, ResourceLimit = 3, Validation = 4 };

/// Rejected configuration. `code` is a stable identifier such as
/// "alpha-nonpositive"; `field` is the dotted path of the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string code, std::string field, const std::string& message)
      : std::runtime_error(field.empty() ? message : field + ": " + message),
        code_(std::move(code)),
        field_(std::move(field)) {}

  const std::string& code() const { return code_; }
  const std::string& field() const { return field_; }

 private:
  std::string code_;
  std::string field_;
};

/// How to obtain the model an experiment runs on. Exactly one `type`:
/// synthetic_two_step, random_dirichlet, random_logit, uniform or file.
struct ModelSpec {
  std::string type = "synthetic_two_step";
  std::size_t vocab = 64;
  std::size_t suffix_support = 256;
  double zipf_exponent = 1.05;
  std::vector<std::size_t> vocab_sizes;
  std::size_t prompts = 1;
  double scale = 1.0;
  std::uint64_t seed = 0;
  std::filesystem::path path;

  ARModel build() const;
};

struct SynthOddsParams {
  std::vector<double> alphas{1.1, 1.5, 2.0, 3.0, 4.0, 8.0};
  double reversal_alpha = 4.0;
  double tolerance = 1e-10;
  std::size_t histogram_bins = 40;
  std::size_t prompt = 0;
};

struct SynthSisParams {
  std::vector<double> alphas{1.1, 1.5, 2.0, 3.0, 4.0, 8.0};
  std::vector<ProposalKind> proposals{ProposalKind::Oracle, ProposalKind::Temperature,
                                      ProposalKind::Base, ProposalKind::Uniform};
  double mc_alpha = 4.0;
  std::vector<std::size_t> mc_n{100, 1000, 10000};
  std::size_t mc_reps = 32;
  std::size_t prompt = 0;
};

struct DistillParams {
  double alpha = 4.0;
  std::vector<std::size_t> n_grid{100, 1000, 10000, 100000};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  TeacherConfig teacher{};
  double epsilon = 0.0;
  double delta = 0.1;
  std::vector<double> sharpening_alphas{1.0, 2.0, 4.0, 8.0, 16.0};
  double reward_lambda = 0.5;
  double reward_sigma = 0.5;
  std::uint64_t reward_seed = 0;
  double tv_threshold = 0.02;
  std::size_t allowed_inversions = 1;
  bool save_artifacts = true;
};

struct CovSweepParams {
  double alpha = 4.0;
  std::vector<double> lambdas{-1.0, -0.5, 0.0, 0.5, 1.0};
  double sigma = 0.5;
  std::uint64_t reward_seed = 0;
  std::vector<double> derivative_alphas{1.0, 1.5, 2.0, 4.0};
  double h = 1e-4;
  std::size_t random_rewards = 5;
  double rel_err_threshold = 1e-4;
  double spearman_threshold = 0.9;
  std::size_t prompt = 0;
};

struct MhValidateParams {
  double alpha = 2.0;
  std::size_t chains = 100000;
  std::vector<std::size_t> n_mcmc_schedule{5, 10, 20};
  std::size_t block_size = 0;
  /// Defaults to 1 / alpha.
  std::optional<double> proposal_temp;
  double tv_threshold = 0.05;
  std::size_t power_inf_chains = 10000;
  std::size_t unit_chains = 1000;
  bool trace = false;
  std::size_t prompt = 0;
};

struct ModelInfoParams {
  std::vector<double> alphas{1.0, 2.0, 4.0};
};

using ExperimentParams = std::variant<SynthOddsParams, SynthSisParams, DistillParams,
                                      CovSweepParams, MhValidateParams, ModelInfoParams>;

/// Validated experiment description; unknown keys are rejected at parse time.
struct RunConfig {
  std::string experiment;
  ModelSpec model;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = ".";
  ExperimentParams params;
};

/// Subcommand names, in CLI order.
const std::vector<std::string>& experiment_names();

/// Parses and validates. Throws ConfigError.
RunConfig parse_run_config(const nlohmann::json& doc);
/// Reads a JSON file; syntax errors become ConfigError with the line number.
nlohmann::json load_config_file(const std::filesystem::path& path);

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
};

struct RunReport {
  std::string experiment;
  std::vector<std::filesystem::path> files;
  std::vector<std::string> summary;
  /// Validation failures; non-empty means exit code 4.
  std::vector<std::string> failures;

  bool ok() const { return failures.empty(); }
};

/// Runs one experiment and writes its tables under the output directory.
/// Outputs depend only on (config, seed), never on `threads`.
RunReport run_experiment(const RunConfig& config, const RunOptions& options);

/// Reads POWERLAB_THREADS, falling back to 1.
unsigned threads_from_env();

}  // namespace powerlab::harness
