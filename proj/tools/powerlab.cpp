#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "powerlab/errors.hpp"
#include "powerlab/harness.hpp"

namespace h = powerlab::harness;

namespace {

int run(const std::string& command, const std::string& config_path, const std::string& out_dir,
        const CLI::Option* seed_opt, std::uint64_t seed, unsigned threads) {
  try {
    auto cfg = h::parse_run_config(h::load_config_file(config_path));
    if (cfg.experiment != command) {
      throw h::ConfigError("experiment-mismatch", "experiment",
                           "config is for '" + cfg.experiment + "', not '" + command + "'");
    }
    h::RunOptions options;
    if (!out_dir.empty()) options.out_dir = out_dir;
    if (seed_opt->count() > 0) options.seed = seed;
    options.threads = threads;
    const auto report = h::run_experiment(cfg, options);
    for (const auto& line : report.summary) std::cout << line << '\n';
    for (const auto& file : report.files) std::cout << "wrote " << file.string() << '\n';
    for (const auto& failure : report.failures) std::cerr << "FAIL: " << failure << '\n';
    return static_cast<int>(report.ok() ? h::ExitCode::Ok : h::ExitCode::Validation);
  } catch (const h::ConfigError& e) {
    std::cerr << "config error [" << e.code() << "] " << e.what() << '\n';
    return static_cast<int>(h::ExitCode::Config);
  } catch (const powerlab::ResourceLimitError& e) {
    std::cerr << "resource limit: " << e.what() << '\n';
    return static_cast<int>(h::ExitCode::ResourceLimit);
  } catch (const powerlab::SupportViolation& e) {
    std::cerr << "validation: " << e.what() << '\n';
    return static_cast<int>(h::ExitCode::Validation);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return static_cast<int>(h::ExitCode::Config);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"powerlab: exact and sampled power distributions on tabular autoregressive models"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  unsigned threads = h::threads_from_env();
  std::string chosen;
  const CLI::Option* seed_opt = nullptr;

  for (const auto& name : h::experiment_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory (overrides output_dir)");
    auto* opt = sub->add_option("--seed", seed, "base seed (overrides the config seed)");
    sub->add_option("--threads", threads, "worker threads (overrides POWERLAB_THREADS)")
        ->check(CLI::PositiveNumber);
    sub->callback([&chosen, &seed_opt, name, opt] {
      chosen = name;
      seed_opt = opt;
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(h::ExitCode::Config);
  }
  return run(chosen, config_path, out_dir, seed_opt, seed, threads);
}
