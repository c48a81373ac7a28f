// smore-lab: experiment driver for the occupancy-matching lab.
//
// Subcommands: verify, gen-data, train, eval, sweep, report. Exit codes:
// 0 on success, 1 when a check or run fails, 2 on config or usage errors.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "smore/cli.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  int jobs = 1;
  std::optional<std::uint64_t> seed;
};

smore::cli::ExperimentConfig resolve_config(const CommonOpts& opts) {
  smore::cli::ExperimentConfig config;
  if (!opts.config_path.empty()) {
    config = smore::cli::load_config(opts.config_path);
  }
  if (opts.seed) smore::cli::override_seed(config, *opts.seed);
  return config;
}

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_jobs = false) {
  cmd->add_option("--config", opts.config_path, "Experiment config file");
  cmd->add_option("--out", opts.out_dir, "Output directory");
  cmd->add_option("--seed", opts.seed,
                  "Override the data and training seeds from the config");
  if (with_jobs) {
    cmd->add_option("--jobs", opts.jobs, "Worker threads for sweep cells")
        ->check(CLI::PositiveNumber);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Occupancy-matching lab for offline goal-conditioned RL"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string suite = "all";

  CLI::App* verify =
      app.add_subcommand("verify", "Run numerical check suites");
  verify->add_option("suite", suite,
                     "conjugates, duality, bounds, gradients, or all");
  add_common(verify, opts);

  CLI::App* gen_data =
      app.add_subcommand("gen-data", "Collect an offline dataset");
  add_common(gen_data, opts);

  CLI::App* train = app.add_subcommand("train", "Train the configured agent");
  add_common(train, opts);

  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Evaluate a trained checkpoint");
  add_common(eval_cmd, opts);

  CLI::App* sweep =
      app.add_subcommand("sweep", "Train and evaluate a config sweep");
  add_common(sweep, opts, true);

  CLI::App* report =
      app.add_subcommand("report", "Rebuild summary tables from sweep.csv");
  add_common(report, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (verify->parsed()) {
      bool ok = smore::cli::cmd_verify(suite, opts.out_dir, std::cout);
      return ok ? 0 : 1;
    }
    smore::cli::ExperimentConfig config = resolve_config(opts);
    if (gen_data->parsed()) {
      smore::cli::cmd_gen_data(config, opts.out_dir, std::cout);
    } else if (train->parsed()) {
      smore::cli::cmd_train(config, opts.out_dir, std::cout);
    } else if (eval_cmd->parsed()) {
      smore::cli::cmd_eval(config, opts.out_dir, std::cout);
    } else if (sweep->parsed()) {
      smore::cli::cmd_sweep(config, opts.out_dir, opts.jobs, std::cout);
    } else if (report->parsed()) {
      smore::cli::cmd_report(config, opts.out_dir, std::cout);
    }
    return 0;
  } catch (const smore::cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
