#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "smore/agents.hpp"
#include "smore/eval.hpp"
#include "smore/mdp.hpp"

namespace smore::cli {

/// Invalid configuration input: parse errors, unknown or mistyped keys,
/// out-of-range values, and refused resumes. Maps to exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Everything a run needs, with defaults matching a desk-scale grid study.
/// The agent's discount always mirrors env_gamma.
struct ExperimentConfig {
  std::string env_type = "grid";  // grid | chain
  int env_size = 5;
  double env_slip = 0.0;  // grid only
  double env_gamma = 0.99;

  double expert_fraction = 0.1;
  int data_episodes = 500;
  int data_horizon = 50;
  std::uint64_t data_seed = 1;

  std::string agent_name = "smore";  // smore | gcsl | iql_sparse | gofar_lite
  agents::SmoreConfig agent;
  std::uint64_t agent_seed = 0;
  int eval_every = 1000;  // training-log row interval

  int eval_episodes = 200;
  int eval_horizon = 50;
  std::vector<int> eval_seeds = {0, 1, 2, 3, 4};

  std::vector<std::string> sweep_agents;  // empty: just agent_name
  std::string sweep_key;                  // empty: single "base" setting
  std::vector<double> sweep_values;
};

/// Parses the flat dotted key-value format ([section] headers and dotted
/// keys both work; strings, numbers, booleans, homogeneous arrays, and #
/// comments). Unknown keys, duplicate keys, and type mismatches throw
/// ConfigError naming the offender.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Applies the --seed override: replaces both the dataset seed and the
/// training seed.
void override_seed(ExperimentConfig& config, std::uint64_t seed);

/// Canonical JSON form; equality of dumps defines config identity for
/// resume checks.
nlohmann::json config_to_json(const ExperimentConfig& config);

mdp::GoalMDP build_env(const ExperimentConfig& config);

/// Short environment label for result rows, e.g. "grid5" or "chain7".
std::string env_label(const ExperimentConfig& config);

/// Distance metric matching the environment's geometry.
eval::MetricFn env_metric(const ExperimentConfig& config);

// Commands. Each writes its artifacts under out_dir (created if missing),
// logs human-readable progress to `log`, and throws on failure: ConfigError
// for bad input, std::runtime_error otherwise.

/// Runs the named certificate suite, writes <out>/verify_<suite>.json, and
/// prints one line per check. Returns true iff every check passed.
bool cmd_verify(const std::string& suite, const std::string& out_dir,
                std::ostream& log);

/// Collects the configured dataset, writes <out>/dataset.bin and
/// <out>/dataset.csv, and returns the binary path.
std::string cmd_gen_data(const ExperimentConfig& config,
                         const std::string& out_dir, std::ostream& log);

/// Trains the configured agent and writes a checkpoint (<out>/<agent>.*),
/// <out>/train_log.csv (one row per eval_every steps plus the final step),
/// and <out>/train_config.json. Reuses <out>/dataset.bin when its provenance
/// matches the config; a stored config that differs refuses the rerun.
/// Returns the checkpoint prefix.
std::string cmd_train(const ExperimentConfig& config,
                      const std::string& out_dir, std::ostream& log);

/// Rolls out the trained checkpoint greedily for every eval seed and writes
/// <out>/eval.csv (schema env,agent,setting,seed,metric,value). Returns the
/// CSV path.
std::string cmd_eval(const ExperimentConfig& config, const std::string& out_dir,
                     std::ostream& log);

/// Trains and evaluates every (agent, setting, seed) cell, parallelized up
/// to `jobs` worker threads (the SMORE_LAB_THREADS environment variable caps
/// it). Writes <out>/sweep.csv (raw samples), <out>/drops.csv (per-setting
/// mean returns with drop vs the first setting), and <out>/summary.md.
/// Returns the sweep CSV path.
std::string cmd_sweep(const ExperimentConfig& config, const std::string& out_dir,
                      int jobs, std::ostream& log);

/// Regenerates <out>/summary.md and <out>/drops.csv from an existing
/// <out>/sweep.csv without retraining. Returns the summary path.
std::string cmd_report(const ExperimentConfig& config,
                       const std::string& out_dir, std::ostream& log);

/// RFC-4180 reader for the sample schema written by eval::write_csv.
std::vector<eval::MetricSample> read_samples_csv(const std::string& path);

}  // namespace smore::cli
