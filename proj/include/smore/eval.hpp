#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "smore/agents.hpp"
#include "smore/mdp.hpp"
#include "smore/nn.hpp"

namespace smore::eval {

using mdp::GoalMDP;

// Deterministic greedy action choice used during rollouts.
using ActFn = std::function<int(int s, int g)>;

// Goal-space distance in environment steps.
using MetricFn = std::function<double(int achieved, int commanded)>;

ActFn make_net_policy(const nn::DenseNet& policy_net, const GoalMDP& env);

// Greedy argmax over the policy's action probabilities, ties to the lowest
// action index.
ActFn make_tabular_policy(const mdp::Policy& policy);

// Manhattan steps between cells of an n-by-n grid (the shortest-path metric
// under the four movement actions).
MetricFn make_grid_metric(int n);

// |g1 - g2|, the walk distance on a chain.
MetricFn make_chain_metric();

struct RolloutStats {
  double return_mean = 0.0;
  double return_std = 0.0;
  double success_mean = 0.0;
  double success_std = 0.0;
  double distance_mean = 0.0;
  double distance_std = 0.0;
  int n_episodes = 0;
  int horizon = 0;
  double gamma = 0.0;
};

// Shared rollout loop: per episode draw s0 ~ d0 and g ~ q_test, act greedily,
// accumulate sum_t gamma^t 1[phi(s_{t+1}) = g], and record the final state.
// Episode e uses its own RNG stream derived from (seed, e), so the same seed
// reproduces the same rollouts for every metric. Stds are sample standard
// deviations over episodes. `metric` may be empty when distances are unused.
RolloutStats rollout_stats(const GoalMDP& env, const ActFn& act,
                           int n_episodes, int horizon, double gamma,
                           std::uint64_t seed, const MetricFn& metric = {});

double rollout_return(const GoalMDP& env, const ActFn& act, int n_episodes,
                      int horizon, double gamma, std::uint64_t seed);

// Fraction of episodes whose final state achieves the commanded goal.
double success_rate(const GoalMDP& env, const ActFn& act, int n_episodes,
                    int horizon, std::uint64_t seed);

// Mean metric distance between the final achieved goal and the commanded
// goal.
double final_distance(const GoalMDP& env, const ActFn& act, int n_episodes,
                      int horizon, std::uint64_t seed, const MetricFn& metric);

// Two-sided Mann-Whitney p-value. Exact tie-aware enumeration when
// n_a * n_b <= 400, otherwise the normal approximation with tie-corrected
// variance (p = 1 when the variance degenerates). Throws std::invalid_argument
// on empty input.
double mann_whitney_u(std::span<const double> a, std::span<const double> b);

struct EvalReport {
  std::vector<double> per_seed;
  double mean = 0.0;
  double stddev = 0.0;
  int n_episodes = 0;
  int horizon = 0;
  double gamma = 0.0;
};

EvalReport make_report(std::vector<double> per_seed, int n_episodes,
                       int horizon, double gamma);

struct MetricSample {
  std::string env;
  std::string agent;
  std::string setting;
  int seed = 0;
  std::string metric;
  double value = 0.0;
};

struct SummaryRow {
  std::string env;
  std::string setting;
  std::string metric;
  std::string agent;
  double mean = 0.0;
  double stddev = 0.0;
  int n_seeds = 0;
  bool starred = false;
};

// Mean and sample std per (env, setting, metric, agent); within each
// (env, setting, metric) group the best agent (lowest mean for
// final_distance, highest otherwise) earns a star iff its seed values beat
// the second-best agent's at p < 0.05. Rows come back sorted by group then
// agent.
std::vector<SummaryRow> aggregate(const std::vector<MetricSample>& samples);

// RFC-4180 CSV with header env,agent,setting,seed,metric,value; fields with
// commas, quotes, or newlines are quoted with doubled inner quotes. Numeric
// formatting is fixed so identical samples write identical bytes.
void write_csv(const std::vector<MetricSample>& samples,
               const std::string& path);

std::string to_markdown(const std::vector<SummaryRow>& rows);

}  // namespace smore::eval
