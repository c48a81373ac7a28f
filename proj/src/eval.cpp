#include "smore/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

namespace smore::eval {

namespace {

double sample_std(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (static_cast<double>(xs.size()) - 1.0));
}

double mean_of(const std::vector<double>& xs) {
  double total = 0.0;
  for (double x : xs) total += x;
  return total / static_cast<double>(xs.size());
}

// 2U contribution statistic: integral even with half-credit ties.
long long two_u(std::span<const double> a, std::span<const double> b) {
  long long u2 = 0;
  for (double x : a) {
    for (double y : b) {
      if (x > y) u2 += 2;
      else if (x == y) u2 += 1;
    }
  }
  return u2;
}

// Exact permutation distribution of 2U via a DP over sorted tie groups.
// Counts are held in doubles; with n_a * n_b <= 400 they top out at
// C(40,20) ~ 1.4e11, inside double's exact-integer range.
double exact_p(std::span<const double> a, std::span<const double> b,
               long long u2_obs) {
  std::vector<double> all(a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  std::vector<int> group_sizes;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j] == all[i]) ++j;
    group_sizes.push_back(static_cast<int>(j - i));
    i = j;
  }
  const int na = static_cast<int>(a.size());
  const int nb = static_cast<int>(b.size());
  const int u2_max = 2 * na * nb;

  // ways[k][u2] = number of assignments of the processed prefix with k items
  // in sample A and 2U contribution u2 (A items beat earlier B items fully
  // and tied group members by half).
  std::vector<std::vector<double>> ways(
      static_cast<std::size_t>(na) + 1,
      std::vector<double>(static_cast<std::size_t>(u2_max) + 1, 0.0));
  ways[0][0] = 1.0;
  int items_before = 0;
  for (int m : group_sizes) {
    std::vector<std::vector<double>> next(
        static_cast<std::size_t>(na) + 1,
        std::vector<double>(static_cast<std::size_t>(u2_max) + 1, 0.0));
    // binomial(m, k) row for group-internal choices
    std::vector<double> binom(static_cast<std::size_t>(m) + 1, 1.0);
    for (int k = 1; k <= m; ++k) {
      binom[k] = binom[k - 1] * (m - k + 1) / k;
    }
    for (int k = 0; k <= na; ++k) {
      for (int u2 = 0; u2 <= u2_max; ++u2) {
        double w = ways[k][u2];
        if (w == 0.0) continue;
        int b_before = items_before - k;
        for (int kg = 0; kg <= m && k + kg <= na; ++kg) {
          int add = kg * 2 * b_before + kg * (m - kg);
          if (u2 + add > u2_max) continue;
          next[k + kg][u2 + add] += w * binom[kg];
        }
      }
    }
    ways = std::move(next);
    items_before += m;
  }

  const long long mu2 = static_cast<long long>(na) * nb;
  const long long d = std::llabs(u2_obs - mu2);
  double total = 0.0, extreme = 0.0;
  for (int u2 = 0; u2 <= u2_max; ++u2) {
    double w = ways[static_cast<std::size_t>(na)][u2];
    total += w;
    if (std::llabs(static_cast<long long>(u2) - mu2) >= d) extreme += w;
  }
  return extreme / total;
}

double approx_p(std::span<const double> a, std::span<const double> b,
                long long u2_obs) {
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double n = na + nb;
  std::vector<double> all(a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j] == all[i]) ++j;
    double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  double var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0.0) return 1.0;
  double u = static_cast<double>(u2_obs) / 2.0;
  double z = std::abs(u - na * nb / 2.0) / std::sqrt(var);
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

ActFn make_net_policy(const nn::DenseNet& policy_net, const GoalMDP& env) {
  // Greedy evaluation never consumes the RNG.
  return [policy_net, env](int s, int g) {
    std::mt19937_64 unused(0);
    return agents::act(policy_net, env, s, g, true, unused);
  };
}

ActFn make_tabular_policy(const mdp::Policy& policy) {
  return [policy](int s, int g) {
    int best = 0;
    for (int a = 1; a < policy.n_actions; ++a) {
      if (policy.at(g, s, a) > policy.at(g, s, best)) best = a;
    }
    return best;
  };
}

MetricFn make_grid_metric(int n) {
  if (n < 1) throw std::invalid_argument("grid metric: n must be >= 1");
  return [n](int a, int c) {
    return static_cast<double>(std::abs(a / n - c / n) +
                               std::abs(a % n - c % n));
  };
}

MetricFn make_chain_metric() {
  return [](int a, int c) { return static_cast<double>(std::abs(a - c)); };
}

RolloutStats rollout_stats(const GoalMDP& env, const ActFn& act,
                           int n_episodes, int horizon, double gamma,
                           std::uint64_t seed, const MetricFn& metric) {
  if (n_episodes <= 0 || horizon <= 0) {
    throw std::invalid_argument("rollout_stats: need positive episode count and horizon");
  }
  std::vector<double> returns, successes, distances;
  returns.reserve(static_cast<std::size_t>(n_episodes));
  successes.reserve(static_cast<std::size_t>(n_episodes));
  distances.reserve(static_cast<std::size_t>(n_episodes));
  for (int e = 0; e < n_episodes; ++e) {
    // Independent per-episode stream: rollouts parallelize and each metric
    // sees identical episodes for the same seed.
    std::mt19937_64 rng(seed ^
                        (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(e + 1)));
    int s = mdp::sample_categorical(env.d0, rng);
    int g = mdp::sample_categorical(env.q_test, rng);
    double ret = 0.0;
    double disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      int a = act(s, g);
      if (a < 0 || a >= env.n_actions) {
        throw std::out_of_range("rollout_stats: policy returned action " +
                                std::to_string(a));
      }
      std::span<const double> row(
          env.transition.data() +
              (static_cast<std::size_t>(s) * env.n_actions + a) * env.n_states,
          static_cast<std::size_t>(env.n_states));
      s = mdp::sample_categorical(row, rng);
      if (env.phi[s] == g) ret += disc;
      disc *= gamma;
    }
    returns.push_back(ret);
    successes.push_back(env.phi[s] == g ? 1.0 : 0.0);
    distances.push_back(metric ? metric(env.phi[s], g) : 0.0);
  }
  RolloutStats stats;
  stats.return_mean = mean_of(returns);
  stats.return_std = sample_std(returns, stats.return_mean);
  stats.success_mean = mean_of(successes);
  stats.success_std = sample_std(successes, stats.success_mean);
  stats.distance_mean = mean_of(distances);
  stats.distance_std = sample_std(distances, stats.distance_mean);
  stats.n_episodes = n_episodes;
  stats.horizon = horizon;
  stats.gamma = gamma;
  return stats;
}

double rollout_return(const GoalMDP& env, const ActFn& act, int n_episodes,
                      int horizon, double gamma, std::uint64_t seed) {
  return rollout_stats(env, act, n_episodes, horizon, gamma, seed).return_mean;
}

double success_rate(const GoalMDP& env, const ActFn& act, int n_episodes,
                    int horizon, std::uint64_t seed) {
  return rollout_stats(env, act, n_episodes, horizon, env.gamma, seed)
      .success_mean;
}

double final_distance(const GoalMDP& env, const ActFn& act, int n_episodes,
                      int horizon, std::uint64_t seed,
                      const MetricFn& metric) {
  if (!metric) throw std::invalid_argument("final_distance: metric required");
  return rollout_stats(env, act, n_episodes, horizon, env.gamma, seed, metric)
      .distance_mean;
}

double mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("mann_whitney_u: empty sample");
  }
  long long u2 = two_u(a, b);
  if (a.size() * b.size() <= 400) return exact_p(a, b, u2);
  return approx_p(a, b, u2);
}

EvalReport make_report(std::vector<double> per_seed, int n_episodes,
                       int horizon, double gamma) {
  if (per_seed.empty()) {
    throw std::invalid_argument("make_report: empty per-seed values");
  }
  EvalReport report;
  report.mean = mean_of(per_seed);
  report.stddev = sample_std(per_seed, report.mean);
  report.per_seed = std::move(per_seed);
  report.n_episodes = n_episodes;
  report.horizon = horizon;
  report.gamma = gamma;
  return report;
}

std::vector<SummaryRow> aggregate(const std::vector<MetricSample>& samples) {
  std::map<std::tuple<std::string, std::string, std::string>,
           std::map<std::string, std::vector<double>>>
      groups;
  for (const MetricSample& s : samples) {
    groups[{s.env, s.setting, s.metric}][s.agent].push_back(s.value);
  }
  std::vector<SummaryRow> rows;
  for (const auto& [key, agents_map] : groups) {
    const auto& [env, setting, metric] = key;
    bool lower_better = metric == "final_distance";
    // Rank agents by mean to find the best and the runner-up.
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& [agent, values] : agents_map) {
      ranked.emplace_back(mean_of(values), agent);
    }
    std::sort(ranked.begin(), ranked.end(), [&](const auto& x, const auto& y) {
      if (x.first != y.first) {
        return lower_better ? x.first < y.first : x.first > y.first;
      }
      return x.second < y.second;
    });
    std::string starred_agent;
    if (ranked.size() >= 2) {
      const auto& best = agents_map.at(ranked[0].second);
      const auto& second = agents_map.at(ranked[1].second);
      if (mann_whitney_u(best, second) < 0.05) {
        starred_agent = ranked[0].second;
      }
    }
    for (const auto& [agent, values] : agents_map) {
      SummaryRow row;
      row.env = env;
      row.setting = setting;
      row.metric = metric;
      row.agent = agent;
      row.mean = mean_of(values);
      row.stddev = sample_std(values, row.mean);
      row.n_seeds = static_cast<int>(values.size());
      row.starred = agent == starred_agent;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_csv(const std::vector<MetricSample>& samples,
               const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "env,agent,setting,seed,metric,value\n";
  for (const MetricSample& s : samples) {
    out << csv_escape(s.env) << ',' << csv_escape(s.agent) << ','
        << csv_escape(s.setting) << ',' << s.seed << ','
        << csv_escape(s.metric) << ',' << format_value(s.value) << '\n';
  }
}

std::string to_markdown(const std::vector<SummaryRow>& rows) {
  std::string md =
      "| env | setting | metric | agent | mean | std | seeds | sig |\n"
      "|---|---|---|---|---|---|---|---|\n";
  char buf[128];
  for (const SummaryRow& row : rows) {
    std::snprintf(buf, sizeof(buf), "| %s | %s | %s | %s | %.4f | %.4f | %d | %s |\n",
                  row.env.c_str(), row.setting.c_str(), row.metric.c_str(),
                  row.agent.c_str(), row.mean, row.stddev, row.n_seeds,
                  row.starred ? "*" : "");
    md += buf;
  }
  return md;
}

}  // namespace smore::eval
