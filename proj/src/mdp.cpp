#include "smore/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace smore::mdp {

namespace {

void check_distribution(std::span<const double> row, const std::string& what) {
  double total = 0.0;
  for (size_t i = 0; i < row.size(); ++i) {
    double x = row[i];
    if (!std::isfinite(x) || x < 0.0) {
      std::ostringstream msg;
      msg << what << ": entry " << i << " is " << x;
      throw std::invalid_argument(msg.str());
    }
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    std::ostringstream msg;
    msg << what << ": mass sums to " << total;
    throw std::invalid_argument(msg.str());
  }
}

std::vector<double> random_simplex(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> w(n);
  double total = 0.0;
  for (double& x : w) {
    x = -std::log(1.0 - u(rng));
    total += x;
  }
  for (double& x : w) x /= total;
  return w;
}

}  // namespace

double SagTensor::sum() const {
  double total = 0.0;
  for (double x : v) total += x;
  return total;
}

Policy Policy::uniform(int n_goals, int n_states, int n_actions) {
  Policy pi(n_goals, n_states, n_actions);
  double p = 1.0 / n_actions;
  std::fill(pi.probs.begin(), pi.probs.end(), p);
  return pi;
}

void Policy::validate() const {
  for (int g = 0; g < n_goals; ++g) {
    for (int s = 0; s < n_states; ++s) {
      std::ostringstream what;
      what << "policy row (g = " << g << ", s = " << s << ")";
      check_distribution(
          std::span<const double>(probs.data() + index(g, s, 0), n_actions),
          what.str());
    }
  }
}

void GoalMDP::validate() const {
  if (n_states <= 0 || n_actions <= 0 || n_goals <= 0) {
    throw std::invalid_argument("mdp: dimensions must be positive");
  }
  if (!(gamma > 0.0 && gamma < 1.0)) {
    std::ostringstream msg;
    msg << "mdp: gamma must lie strictly inside (0, 1), got " << gamma;
    throw std::invalid_argument(msg.str());
  }
  size_t want = static_cast<size_t>(n_states) * n_actions * n_states;
  if (transition.size() != want) {
    throw std::invalid_argument("mdp: transition tensor has wrong size");
  }
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      std::ostringstream what;
      what << "transition row (s = " << s << ", a = " << a << ")";
      check_distribution(
          std::span<const double>(
              transition.data() +
                  (static_cast<size_t>(s) * n_actions + a) * n_states,
              n_states),
          what.str());
    }
  }
  if (static_cast<int>(d0.size()) != n_states) {
    throw std::invalid_argument("mdp: d0 has wrong size");
  }
  check_distribution(d0, "d0");
  if (static_cast<int>(phi.size()) != n_states) {
    throw std::invalid_argument("mdp: phi has wrong size");
  }
  for (int s = 0; s < n_states; ++s) {
    if (phi[s] < 0 || phi[s] >= n_goals) {
      std::ostringstream msg;
      msg << "mdp: phi(" << s << ") = " << phi[s] << " is out of range";
      throw std::invalid_argument(msg.str());
    }
  }
  if (static_cast<int>(q_train.size()) != n_goals ||
      static_cast<int>(q_test.size()) != n_goals) {
    throw std::invalid_argument("mdp: goal distribution has wrong size");
  }
  check_distribution(q_train, "q_train");
  check_distribution(q_test, "q_test");
}

GoalMDP build_gridworld(int n, double slip, double gamma) {
  if (n < 1) throw std::invalid_argument("gridworld: n must be >= 1");
  if (slip < 0.0 || slip > 1.0) {
    throw std::invalid_argument("gridworld: slip must lie in [0, 1]");
  }
  GoalMDP m;
  m.n_states = n * n;
  m.n_actions = 5;  // up, down, left, right, stay
  m.n_goals = n * n;
  m.gamma = gamma;
  m.transition.assign(
      static_cast<size_t>(m.n_states) * m.n_actions * m.n_states, 0.0);

  auto clamp_move = [n](int s, int move) {
    int r = s / n, c = s % n;
    switch (move) {
      case 0: r = std::max(0, r - 1); break;      // up
      case 1: r = std::min(n - 1, r + 1); break;  // down
      case 2: c = std::max(0, c - 1); break;      // left
      case 3: c = std::min(n - 1, c + 1); break;  // right
      default: break;                             // stay
    }
    return r * n + c;
  };

  for (int s = 0; s < m.n_states; ++s) {
    for (int a = 0; a < m.n_actions; ++a) {
      double* row = m.transition.data() +
                    (static_cast<size_t>(s) * m.n_actions + a) * m.n_states;
      row[clamp_move(s, a)] += 1.0 - slip;
      for (int move = 0; move < 4; ++move) {
        row[clamp_move(s, move)] += slip / 4.0;
      }
    }
  }

  m.d0.assign(m.n_states, 1.0 / m.n_states);
  m.phi.resize(m.n_states);
  for (int s = 0; s < m.n_states; ++s) m.phi[s] = s;
  m.q_train.assign(m.n_goals, 1.0 / m.n_goals);

  std::vector<int> corners = {0, n - 1, n * (n - 1), n * n - 1};
  std::sort(corners.begin(), corners.end());
  corners.erase(std::unique(corners.begin(), corners.end()), corners.end());
  m.q_test.assign(m.n_goals, 0.0);
  for (int c : corners) m.q_test[c] = 1.0 / corners.size();

  m.validate();
  return m;
}

GoalMDP build_chain(int n, double gamma) {
  if (n < 2) throw std::invalid_argument("chain: n must be >= 2");
  GoalMDP m;
  m.n_states = n;
  m.n_actions = 2;  // left, right
  m.n_goals = n;
  m.gamma = gamma;
  m.transition.assign(static_cast<size_t>(n) * 2 * n, 0.0);
  for (int s = 0; s < n; ++s) {
    int left = std::max(0, s - 1);
    int right = std::min(n - 1, s + 1);
    m.transition[(static_cast<size_t>(s) * 2 + 0) * n + left] = 1.0;
    m.transition[(static_cast<size_t>(s) * 2 + 1) * n + right] = 1.0;
  }
  m.d0.assign(n, 0.0);
  m.d0[0] = 1.0;
  m.phi.resize(n);
  for (int s = 0; s < n; ++s) m.phi[s] = s;
  m.q_train.assign(n, 1.0 / n);
  m.q_test.assign(n, 0.0);
  m.q_test[n - 1] = 1.0;
  m.validate();
  return m;
}

GoalMDP build_random_mdp(int n_states, int n_actions, int n_goals,
                         double gamma, uint64_t seed) {
  std::mt19937_64 rng(seed);
  GoalMDP m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.n_goals = n_goals;
  m.gamma = gamma;
  m.transition.reserve(static_cast<size_t>(n_states) * n_actions * n_states);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      std::vector<double> row = random_simplex(n_states, rng);
      m.transition.insert(m.transition.end(), row.begin(), row.end());
    }
  }
  m.d0 = random_simplex(n_states, rng);
  m.phi.resize(n_states);
  for (int s = 0; s < n_states; ++s) m.phi[s] = s % n_goals;
  m.q_train = random_simplex(n_goals, rng);
  m.q_test = m.q_train;
  m.validate();
  return m;
}

Policy random_policy(int n_goals, int n_states, int n_actions, uint64_t seed) {
  std::mt19937_64 rng(seed);
  Policy pi(n_goals, n_states, n_actions);
  for (int g = 0; g < n_goals; ++g) {
    for (int s = 0; s < n_states; ++s) {
      std::vector<double> row = random_simplex(n_actions, rng);
      std::copy(row.begin(), row.end(), pi.probs.begin() + pi.index(g, s, 0));
    }
  }
  return pi;
}

double sparse_reward(const GoalMDP& mdp, int s, int a, int g) {
  if (mdp.q_train[g] <= 0.0) return 0.0;
  double r = 0.0;
  for (int s2 = 0; s2 < mdp.n_states; ++s2) {
    if (mdp.phi[s2] == g) r += mdp.p(s, a, s2);
  }
  return r;
}

SagTensor reward_table(const GoalMDP& mdp) {
  SagTensor r(mdp.n_states, mdp.n_actions, mdp.n_goals);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      for (int g = 0; g < mdp.n_goals; ++g) {
        r.at(s, a, g) = sparse_reward(mdp, s, a, g);
      }
    }
  }
  return r;
}

std::vector<double> occupancy_for_goal(const GoalMDP& mdp,
                                       const Policy& policy, int g) {
  const int ns = mdp.n_states, na = mdp.n_actions;
  const int m = ns * na;
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(m, m);
  Eigen::VectorXd rhs(m);
  for (int s = 0; s < ns; ++s) {
    for (int a = 0; a < na; ++a) {
      int i = s * na + a;
      double pia = policy.at(g, s, a);
      rhs(i) = (1.0 - mdp.gamma) * mdp.d0[s] * pia;
      for (int s2 = 0; s2 < ns; ++s2) {
        for (int a2 = 0; a2 < na; ++a2) {
          lhs(i, s2 * na + a2) -= mdp.gamma * pia * mdp.p(s2, a2, s);
        }
      }
    }
  }
  Eigen::VectorXd x = lhs.partialPivLu().solve(rhs);
  double residual = (lhs * x - rhs).cwiseAbs().maxCoeff();
  if (!std::isfinite(residual) || residual > 1e-10) {
    std::ostringstream msg;
    msg << "occupancy solve failed for goal " << g
        << " (linear system residual " << residual << ")";
    throw std::runtime_error(msg.str());
  }
  std::vector<double> d(m);
  for (int i = 0; i < m; ++i) d[i] = std::max(0.0, x(i));
  return d;
}

OccupancyTensor solve_occupancy(const GoalMDP& mdp, const Policy& policy) {
  OccupancyTensor d(mdp.n_states, mdp.n_actions, mdp.n_goals);
  for (int g = 0; g < mdp.n_goals; ++g) {
    if (mdp.q_train[g] <= 0.0) continue;
    std::vector<double> dg = occupancy_for_goal(mdp, policy, g);
    for (int s = 0; s < mdp.n_states; ++s) {
      for (int a = 0; a < mdp.n_actions; ++a) {
        d.at(s, a, g) = mdp.q_train[g] * dg[s * mdp.n_actions + a];
      }
    }
  }
  return d;
}

double flow_residual(const GoalMDP& mdp, const OccupancyTensor& d,
                     const Policy& policy) {
  double worst = 0.0;
  for (int g = 0; g < mdp.n_goals; ++g) {
    for (int s = 0; s < mdp.n_states; ++s) {
      double inflow = 0.0;
      for (int s2 = 0; s2 < mdp.n_states; ++s2) {
        for (int a2 = 0; a2 < mdp.n_actions; ++a2) {
          inflow += mdp.p(s2, a2, s) * d.at(s2, a2, g);
        }
      }
      double base = (1.0 - mdp.gamma) * mdp.d0[s] * mdp.q_train[g] +
                    mdp.gamma * inflow;
      for (int a = 0; a < mdp.n_actions; ++a) {
        double expect = policy.at(g, s, a) * base;
        worst = std::max(worst, std::abs(d.at(s, a, g) - expect));
      }
    }
  }
  return worst;
}

double flow_residual_action_free(const GoalMDP& mdp,
                                 const OccupancyTensor& d) {
  double worst = 0.0;
  for (int g = 0; g < mdp.n_goals; ++g) {
    for (int s = 0; s < mdp.n_states; ++s) {
      double outflow = 0.0;
      for (int a = 0; a < mdp.n_actions; ++a) outflow += d.at(s, a, g);
      double inflow = 0.0;
      for (int s2 = 0; s2 < mdp.n_states; ++s2) {
        for (int a2 = 0; a2 < mdp.n_actions; ++a2) {
          inflow += mdp.p(s2, a2, s) * d.at(s2, a2, g);
        }
      }
      double rhs = (1.0 - mdp.gamma) * mdp.d0[s] * mdp.q_train[g] +
                   mdp.gamma * inflow;
      worst = std::max(worst, std::abs(outflow - rhs));
    }
  }
  return worst;
}

std::vector<int> value_iteration_expert(const GoalMDP& mdp, int goal) {
  if (goal < 0 || goal >= mdp.n_goals || mdp.q_train[goal] <= 0.0) {
    std::ostringstream msg;
    msg << "value iteration requires a goal inside the q_train support, got "
        << goal;
    throw std::invalid_argument(msg.str());
  }
  const int ns = mdp.n_states, na = mdp.n_actions;
  std::vector<double> r(static_cast<size_t>(ns) * na);
  for (int s = 0; s < ns; ++s) {
    for (int a = 0; a < na; ++a) {
      r[static_cast<size_t>(s) * na + a] = sparse_reward(mdp, s, a, goal);
    }
  }
  std::vector<double> q(static_cast<size_t>(ns) * na, 0.0);
  std::vector<double> vmax(ns, 0.0);
  const int max_iters = 200000;
  for (int it = 0; it < max_iters; ++it) {
    double delta = 0.0;
    for (int s = 0; s < ns; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < na; ++a) best = std::max(best, q[s * na + a]);
      vmax[s] = best;
    }
    for (int s = 0; s < ns; ++s) {
      for (int a = 0; a < na; ++a) {
        double backup = 0.0;
        for (int s2 = 0; s2 < ns; ++s2) backup += mdp.p(s, a, s2) * vmax[s2];
        double next = r[s * na + a] + mdp.gamma * backup;
        delta = std::max(delta, std::abs(next - q[s * na + a]));
        q[s * na + a] = next;
      }
    }
    if (delta < 1e-12) break;
  }
  std::vector<int> greedy(ns, 0);
  for (int s = 0; s < ns; ++s) {
    int best = 0;
    for (int a = 1; a < na; ++a) {
      if (q[s * na + a] > q[s * na + best]) best = a;
    }
    greedy[s] = best;
  }
  return greedy;
}

Policy expert_policy(const GoalMDP& mdp) {
  Policy pi = Policy::uniform(mdp.n_goals, mdp.n_states, mdp.n_actions);
  for (int g = 0; g < mdp.n_goals; ++g) {
    if (mdp.q_train[g] <= 0.0) continue;
    std::vector<int> greedy = value_iteration_expert(mdp, g);
    for (int s = 0; s < mdp.n_states; ++s) {
      for (int a = 0; a < mdp.n_actions; ++a) {
        pi.at(g, s, a) = (a == greedy[s]) ? 1.0 : 0.0;
      }
    }
  }
  return pi;
}

double discounted_return_exact(const GoalMDP& mdp, const Policy& policy) {
  double total = 0.0;
  for (int g = 0; g < mdp.n_goals; ++g) {
    if (mdp.q_test[g] <= 0.0) continue;
    std::vector<double> dg = occupancy_for_goal(mdp, policy, g);
    double value = 0.0;
    for (int s = 0; s < mdp.n_states; ++s) {
      for (int a = 0; a < mdp.n_actions; ++a) {
        value += dg[s * mdp.n_actions + a] * sparse_reward(mdp, s, a, g);
      }
    }
    total += mdp.q_test[g] * value;
  }
  return total / (1.0 - mdp.gamma);
}

GoalTransitionDistribution goal_transition_distribution(const GoalMDP& mdp) {
  GoalTransitionDistribution q(mdp.n_states, mdp.n_actions, mdp.n_goals);
  double total = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      for (int g = 0; g < mdp.n_goals; ++g) {
        double w = mdp.q_train[g] * sparse_reward(mdp, s, a, g);
        q.at(s, a, g) = w;
        total += w;
      }
    }
  }
  if (total <= 0.0) {
    throw std::domain_error(
        "goal transition distribution: no transition enters a supported goal");
  }
  for (double& x : q.v) x /= total;
  return q;
}

GoalTransitionDistribution soft_goal_transition_distribution(
    const GoalMDP& mdp, double alpha) {
  GoalTransitionDistribution q(mdp.n_states, mdp.n_actions, mdp.n_goals);
  double total = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      for (int g = 0; g < mdp.n_goals; ++g) {
        double w = std::exp(alpha * sparse_reward(mdp, s, a, g));
        q.at(s, a, g) = w;
        total += w;
      }
    }
  }
  for (double& x : q.v) x /= total;
  return q;
}

double soft_log_partition(const GoalMDP& mdp, double alpha) {
  // Rewards lie in [0, 1]; plain exp cannot overflow for sane alpha.
  double total = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      for (int g = 0; g < mdp.n_goals; ++g) {
        total += std::exp(alpha * sparse_reward(mdp, s, a, g));
      }
    }
  }
  return std::log(total);
}

nlohmann::json to_json(const GoalMDP& mdp) {
  return nlohmann::json{
      {"n_states", mdp.n_states}, {"n_actions", mdp.n_actions},
      {"n_goals", mdp.n_goals},   {"transition", mdp.transition},
      {"d0", mdp.d0},             {"phi", mdp.phi},
      {"gamma", mdp.gamma},       {"q_train", mdp.q_train},
      {"q_test", mdp.q_test}};
}

GoalMDP mdp_from_json(const nlohmann::json& j) {
  GoalMDP m;
  m.n_states = j.at("n_states").get<int>();
  m.n_actions = j.at("n_actions").get<int>();
  m.n_goals = j.at("n_goals").get<int>();
  m.transition = j.at("transition").get<std::vector<double>>();
  m.d0 = j.at("d0").get<std::vector<double>>();
  m.phi = j.at("phi").get<std::vector<int>>();
  m.gamma = j.at("gamma").get<double>();
  m.q_train = j.at("q_train").get<std::vector<double>>();
  m.q_test = j.at("q_test").get<std::vector<double>>();
  m.validate();
  return m;
}

int sample_categorical(std::span<const double> weights, std::mt19937_64& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (total <= 0.0) {
    throw std::invalid_argument("sample_categorical: weights sum to zero");
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double target = u(rng) * total;
  double acc = 0.0;
  int last_positive = -1;
  for (size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last_positive = static_cast<int>(i);
    acc += weights[i];
    if (target < acc) return static_cast<int>(i);
  }
  return last_positive;
}

}  // namespace smore::mdp
