#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace smore::mdp {

/// Dense table over (state, action, goal) triples, state-major.
struct SagTensor {
  int n_states = 0;
  int n_actions = 0;
  int n_goals = 0;
  std::vector<double> v;

  SagTensor() = default;
  SagTensor(int s, int a, int g)
      : n_states(s), n_actions(a), n_goals(g),
        v(static_cast<size_t>(s) * a * g, 0.0) {}

  size_t index(int s, int a, int g) const {
    return (static_cast<size_t>(s) * n_actions + a) * n_goals + g;
  }
  double& at(int s, int a, int g) { return v[index(s, a, g)]; }
  double at(int s, int a, int g) const { return v[index(s, a, g)]; }
  size_t size() const { return v.size(); }
  double sum() const;
  bool same_shape(const SagTensor& o) const {
    return n_states == o.n_states && n_actions == o.n_actions &&
           n_goals == o.n_goals;
  }
};

using OccupancyTensor = SagTensor;
using GoalTransitionDistribution = SagTensor;

/// Table over (state, goal) pairs, state-major.
struct SgTensor {
  int n_states = 0;
  int n_goals = 0;
  std::vector<double> v;

  SgTensor() = default;
  SgTensor(int s, int g)
      : n_states(s), n_goals(g), v(static_cast<size_t>(s) * g, 0.0) {}

  double& at(int s, int g) { return v[static_cast<size_t>(s) * n_goals + g]; }
  double at(int s, int g) const {
    return v[static_cast<size_t>(s) * n_goals + g];
  }
};

/// Goal-conditioned stochastic policy, probs indexed [goal][state][action].
struct Policy {
  int n_goals = 0;
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> probs;

  Policy() = default;
  Policy(int g, int s, int a)
      : n_goals(g), n_states(s), n_actions(a),
        probs(static_cast<size_t>(g) * s * a, 0.0) {}

  size_t index(int g, int s, int a) const {
    return (static_cast<size_t>(g) * n_states + s) * n_actions + a;
  }
  double& at(int g, int s, int a) { return probs[index(g, s, a)]; }
  double at(int g, int s, int a) const { return probs[index(g, s, a)]; }

  static Policy uniform(int n_goals, int n_states, int n_actions);

  /// Throws std::invalid_argument if any row is not a distribution
  /// (nonnegative, sums to 1 within 1e-9).
  void validate() const;
};

/// Finite goal-conditioned MDP. Transitions are row-stochastic, goals are
/// images of states under phi, and episodes never terminate (gamma < 1 is the
/// only horizon).
struct GoalMDP {
  int n_states = 0;
  int n_actions = 0;
  int n_goals = 0;
  std::vector<double> transition;  // p(s'|s,a), layout [s][a][s']
  std::vector<double> d0;          // initial state distribution
  std::vector<int> phi;            // state -> achieved goal
  double gamma = 0.99;
  std::vector<double> q_train;     // training goal distribution
  std::vector<double> q_test;      // evaluation goal distribution

  double p(int s, int a, int s2) const {
    return transition[(static_cast<size_t>(s) * n_actions + a) * n_states + s2];
  }

  /// Throws std::invalid_argument naming the first offending row or entry.
  void validate() const;
};

/// n-by-n grid, 5 actions (up, down, left, right, stay), walls clamp.
/// With probability `slip` the executed move is replaced by a move drawn
/// uniformly from the four directions. Goals are cells (phi = identity),
/// q_train is uniform over all cells, q_test is uniform over the corners,
/// d0 is uniform.
GoalMDP build_gridworld(int n, double slip, double gamma = 0.99);

/// n-state chain, actions {0: left, 1: right}, ends self-loop. d0 puts all
/// mass on state 0, q_train is uniform over states, q_test is the far end.
GoalMDP build_chain(int n, double gamma = 0.99);

/// Dense random instance for property tests: exponential-draw rows
/// normalized, phi(s) = s mod n_goals, q_test = q_train. Deterministic in
/// seed.
GoalMDP build_random_mdp(int n_states, int n_actions, int n_goals,
                         double gamma, uint64_t seed);

/// Goal-conditioned policy with random rows, deterministic in seed.
Policy random_policy(int n_goals, int n_states, int n_actions, uint64_t seed);

/// Expected goal-hit indicator: sum_s' p(s'|s,a) 1[phi(s') = g], gated to 0
/// for goals outside the q_train support.
double sparse_reward(const GoalMDP& mdp, int s, int a, int g);

/// Full reward table r(s,a,g).
SagTensor reward_table(const GoalMDP& mdp);

/// Conditional occupancy d(s,a|g) of `policy` for one goal; sums to 1.
/// Solved exactly from the Bellman-flow linear system.
std::vector<double> occupancy_for_goal(const GoalMDP& mdp,
                                       const Policy& policy, int g);

/// Joint occupancy d(s,a,g) = q_train(g) * d(s,a|g); sums to 1.
OccupancyTensor solve_occupancy(const GoalMDP& mdp, const Policy& policy);

/// Max absolute Bellman-flow residual of the action-full constraint
/// d(s,a,g) = (1-gamma) d0(s,g) pi(a|s,g) + gamma pi(a|s,g) sum p d.
double flow_residual(const GoalMDP& mdp, const OccupancyTensor& d,
                     const Policy& policy);

/// Max absolute residual of the action-free constraint
/// sum_a d(s,a,g) = (1-gamma) d0(s,g) + gamma sum_{s',a'} p(s|s',a') d(s',a',g).
double flow_residual_action_free(const GoalMDP& mdp, const OccupancyTensor& d);

/// Greedy action per state for reaching `goal`, from exact Q iteration on
/// sparse_reward. Ties resolve to the lowest action index. Requires
/// q_train(goal) > 0.
std::vector<int> value_iteration_expert(const GoalMDP& mdp, int goal);

/// Deterministic goal-conditioned expert assembled from value iteration per
/// goal; rows for goals outside the q_train support are uniform.
Policy expert_policy(const GoalMDP& mdp);

/// Exact discounted return under q_test goal weighting:
/// 1/(1-gamma) * sum_g q_test(g) E_{d(.,.|g)}[r(s,a,g)].
double discounted_return_exact(const GoalMDP& mdp, const Policy& policy);

/// Hard goal-transition distribution q(s,a,g) proportional to
/// q_train(g) * sparse_reward(s,a,g). Throws std::domain_error when no
/// transition enters any supported goal.
GoalTransitionDistribution goal_transition_distribution(const GoalMDP& mdp);

/// Soft full-support variant q(s,a,g) proportional to exp(alpha * r(s,a,g)).
GoalTransitionDistribution soft_goal_transition_distribution(
    const GoalMDP& mdp, double alpha);

/// log sum_{s,a,g} exp(alpha * r(s,a,g)), the normalizer of the soft variant.
double soft_log_partition(const GoalMDP& mdp, double alpha);

nlohmann::json to_json(const GoalMDP& mdp);
GoalMDP mdp_from_json(const nlohmann::json& j);

/// Inverse-CDF draw from a nonnegative weight vector (need not be
/// normalized).
int sample_categorical(std::span<const double> weights, std::mt19937_64& rng);

}  // namespace smore::mdp
