#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "smore/mdp.hpp"

namespace smore::data {

using mdp::GoalMDP;
using mdp::SagTensor;

struct Transition {
  std::int32_t episode_id;
  std::int32_t t;
  std::int32_t s;
  std::int32_t a;
  std::int32_t s_next;
  std::int32_t achieved_goal;  // phi(s_next)
  std::int32_t commanded_goal;
};

bool operator==(const Transition& a, const Transition& b);

struct OfflineDataset {
  mdp::GoalMDP env;
  std::vector<Transition> transitions;
  // Per-episode [begin, end) ranges into transitions, in episode order.
  std::vector<std::pair<std::size_t, std::size_t>> episodes;
  double expert_fraction = 0.0;
  std::uint64_t seed = 0;
  int horizon = 0;

  std::size_t size() const { return transitions.size(); }
  // Episode range containing transition index i.
  std::pair<std::size_t, std::size_t> episode_range(std::size_t i) const;
};

// ceil(expert_fraction * n_episodes) episodes follow an eps-greedy (0.1)
// expert toward a q_test-sampled goal; the rest take uniform random actions.
// Every episode starts at a d0-sampled state and runs exactly horizon steps.
OfflineDataset collect_dataset(const mdp::GoalMDP& env, double expert_fraction,
                               int n_episodes, int horizon,
                               std::uint64_t seed);

struct RelabeledTransition {
  int s;
  int a;
  int s_next;
  int g;
};

// With probability her_ratio the goal becomes the achieved goal of a
// uniformly chosen step at or after the transition within its episode;
// otherwise the commanded goal is kept.
std::vector<RelabeledTransition> her_relabel(
    const OfflineDataset& dataset, const std::vector<std::size_t>& indices,
    double her_ratio, std::mt19937_64& rng);

// Samples goals by the HER procedure and returns, for each, a transition of
// the same episode that enters the selected goal (phi(s_next) = g always).
std::vector<RelabeledTransition> sample_goal_transition(
    const OfflineDataset& dataset, double her_ratio, int batch_size,
    std::mt19937_64& rng);

struct EmpiricalJoint {
  SagTensor rho;
};

// Monte-Carlo normalized counts of HER-relabeled (s, a, g) draws.
EmpiricalJoint empirical_joint(const OfflineDataset& dataset, double her_ratio,
                               int n_samples, std::uint64_t seed);

// Binary format: one JSON header line (version, env, counts, provenance)
// followed by fixed-width records of 7 little-endian int32 fields.
void save_dataset(const OfflineDataset& dataset, const std::string& path);
OfflineDataset load_dataset(const std::string& path);

// One headered row per transition, for inspection.
void export_csv(const OfflineDataset& dataset, const std::string& path);

}  // namespace smore::data
