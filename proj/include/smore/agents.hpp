#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "smore/data.hpp"
#include "smore/mdp.hpp"
#include "smore/nn.hpp"

namespace smore::agents {

using data::OfflineDataset;
using data::RelabeledTransition;
using mdp::GoalMDP;

struct SmoreConfig {
  double beta = 0.5;
  double awr_temperature = 3.0;
  double expectile = 0.8;
  double her_ratio = 0.8;
  double gamma = 0.99;
  int batch_size = 512;
  int total_steps = 10000;
  double base_lr = 3e-4;
  std::vector<int> hidden = {256, 256};
  double lr_floor_fraction = 0.0;
  // Discriminator pretraining budget for the discriminator-based baseline.
  int disc_steps = 10000;
};

// beta in (0,1], expectile in (0.5,1), awr_temperature > 0, positive sizes.
void require_config(const SmoreConfig& config);

nlohmann::json config_to_json(const SmoreConfig& config);
SmoreConfig config_from_json(const nlohmann::json& j);

// One-hot feature rows: (s, a, g) -> width ns+na+ng, (s, g) -> width ns+ng.
Eigen::MatrixXd encode_sag(const GoalMDP& env, const std::vector<int>& s,
                           const std::vector<int>& a,
                           const std::vector<int>& g);
Eigen::MatrixXd encode_sg(const GoalMDP& env, const std::vector<int>& s,
                          const std::vector<int>& g);

// ---- Pure loss heads (network outputs -> loss and output gradient). ----

// Asymmetric squared loss |tau - 1(u<0)| u^2 with residual u = target - out,
// averaged over rows; fits the upper-tau-expectile of the targets.
std::pair<double, Eigen::MatrixXd> expectile_loss(
    const Eigen::MatrixXd& out, const Eigen::VectorXd& targets, double tau);

// Mean of w_i * (-log softmax(logits_i)[a_i]).
std::pair<double, Eigen::MatrixXd> weighted_nll_loss(
    const Eigen::MatrixXd& logits, const std::vector<int>& actions,
    const Eigen::VectorXd& weights);

// Sum of linear_i * out_i + quad_weight_i * (quad_target_i - out_i)^2 with
// caller-chosen per-row coefficients (already normalized).
std::pair<double, Eigen::MatrixXd> linear_quadratic_loss(
    const Eigen::MatrixXd& out, const Eigen::VectorXd& linear,
    const Eigen::VectorXd& quad_weight, const Eigen::VectorXd& quad_target);

// Binary cross entropy on logits, labels in {0,1}, averaged over rows.
std::pair<double, Eigen::MatrixXd> logistic_loss(const Eigen::MatrixXd& logits,
                                                 const Eigen::VectorXd& labels);

// Flow value loss over stacked rows (first half V(s), second half V(s')):
// mean_i [(1-gamma) V(s_i) + max(0, y_i/2 + 1)^2 - 1], y = r + gamma V' - V.
std::pair<double, Eigen::MatrixXd> flow_value_loss(
    const Eigen::MatrixXd& v_out, const Eigen::VectorXd& rewards,
    double gamma);

// Advantage weights min(exp(temperature * (s - m)), 100).
Eigen::VectorXd awr_weights(const Eigen::VectorXd& s_values,
                            const Eigen::VectorXd& m_values,
                            double temperature);

// ---- SMORe agent. ----

struct SmoreAgent {
  GoalMDP env;
  SmoreConfig config;
  nn::DenseNet s_net;
  nn::DenseNet m_net;
  nn::DenseNet policy_net;
  nn::AdamState s_opt;
  nn::AdamState m_opt;
  nn::AdamState policy_opt;
  nn::CosineSchedule schedule;
  int step = 0;
};

SmoreAgent make_smore_agent(const GoalMDP& env, const SmoreConfig& config,
                            std::uint64_t seed);

// Score update: one Adam step on S against
//   beta (1-gamma) E_rho[S(s, pi(s), g)] + beta gamma E_q[S(s', pi(s'), g)]
//   - beta E_q[S(s, a, g)]
//   + E_mix[(gamma M(s', g) - S(s, a, g))^2]
// where E_mix weighs the q batch by beta and the rho batch by 1-beta.
// The policy terms take the exact expectation over the frozen policy's
// discrete action distribution; M is frozen.
double smore_update_s(SmoreAgent& agent,
                      const std::vector<RelabeledTransition>& batch_rho,
                      const std::vector<RelabeledTransition>& batch_q);

// Asymmetric regression of M(s,g) onto frozen S(s,a,g) over in-sample
// actions; with expectile > 0.5, M tracks the upper expectile of S.
double smore_update_m(SmoreAgent& agent,
                      const std::vector<RelabeledTransition>& batch_rho);

// Advantage-weighted regression: maximize E[w log pi(a|s,g)] with frozen
// w = awr_weights(S, M).
double smore_update_policy(SmoreAgent& agent,
                           const std::vector<RelabeledTransition>& batch_rho);

struct BaselineAgent;

// Called after each completed optimization step with the live agent, the
// number of finished steps, and that step's losses (smore: score, expectile,
// policy; gcsl: cloning; iql_sparse: value, q, policy; gofar_lite: value,
// policy). Observation only: rolling out the agent inside the callback does
// not perturb the training stream.
using SmoreObserver =
    std::function<void(const SmoreAgent&, int, std::span<const double>)>;
using BaselineObserver =
    std::function<void(const BaselineAgent&, int, std::span<const double>)>;

// total_steps iterations of (update_s, update_m, update_policy) on fresh
// batches with cosine learning rate decay. Throws std::runtime_error with
// step diagnostics if any loss turns non-finite.
SmoreAgent smore_train(const OfflineDataset& dataset,
                       const SmoreConfig& config, std::uint64_t seed,
                       const SmoreObserver& observer = {});

// ---- Baselines. ----

enum class BaselineVariant { gcsl, iql_sparse, gofar_lite };

std::string variant_name(BaselineVariant variant);
BaselineVariant variant_from_name(const std::string& name);

struct BaselineAgent {
  BaselineVariant variant;
  GoalMDP env;
  SmoreConfig config;
  nn::DenseNet policy_net;
  nn::AdamState policy_opt;
  // iql_sparse only.
  nn::DenseNet q_net;
  nn::DenseNet v_net;
  nn::AdamState q_opt;
  nn::AdamState v_opt;
  // gofar_lite only.
  nn::DenseNet disc_net;
  nn::AdamState disc_opt;
  nn::CosineSchedule schedule;
  int step = 0;
};

BaselineAgent make_baseline_agent(BaselineVariant variant, const GoalMDP& env,
                                  const SmoreConfig& config,
                                  std::uint64_t seed);

// Hindsight-relabeled behavior cloning step (gcsl).
double bc_update(BaselineAgent& agent,
                 const std::vector<RelabeledTransition>& batch);

struct IqlLosses {
  double v_loss;
  double q_loss;
  double policy_loss;
};

// Sparse-reward offline RL step: V fits the upper expectile of frozen Q,
// Q regresses onto r + gamma V(s') with the realized goal-entering indicator
// r = 1[phi(s_next) == g], and the policy is advantage-weighted with
// exp(temperature (Q - V)).
IqlLosses iql_update(BaselineAgent& agent,
                     const std::vector<RelabeledTransition>& batch);

// One logistic discriminator step separating goal-achieving (s,g) pairs
// (label 1) from dataset pairs (label 0).
double gofar_disc_update(BaselineAgent& agent,
                         const Eigen::MatrixXd& positive_sg,
                         const Eigen::MatrixXd& negative_sg);

struct GofarLosses {
  double v_loss;
  double policy_loss;
};

// Value step on flow_value_loss with pseudo-reward R = clip(logit, +-10)
// from the frozen discriminator, then weighted regression with
// w = max(0, y/2 + 1).
GofarLosses gofar_update(BaselineAgent& agent,
                         const std::vector<RelabeledTransition>& batch);

BaselineAgent gcsl_train(const OfflineDataset& dataset,
                         const SmoreConfig& config, std::uint64_t seed,
                         const BaselineObserver& observer = {});
BaselineAgent iql_sparse_train(const OfflineDataset& dataset,
                               const SmoreConfig& config, std::uint64_t seed,
                               const BaselineObserver& observer = {});
BaselineAgent gofar_lite_train(const OfflineDataset& dataset,
                               const SmoreConfig& config, std::uint64_t seed,
                               const BaselineObserver& observer = {});

// Greedy: argmax over action logits, ties to the lowest action index.
// Stochastic: softmax sample.
int act(const nn::DenseNet& policy_net, const GoalMDP& env, int s, int g,
        bool greedy, std::mt19937_64& rng);

// Checkpoints: one nn checkpoint per net (prefix.<net>.net) plus a JSON
// sidecar (prefix.json) holding the variant, config, and environment.
void save_smore_agent(const SmoreAgent& agent, const std::string& prefix);
SmoreAgent load_smore_agent(const std::string& prefix);
void save_baseline_agent(const BaselineAgent& agent,
                         const std::string& prefix);
BaselineAgent load_baseline_agent(const std::string& prefix);

}  // namespace smore::agents
