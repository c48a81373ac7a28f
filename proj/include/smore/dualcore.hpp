#pragma once

#include <nlohmann/json_fwd.hpp>

#include "smore/divergence.hpp"
#include "smore/mdp.hpp"

namespace smore::dualcore {

using divergence::FDivergence;
using mdp::GoalMDP;
using mdp::Policy;
using mdp::SagTensor;

/// Dual variable over (s,a,g). Unbounded reals.
using ScoreTable = SagTensor;
/// Action-free dual variable over (s,g).
using ValueTable = mdp::SgTensor;

/// (P^pi S)(s,a,g) = sum_{s'} p(s'|s,a) sum_{a'} pi(a'|s',g) S(s',a',g).
SagTensor policy_backup(const GoalMDP& mdp, const Policy& policy,
                        const ScoreTable& scores);

/// General-f dual of the mixture matching problem:
///   beta (1-gamma) E_{d0,pi}[S]
///   + E_{Mix_beta(q,rho)}[ f*(gamma P^pi S - S) ]
///   - (1-beta) E_rho[ gamma P^pi S - S ].
/// Throws std::domain_error naming the offending (s,a,g) when a sampled
/// residual leaves the conjugate domain.
double dual_objective_general(const ScoreTable& scores, const Policy& policy,
                              const FDivergence& div, const SagTensor& q,
                              const SagTensor& rho, double beta,
                              const GoalMDP& mdp);

/// Contrastive chi-squared form with the exact 0.25 quadratic coefficient:
///   beta (1-gamma) E_{d0,pi}[S] + beta gamma E_{q,s'~p,a'~pi}[S(s',a',g)]
///   - beta E_q[S] + 0.25 E_{Mix_beta(q,rho)}[(gamma P^pi S - S)^2].
/// Algebraically identical to the general form with the chi2 entry.
double dual_objective_chi2(const ScoreTable& scores, const Policy& policy,
                           const SagTensor& q, const SagTensor& rho,
                           double beta, const GoalMDP& mdp);

/// Reverse-KL dual in the telescoped form:
///   E_rho[ beta (1-gamma) E_{a~pi} S + (1-beta) E_{a~rho} S ]
///   + E_{Mix_beta(q,rho)}[ e^{gamma P^pi S - S} ].
/// Residual exponents above 50 throw, advising score normalization.
double dual_objective_kl(const ScoreTable& scores, const Policy& policy,
                         const SagTensor& q, const SagTensor& rho, double beta,
                         const GoalMDP& mdp);

struct DualConfig {
  int steps = 5000;
  double lr = 0.1;
  double policy_temperature = 0.05;  // pi proportional to exp(S / temperature)
  bool record_history = false;       // keep the per-step objective trace
};

struct ActionFreeConfig {
  int steps = 5000;
  double lr = 0.1;
};

struct DualSolution {
  ScoreTable scores;  // filled by the action-full solver
  ValueTable values;  // filled by the action-free solver
  Policy policy;
  double objective = 0.0;
  bool converged = false;          // all steps ran with a finite objective
  std::vector<double> history;     // per-step objectives when recorded
};

/// Alternating tabular solver: one analytic gradient-descent step on the
/// scores per iteration, with the soft-greedy policy refreshed from the
/// scores every step. div must be chi2 or kl_reverse. A non-finite objective
/// throws std::runtime_error naming the step.
DualSolution solve_dual_tabular(const GoalMDP& mdp, const FDivergence& div,
                                double beta, const SagTensor& q,
                                const SagTensor& rho, const DualConfig& config);

/// Theorem-2 KKT weight w*(y) = max(0, (f')^{-1}(y)).
double closed_form_weight(const FDivergence& div, double y);

/// Action-free dual with the inner maximization solved in closed form:
///   beta (1-gamma) E_{d0}[V] + E_{Mix_beta(q,rho)}[ w* y - f(w*) ]
///   - (1-beta) E_rho[ gamma E_{s'}[V(s',g)] - V(s,g) ]
/// with y(s,a,g) = gamma E_{s'}[V(s',g)] - V(s,g), w* = closed_form_weight.
double action_free_dual_objective(const ValueTable& values,
                                  const FDivergence& div, const SagTensor& q,
                                  const SagTensor& rho, double beta,
                                  const GoalMDP& mdp);

/// Gradient descent on V; the policy is recovered from the advantage-shaped
/// residual as pi(a|s,g) proportional to exp(sharpness * y(s,a,g)).
DualSolution solve_dual_action_free(const GoalMDP& mdp, const FDivergence& div,
                                    double beta, const SagTensor& q,
                                    const SagTensor& rho,
                                    const ActionFreeConfig& config);

/// Exact minimizer of the chi2 dual over scores at a fixed policy. The
/// objective is a convex quadratic in S, so the first-order condition is a
/// linear system; returns the minimal objective value. Used by the duality
/// certificates.
double exact_min_scores_chi2(const GoalMDP& mdp, double beta,
                             const SagTensor& q, const SagTensor& rho,
                             const Policy& policy);

nlohmann::json to_json(const DualSolution& sol);

}  // namespace smore::dualcore
