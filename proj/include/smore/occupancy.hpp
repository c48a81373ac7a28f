#pragma once

#include <span>

#include <nlohmann/json_fwd.hpp>

#include "smore/divergence.hpp"
#include "smore/mdp.hpp"

namespace smore::occupancy {

using divergence::FDivergence;
using mdp::GoalMDP;
using mdp::OccupancyTensor;
using mdp::SagTensor;

/// beta * a + (1 - beta) * b, elementwise. Shapes must match.
SagTensor mixture(double beta, const SagTensor& a, const SagTensor& b);

/// D_f( beta d + (1-beta) rho || beta q + (1-beta) rho ), evaluated raw:
/// support violations throw.
double mixture_divergence(const FDivergence& div, const SagTensor& d,
                          const SagTensor& q, const SagTensor& rho,
                          double beta);

/// Same objective with `epsilon` uniform mass mixed into both arguments, so
/// every atom has positive reference mass. This is the objective the primal
/// solver optimizes.
double mixture_divergence_smoothed(const FDivergence& div, const SagTensor& d,
                                   const SagTensor& q, const SagTensor& rho,
                                   double beta, double epsilon = 1e-9);

struct FrankWolfeConfig {
  double beta = 0.5;
  int max_iters = 2000;
  double gap_tol = 1e-6;
  double epsilon = 1e-9;  // support smoothing for the optimized objective
};

struct PrimalSolution {
  OccupancyTensor occupancy;
  mdp::Policy policy;     // conditionals of the occupancy
  double objective = 0;   // smoothed mixture divergence at `occupancy`
  double objective_raw =
      0;                  // unsmoothed value; NaN when the support is violated
  double gap = 0;         // final Frank-Wolfe gap, certifies objective - opt
  int iters = 0;
  bool converged = false;  // gap <= gap_tol was reached
};

/// Convex minimization of the smoothed mixture divergence over the
/// Bellman-flow polytope by Frank-Wolfe. Each linear step solves a per-goal
/// MDP whose reward is the negated objective gradient; steps use exact golden
/// section line search. The returned gap bounds the suboptimality of
/// `objective`.
PrimalSolution frank_wolfe_primal(const GoalMDP& mdp, const FDivergence& div,
                                  const SagTensor& q, const SagTensor& rho,
                                  const FrankWolfeConfig& config);

struct OracleSolution {
  mdp::Policy policy;
  OccupancyTensor occupancy;
  double objective = 0;  // smoothed, same evaluation as the primal solver
};

/// Brute-force minimum over deterministic goal-conditioned policies. The
/// objective separates across goals, so enumeration runs per goal; the guard
/// still bounds the nominal policy count n_actions^(n_states * n_goals).
OracleSolution exhaustive_policy_oracle(const GoalMDP& mdp,
                                        const FDivergence& div,
                                        const SagTensor& q,
                                        const SagTensor& rho, double beta,
                                        double epsilon = 1e-9);

/// Conditional policy pi(a|s,g) = d(s,a,g) / sum_a d(s,a,g); rows with no
/// mass fall back to uniform.
mdp::Policy extract_policy(const OccupancyTensor& d);

nlohmann::json to_json(const PrimalSolution& sol);

}  // namespace smore::occupancy
