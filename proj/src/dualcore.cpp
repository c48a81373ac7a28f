#include "smore/dualcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "smore/occupancy.hpp"

namespace smore::dualcore {

namespace {

constexpr double kKlExponentGuard = 50.0;

SagTensor mix_tensor(const SagTensor& q, const SagTensor& rho, double beta) {
  SagTensor m(q.n_states, q.n_actions, q.n_goals);
  for (size_t i = 0; i < q.size(); ++i) {
    m.v[i] = beta * q.v[i] + (1.0 - beta) * rho.v[i];
  }
  return m;
}

void require_inputs(const GoalMDP& mdp, const SagTensor& q,
                    const SagTensor& rho, double beta, const char* what) {
  if (q.n_states != mdp.n_states || q.n_actions != mdp.n_actions ||
      q.n_goals != mdp.n_goals || !q.same_shape(rho)) {
    throw std::invalid_argument(std::string(what) +
                                ": tensor shapes do not match the mdp");
  }
  if (beta <= 0.0 || beta > 1.0) {
    throw std::invalid_argument(std::string(what) +
                                ": beta must lie in (0, 1]");
  }
}

// Soft-greedy policy pi(a|s,g) proportional to exp(scale * T(s,a,g)).
Policy softmax_policy(const SagTensor& t, double scale) {
  Policy pi(t.n_goals, t.n_states, t.n_actions);
  for (int g = 0; g < t.n_goals; ++g) {
    for (int s = 0; s < t.n_states; ++s) {
      double hi = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < t.n_actions; ++a) {
        hi = std::max(hi, scale * t.at(s, a, g));
      }
      double total = 0.0;
      for (int a = 0; a < t.n_actions; ++a) {
        double e = std::exp(scale * t.at(s, a, g) - hi);
        pi.at(g, s, a) = e;
        total += e;
      }
      for (int a = 0; a < t.n_actions; ++a) pi.at(g, s, a) /= total;
    }
  }
  return pi;
}

// Adjoint of the residual map y = gamma P^pi S - S applied to a coefficient
// tensor c: out(u,b,h) = gamma sum_{s,a} c(s,a,h) p(u|s,a) pi(b|u,h) - c(u,b,h).
void accumulate_residual_adjoint(const GoalMDP& mdp, const Policy& policy,
                                 const SagTensor& c, SagTensor& out) {
  const int ns = mdp.n_states, na = mdp.n_actions, ng = mdp.n_goals;
  std::vector<double> inflow(ns);
  for (int g = 0; g < ng; ++g) {
    std::fill(inflow.begin(), inflow.end(), 0.0);
    for (int s = 0; s < ns; ++s) {
      for (int a = 0; a < na; ++a) {
        double w = c.at(s, a, g);
        if (w == 0.0) continue;
        for (int u = 0; u < ns; ++u) inflow[u] += w * mdp.p(s, a, u);
      }
    }
    for (int u = 0; u < ns; ++u) {
      for (int b = 0; b < na; ++b) {
        out.at(u, b, g) +=
            mdp.gamma * inflow[u] * policy.at(g, u, b) - c.at(u, b, g);
      }
    }
  }
}

double initial_term(const GoalMDP& mdp, const Policy& policy,
                    const ScoreTable& s) {
  double total = 0.0;
  for (int st = 0; st < mdp.n_states; ++st) {
    if (mdp.d0[st] <= 0.0) continue;
    for (int g = 0; g < mdp.n_goals; ++g) {
      double w = mdp.d0[st] * mdp.q_train[g];
      if (w <= 0.0) continue;
      double row = 0.0;
      for (int a = 0; a < mdp.n_actions; ++a) {
        row += policy.at(g, st, a) * s.at(st, a, g);
      }
      total += w * row;
    }
  }
  return total;
}

}  // namespace

SagTensor policy_backup(const GoalMDP& mdp, const Policy& policy,
                        const ScoreTable& scores) {
  const int ns = mdp.n_states, na = mdp.n_actions, ng = mdp.n_goals;
  SagTensor out(ns, na, ng);
  std::vector<double> next_value(ns);
  for (int g = 0; g < ng; ++g) {
    for (int s2 = 0; s2 < ns; ++s2) {
      double v = 0.0;
      for (int a2 = 0; a2 < na; ++a2) {
        v += policy.at(g, s2, a2) * scores.at(s2, a2, g);
      }
      next_value[s2] = v;
    }
    for (int s = 0; s < ns; ++s) {
      for (int a = 0; a < na; ++a) {
        double e = 0.0;
        for (int s2 = 0; s2 < ns; ++s2) e += mdp.p(s, a, s2) * next_value[s2];
        out.at(s, a, g) = e;
      }
    }
  }
  return out;
}

double dual_objective_general(const ScoreTable& scores, const Policy& policy,
                              const FDivergence& div, const SagTensor& q,
                              const SagTensor& rho, double beta,
                              const GoalMDP& mdp) {
  require_inputs(mdp, q, rho, beta, "dual_objective_general");
  SagTensor backup = policy_backup(mdp, policy, scores);
  double total = beta * (1.0 - mdp.gamma) * initial_term(mdp, policy, scores);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      for (int g = 0; g < mdp.n_goals; ++g) {
        size_t i = scores.index(s, a, g);
        double y = mdp.gamma * backup.v[i] - scores.v[i];
        double m = beta * q.v[i] + (1.0 - beta) * rho.v[i];
        if (m > 0.0) {
          if (!div.in_conjugate_domain(y)) {
            std::ostringstream msg;
            msg << div.name << ": dual residual " << y << " at (s = " << s
                << ", a = " << a << ", g = " << g
                << ") is outside the conjugate domain";
            throw std::domain_error(msg.str());
          }
          total += m * div.f_star(y);
        }
        total -= (1.0 - beta) * rho.v[i] * y;
      }
    }
  }
  return total;
}

double dual_objective_chi2(const ScoreTable& scores, const Policy& policy,
                           const SagTensor& q, const SagTensor& rho,
                           double beta, const GoalMDP& mdp) {
  require_inputs(mdp, q, rho, beta, "dual_objective_chi2");
  SagTensor backup = policy_backup(mdp, policy, scores);
  double total = beta * (1.0 - mdp.gamma) * initial_term(mdp, policy, scores);
  for (size_t i = 0; i < scores.size(); ++i) {
    double y = mdp.gamma * backup.v[i] - scores.v[i];
    double m = beta * q.v[i] + (1.0 - beta) * rho.v[i];
    total += beta * mdp.gamma * q.v[i] * backup.v[i];
    total -= beta * q.v[i] * scores.v[i];
    total += 0.25 * m * y * y;
  }
  return total;
}

double dual_objective_kl(const ScoreTable& scores, const Policy& policy,
                         const SagTensor& q, const SagTensor& rho, double beta,
                         const GoalMDP& mdp) {
  require_inputs(mdp, q, rho, beta, "dual_objective_kl");
  SagTensor backup = policy_backup(mdp, policy, scores);
  double total = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int g = 0; g < mdp.n_goals; ++g) {
      double marg = 0.0;
      double on_policy = 0.0;
      for (int a = 0; a < mdp.n_actions; ++a) {
        marg += rho.at(s, a, g);
        on_policy += policy.at(g, s, a) * scores.at(s, a, g);
      }
      total += beta * (1.0 - mdp.gamma) * marg * on_policy;
    }
  }
  for (size_t i = 0; i < scores.size(); ++i) {
    total += (1.0 - beta) * rho.v[i] * scores.v[i];
    double m = beta * q.v[i] + (1.0 - beta) * rho.v[i];
    if (m > 0.0) {
      double y = mdp.gamma * backup.v[i] - scores.v[i];
      if (y > kKlExponentGuard) {
        std::ostringstream msg;
        msg << "kl dual: residual exponent " << y
            << " exceeds the overflow guard; normalize the scores";
        throw std::domain_error(msg.str());
      }
      total += m * std::exp(y);
    }
  }
  return total;
}

DualSolution solve_dual_tabular(const GoalMDP& mdp, const FDivergence& div,
                                double beta, const SagTensor& q,
                                const SagTensor& rho,
                                const DualConfig& config) {
  require_inputs(mdp, q, rho, beta, "solve_dual_tabular");
  const bool use_chi2 = div.kind == divergence::Kind::chi2;
  if (!use_chi2 && div.kind != divergence::Kind::kl_reverse) {
    throw std::invalid_argument(
        "solve_dual_tabular: only chi2 and kl_reverse are supported");
  }
  const int ns = mdp.n_states, na = mdp.n_actions, ng = mdp.n_goals;
  SagTensor mix = mix_tensor(q, rho, beta);
  ScoreTable s(ns, na, ng);
  SagTensor grad(ns, na, ng), c(ns, na, ng);
  Policy pi;

  auto objective = [&](const Policy& policy) {
    return use_chi2 ? dual_objective_chi2(s, policy, q, rho, beta, mdp)
                    : dual_objective_kl(s, policy, q, rho, beta, mdp);
  };

  std::vector<double> history;
  for (int step = 0; step < config.steps; ++step) {
    pi = softmax_policy(s, 1.0 / config.policy_temperature);
    if (config.record_history) history.push_back(objective(pi));
    SagTensor backup = policy_backup(mdp, pi, s);

    std::fill(grad.v.begin(), grad.v.end(), 0.0);
    if (use_chi2) {
      // Linear part: beta (1-gamma) d0(s,g) pi(a|s,g).
      for (int st = 0; st < ns; ++st) {
        for (int g = 0; g < ng; ++g) {
          double w = beta * (1.0 - mdp.gamma) * mdp.d0[st] * mdp.q_train[g];
          if (w == 0.0) continue;
          for (int a = 0; a < na; ++a) {
            grad.at(st, a, g) += w * pi.at(g, st, a);
          }
        }
      }
      for (size_t i = 0; i < s.size(); ++i) {
        double y = mdp.gamma * backup.v[i] - s.v[i];
        c.v[i] = mix.v[i] * (1.0 + 0.5 * y) - (1.0 - beta) * rho.v[i];
      }
    } else {
      for (int st = 0; st < ns; ++st) {
        for (int g = 0; g < ng; ++g) {
          double marg = 0.0;
          for (int a = 0; a < na; ++a) marg += rho.at(st, a, g);
          double w = beta * (1.0 - mdp.gamma) * marg;
          for (int a = 0; a < na; ++a) {
            grad.at(st, a, g) +=
                w * pi.at(g, st, a) + (1.0 - beta) * rho.at(st, a, g);
          }
        }
      }
      for (size_t i = 0; i < s.size(); ++i) {
        double y = mdp.gamma * backup.v[i] - s.v[i];
        c.v[i] = mix.v[i] > 0.0 ? mix.v[i] * std::exp(std::min(y, 60.0)) : 0.0;
      }
    }
    accumulate_residual_adjoint(mdp, pi, c, grad);

    bool finite = true;
    for (size_t i = 0; i < s.size(); ++i) {
      s.v[i] -= config.lr * grad.v[i];
      finite = finite && std::isfinite(s.v[i]);
    }
    if (!finite) {
      std::ostringstream msg;
      msg << "dual solver diverged at step " << step;
      throw std::runtime_error(msg.str());
    }
  }

  DualSolution sol;
  sol.policy = softmax_policy(s, 1.0 / config.policy_temperature);
  sol.scores = s;
  sol.objective = objective(sol.policy);
  if (!std::isfinite(sol.objective)) {
    std::ostringstream msg;
    msg << "dual solver diverged at step " << config.steps;
    throw std::runtime_error(msg.str());
  }
  sol.converged = true;
  sol.history = std::move(history);
  return sol;
}

double closed_form_weight(const FDivergence& div, double y) {
  return std::max(0.0, divergence::derivative_inverse(div, y));
}

double action_free_dual_objective(const ValueTable& values,
                                  const FDivergence& div, const SagTensor& q,
                                  const SagTensor& rho, double beta,
                                  const GoalMDP& mdp) {
  require_inputs(mdp, q, rho, beta, "action_free_dual_objective");
  const int ns = mdp.n_states, na = mdp.n_actions, ng = mdp.n_goals;
  double total = 0.0;
  for (int s = 0; s < ns; ++s) {
    for (int g = 0; g < ng; ++g) {
      total += beta * (1.0 - mdp.gamma) * mdp.d0[s] * mdp.q_train[g] *
               values.at(s, g);
    }
  }
  for (int s = 0; s < ns; ++s) {
    for (int a = 0; a < na; ++a) {
      std::vector<double> next(ng, 0.0);
      for (int s2 = 0; s2 < ns; ++s2) {
        double p = mdp.p(s, a, s2);
        if (p == 0.0) continue;
        for (int g = 0; g < ng; ++g) next[g] += p * values.at(s2, g);
      }
      for (int g = 0; g < ng; ++g) {
        double y = mdp.gamma * next[g] - values.at(s, g);
        double m = beta * q.at(s, a, g) + (1.0 - beta) * rho.at(s, a, g);
        if (m > 0.0) {
          double w = closed_form_weight(div, y);
          total += m * (w * y - div.f(w));
        }
        total -= (1.0 - beta) * rho.at(s, a, g) * y;
      }
    }
  }
  return total;
}

DualSolution solve_dual_action_free(const GoalMDP& mdp, const FDivergence& div,
                                    double beta, const SagTensor& q,
                                    const SagTensor& rho,
                                    const ActionFreeConfig& config) {
  require_inputs(mdp, q, rho, beta, "solve_dual_action_free");
  const int ns = mdp.n_states, na = mdp.n_actions, ng = mdp.n_goals;
  ValueTable v(ns, ng);
  SagTensor y(ns, na, ng);

  auto compute_residuals = [&]() {
    for (int s = 0; s < ns; ++s) {
      for (int a = 0; a < na; ++a) {
        for (int g = 0; g < ng; ++g) {
          double next = 0.0;
          for (int s2 = 0; s2 < ns; ++s2) {
            double p = mdp.p(s, a, s2);
            if (p != 0.0) next += p * v.at(s2, g);
          }
          y.at(s, a, g) = mdp.gamma * next - v.at(s, g);
        }
      }
    }
  };

  std::vector<double> grad(static_cast<size_t>(ns) * ng);
  for (int step = 0; step < config.steps; ++step) {
    compute_residuals();
    std::fill(grad.begin(), grad.end(), 0.0);
    for (int s = 0; s < ns; ++s) {
      for (int g = 0; g < ng; ++g) {
        grad[static_cast<size_t>(s) * ng + g] +=
            beta * (1.0 - mdp.gamma) * mdp.d0[s] * mdp.q_train[g];
      }
    }
    // Envelope theorem: d/dy [w* y - f(w*)] = w*, so the conjugate term
    // contributes through the residual map exactly like a linear term.
    for (int s = 0; s < ns; ++s) {
      for (int a = 0; a < na; ++a) {
        for (int g = 0; g < ng; ++g) {
          double m = beta * q.at(s, a, g) + (1.0 - beta) * rho.at(s, a, g);
          double e = -(1.0 - beta) * rho.at(s, a, g);
          if (m > 0.0) e += m * closed_form_weight(div, y.at(s, a, g));
          if (e == 0.0) continue;
          grad[static_cast<size_t>(s) * ng + g] -= e;
          for (int s2 = 0; s2 < ns; ++s2) {
            double p = mdp.p(s, a, s2);
            if (p != 0.0) {
              grad[static_cast<size_t>(s2) * ng + g] += mdp.gamma * e * p;
            }
          }
        }
      }
    }
    bool finite = true;
    for (size_t i = 0; i < v.v.size(); ++i) {
      v.v[i] -= config.lr * grad[i];
      finite = finite && std::isfinite(v.v[i]);
    }
    if (!finite) {
      std::ostringstream msg;
      msg << "action-free dual solver diverged at step " << step;
      throw std::runtime_error(msg.str());
    }
  }

  compute_residuals();
  DualSolution sol;
  sol.values = v;
  // KKT primal reconstruction: the optimal weight w* is the ratio
  // Mix_d*/Mix_q, so d* = (w* Mix_q - (1-beta) rho) / beta clamped at 0.
  // Recovering the policy from d* (rather than from w* directly) avoids the
  // bias toward actions the reference mixture barely covers.
  SagTensor d_star(ns, na, ng);
  for (int s = 0; s < ns; ++s) {
    for (int a = 0; a < na; ++a) {
      for (int g = 0; g < ng; ++g) {
        double m = beta * q.at(s, a, g) + (1.0 - beta) * rho.at(s, a, g);
        double w = m > 0.0 ? closed_form_weight(div, y.at(s, a, g)) : 0.0;
        d_star.at(s, a, g) =
            std::max(0.0, w * m - (1.0 - beta) * rho.at(s, a, g)) / beta;
      }
    }
  }
  sol.policy = occupancy::extract_policy(d_star);
  sol.objective = action_free_dual_objective(v, div, q, rho, beta, mdp);
  if (!std::isfinite(sol.objective)) {
    throw std::runtime_error("action-free dual solver produced a non-finite "
                             "objective");
  }
  sol.converged = true;
  return sol;
}

double exact_min_scores_chi2(const GoalMDP& mdp, double beta,
                             const SagTensor& q, const SagTensor& rho,
                             const Policy& policy) {
  require_inputs(mdp, q, rho, beta, "exact_min_scores_chi2");
  const int ns = mdp.n_states, na = mdp.n_actions, ng = mdp.n_goals;
  const int n = ns * na * ng;
  if (n > 2000) {
    throw std::invalid_argument(
        "exact_min_scores_chi2: instance too large for the dense solve");
  }
  SagTensor mix = mix_tensor(q, rho, beta);

  // y = A S with A = gamma B - I; objective = L.S + beta q.(A S)
  // + 0.25 (A S)^T diag(mix) (A S). Stationarity: 0.5 A^T diag(mix) A S
  // = -(L + beta A^T q).
  Eigen::MatrixXd a_mat = Eigen::MatrixXd::Zero(n, n);
  SagTensor idx(ns, na, ng);
  for (int s = 0; s < ns; ++s) {
    for (int a = 0; a < na; ++a) {
      for (int g = 0; g < ng; ++g) {
        int row = static_cast<int>(idx.index(s, a, g));
        a_mat(row, row) -= 1.0;
        for (int s2 = 0; s2 < ns; ++s2) {
          double p = mdp.p(s, a, s2);
          if (p == 0.0) continue;
          for (int a2 = 0; a2 < na; ++a2) {
            int col = static_cast<int>(idx.index(s2, a2, g));
            a_mat(row, col) += mdp.gamma * p * policy.at(g, s2, a2);
          }
        }
      }
    }
  }
  Eigen::VectorXd lin(n), qv(n), mv(n);
  for (int s = 0; s < ns; ++s) {
    for (int a = 0; a < na; ++a) {
      for (int g = 0; g < ng; ++g) {
        int i = static_cast<int>(idx.index(s, a, g));
        lin(i) = beta * (1.0 - mdp.gamma) * mdp.d0[s] * mdp.q_train[g] *
                 policy.at(g, s, a);
        qv(i) = q.at(s, a, g);
        mv(i) = mix.at(s, a, g);
      }
    }
  }
  Eigen::MatrixXd k =
      0.5 * a_mat.transpose() * mv.asDiagonal() * a_mat;
  Eigen::VectorXd rhs = -(lin + beta * a_mat.transpose() * qv);
  Eigen::VectorXd s_opt =
      k.completeOrthogonalDecomposition().solve(rhs);

  ScoreTable s(ns, na, ng);
  for (int i = 0; i < n; ++i) s.v[i] = s_opt(i);
  return dual_objective_chi2(s, policy, q, rho, beta, mdp);
}

nlohmann::json to_json(const DualSolution& sol) {
  nlohmann::json j{{"objective", sol.objective},
                   {"converged", sol.converged}};
  if (!sol.scores.v.empty()) {
    j["variable"] = "scores";
    j["n_states"] = sol.scores.n_states;
    j["n_actions"] = sol.scores.n_actions;
    j["n_goals"] = sol.scores.n_goals;
    j["scores"] = sol.scores.v;
  } else {
    j["variable"] = "values";
    j["n_states"] = sol.values.n_states;
    j["n_goals"] = sol.values.n_goals;
    j["values"] = sol.values.v;
  }
  j["policy"] = sol.policy.probs;
  return j;
}

}  // namespace smore::dualcore
