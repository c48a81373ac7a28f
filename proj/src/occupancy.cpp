#include "smore/occupancy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace smore::occupancy {

namespace {

void require_same_shape(const SagTensor& a, const SagTensor& b,
                        const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": tensor shapes differ");
  }
}

// Value iteration for an arbitrary dense reward table r(s,a); returns the
// greedy action per state with ties to the lowest index.
std::vector<int> greedy_for_reward(const GoalMDP& m,
                                   const std::vector<double>& r) {
  const int ns = m.n_states, na = m.n_actions;
  std::vector<double> q(static_cast<size_t>(ns) * na, 0.0);
  std::vector<double> vmax(ns, 0.0);
  double rmax = 0.0;
  for (double x : r) rmax = std::max(rmax, std::abs(x));
  double tol = 1e-12 * std::max(1.0, rmax / (1.0 - m.gamma));
  for (int it = 0; it < 200000; ++it) {
    for (int s = 0; s < ns; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < na; ++a) best = std::max(best, q[s * na + a]);
      vmax[s] = best;
    }
    double delta = 0.0;
    for (int s = 0; s < ns; ++s) {
      for (int a = 0; a < na; ++a) {
        double backup = 0.0;
        for (int s2 = 0; s2 < ns; ++s2) backup += m.p(s, a, s2) * vmax[s2];
        double next = r[s * na + a] + m.gamma * backup;
        delta = std::max(delta, std::abs(next - q[s * na + a]));
        q[s * na + a] = next;
      }
    }
    if (delta < tol) break;
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

double golden_section_min(const std::function<double(double)>& f, double lo,
                          double hi, double tol) {
  const double invphi = 0.6180339887498949;
  double a = lo, b = hi;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 200 && (b - a) > tol; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

SagTensor mixture(double beta, const SagTensor& a, const SagTensor& b) {
  require_same_shape(a, b, "mixture");
  if (beta < 0.0 || beta > 1.0) {
    throw std::invalid_argument("mixture: beta must lie in [0, 1]");
  }
  SagTensor out(a.n_states, a.n_actions, a.n_goals);
  for (size_t i = 0; i < a.size(); ++i) {
    out.v[i] = beta * a.v[i] + (1.0 - beta) * b.v[i];
  }
  return out;
}

double mixture_divergence(const FDivergence& div, const SagTensor& d,
                          const SagTensor& q, const SagTensor& rho,
                          double beta) {
  SagTensor p = mixture(beta, d, rho);
  SagTensor m = mixture(beta, q, rho);
  return divergence::divergence(div, p.v, m.v);
}

double mixture_divergence_smoothed(const FDivergence& div, const SagTensor& d,
                                   const SagTensor& q, const SagTensor& rho,
                                   double beta, double epsilon) {
  SagTensor p = mixture(beta, d, rho);
  SagTensor m = mixture(beta, q, rho);
  double u = epsilon / p.size();
  for (size_t i = 0; i < p.size(); ++i) {
    p.v[i] = (1.0 - epsilon) * p.v[i] + u;
    m.v[i] = (1.0 - epsilon) * m.v[i] + u;
  }
  return divergence::divergence(div, p.v, m.v);
}

PrimalSolution frank_wolfe_primal(const GoalMDP& mdp, const FDivergence& div,
                                  const SagTensor& q, const SagTensor& rho,
                                  const FrankWolfeConfig& config) {
  require_same_shape(q, rho, "frank_wolfe_primal");
  if (config.beta <= 0.0 || config.beta > 1.0) {
    throw std::invalid_argument("frank_wolfe_primal: beta must lie in (0, 1]");
  }
  const int ns = mdp.n_states, na = mdp.n_actions, ng = mdp.n_goals;
  const double beta = config.beta;
  const double eps = config.epsilon;
  const size_t n = q.size();
  const double u = eps / n;

  // Reference side of the divergence is constant across iterations.
  SagTensor mixq = mixture(beta, q, rho);
  std::vector<double> qq(n);
  for (size_t i = 0; i < n; ++i) qq[i] = (1.0 - eps) * mixq.v[i] + u;

  auto smoothed_objective = [&](const std::vector<double>& dv) {
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double p = (1.0 - eps) * (beta * dv[i] + (1.0 - beta) * rho.v[i]) + u;
      total += qq[i] * div.f(p / qq[i]);
    }
    return total;
  };

  OccupancyTensor d = mdp::solve_occupancy(
      mdp, mdp::Policy::uniform(ng, ns, na));

  mdp::Policy vertex_policy = mdp::Policy::uniform(ng, ns, na);
  std::vector<double> grad(n), reward(static_cast<size_t>(ns) * na);
  OccupancyTensor v(ns, na, ng);

  double gap = std::numeric_limits<double>::infinity();
  int it = 0;
  bool converged = false;
  for (; it < config.max_iters; ++it) {
    for (size_t i = 0; i < n; ++i) {
      double p = (1.0 - eps) * (beta * d.v[i] + (1.0 - beta) * rho.v[i]) + u;
      grad[i] = (1.0 - eps) * beta * div.f_prime(p / qq[i]);
    }

    // Linear minimization over the flow polytope, one MDP solve per goal.
    std::fill(v.v.begin(), v.v.end(), 0.0);
    for (int g = 0; g < ng; ++g) {
      if (mdp.q_train[g] <= 0.0) continue;
      for (int s = 0; s < ns; ++s) {
        for (int a = 0; a < na; ++a) {
          reward[static_cast<size_t>(s) * na + a] = -grad[d.index(s, a, g)];
        }
      }
      std::vector<int> greedy = greedy_for_reward(mdp, reward);
      for (int s = 0; s < ns; ++s) {
        for (int a = 0; a < na; ++a) {
          vertex_policy.at(g, s, a) = (a == greedy[s]) ? 1.0 : 0.0;
        }
      }
      std::vector<double> dg = mdp::occupancy_for_goal(mdp, vertex_policy, g);
      for (int s = 0; s < ns; ++s) {
        for (int a = 0; a < na; ++a) {
          v.at(s, a, g) = mdp.q_train[g] * dg[static_cast<size_t>(s) * na + a];
        }
      }
    }

    gap = 0.0;
    for (size_t i = 0; i < n; ++i) gap += grad[i] * (d.v[i] - v.v[i]);
    if (gap <= config.gap_tol) {
      converged = true;
      break;
    }

    double t = golden_section_min(
        [&](double step) {
          double total = 0.0;
          for (size_t i = 0; i < n; ++i) {
            double di = d.v[i] + step * (v.v[i] - d.v[i]);
            double p =
                (1.0 - eps) * (beta * di + (1.0 - beta) * rho.v[i]) + u;
            total += qq[i] * div.f(p / qq[i]);
          }
          return total;
        },
        0.0, 1.0, 1e-10);
    for (size_t i = 0; i < n; ++i) {
      d.v[i] = std::max(0.0, d.v[i] + t * (v.v[i] - d.v[i]));
    }
  }

  PrimalSolution sol;
  sol.occupancy = d;
  sol.policy = extract_policy(d);
  sol.objective = smoothed_objective(d.v);
  try {
    sol.objective_raw = mixture_divergence(div, d, q, rho, beta);
  } catch (const std::domain_error&) {
    sol.objective_raw = std::numeric_limits<double>::quiet_NaN();
  }
  sol.gap = gap;
  sol.iters = it;
  sol.converged = converged;
  return sol;
}

OracleSolution exhaustive_policy_oracle(const GoalMDP& mdp,
                                        const FDivergence& div,
                                        const SagTensor& q,
                                        const SagTensor& rho, double beta,
                                        double epsilon) {
  require_same_shape(q, rho, "exhaustive_policy_oracle");
  const int ns = mdp.n_states, na = mdp.n_actions, ng = mdp.n_goals;
  double log_count = static_cast<double>(ns) * ng * std::log(na);
  if (log_count > std::log(1e6)) {
    std::ostringstream msg;
    msg << "exhaustive oracle: " << na << "^(" << ns << "*" << ng
        << ") deterministic policies exceed the 1e6 enumeration bound";
    throw std::invalid_argument(msg.str());
  }

  const size_t n = q.size();
  const double u = epsilon / n;
  SagTensor mixq = mixture(beta, q, rho);
  std::vector<double> qq(n);
  for (size_t i = 0; i < n; ++i) qq[i] = (1.0 - epsilon) * mixq.v[i] + u;

  mdp::Policy best = mdp::Policy::uniform(ng, ns, na);
  mdp::Policy scratch = mdp::Policy::uniform(ng, ns, na);

  // The objective is a sum of per-(s,a,g) terms and the flow constraints do
  // not couple goals, so the best deterministic policy factors per goal.
  for (int g = 0; g < ng; ++g) {
    if (mdp.q_train[g] <= 0.0) continue;
    std::vector<int> assign(ns, 0);
    std::vector<int> best_assign(ns, 0);
    double best_value = std::numeric_limits<double>::infinity();
    while (true) {
      for (int s = 0; s < ns; ++s) {
        for (int a = 0; a < na; ++a) {
          scratch.at(g, s, a) = (a == assign[s]) ? 1.0 : 0.0;
        }
      }
      std::vector<double> dg = mdp::occupancy_for_goal(mdp, scratch, g);
      double value = 0.0;
      for (int s = 0; s < ns; ++s) {
        for (int a = 0; a < na; ++a) {
          size_t i = q.index(s, a, g);
          double di = mdp.q_train[g] * dg[static_cast<size_t>(s) * na + a];
          double p =
              (1.0 - epsilon) * (beta * di + (1.0 - beta) * rho.v[i]) + u;
          value += qq[i] * div.f(p / qq[i]);
        }
      }
      if (value < best_value) {
        best_value = value;
        best_assign = assign;
      }
      int pos = 0;
      while (pos < ns && ++assign[pos] == na) assign[pos++] = 0;
      if (pos == ns) break;
    }
    for (int s = 0; s < ns; ++s) {
      for (int a = 0; a < na; ++a) {
        best.at(g, s, a) = (a == best_assign[s]) ? 1.0 : 0.0;
      }
    }
  }

  OracleSolution sol;
  sol.policy = best;
  sol.occupancy = mdp::solve_occupancy(mdp, best);
  sol.objective =
      mixture_divergence_smoothed(div, sol.occupancy, q, rho, beta, epsilon);
  return sol;
}

mdp::Policy extract_policy(const OccupancyTensor& d) {
  mdp::Policy pi(d.n_goals, d.n_states, d.n_actions);
  for (int g = 0; g < d.n_goals; ++g) {
    for (int s = 0; s < d.n_states; ++s) {
      double mass = 0.0;
      for (int a = 0; a < d.n_actions; ++a) mass += d.at(s, a, g);
      for (int a = 0; a < d.n_actions; ++a) {
        pi.at(g, s, a) =
            mass > 1e-15 ? d.at(s, a, g) / mass : 1.0 / d.n_actions;
      }
    }
  }
  return pi;
}

nlohmann::json to_json(const PrimalSolution& sol) {
  return nlohmann::json{{"n_states", sol.occupancy.n_states},
                        {"n_actions", sol.occupancy.n_actions},
                        {"n_goals", sol.occupancy.n_goals},
                        {"occupancy", sol.occupancy.v},
                        {"objective", sol.objective},
                        {"objective_raw", sol.objective_raw},
                        {"gap", sol.gap},
                        {"iters", sol.iters},
                        {"converged", sol.converged}};
}

}  // namespace smore::occupancy
