#include "smore/agents.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace smore::agents {

namespace {

constexpr double kAwrClip = 100.0;
constexpr double kRewardClip = 10.0;

void require_finite(double loss, const char* name, int step) {
  if (!std::isfinite(loss)) {
    throw std::runtime_error("training diverged: " + std::string(name) +
                             " loss is non-finite at step " +
                             std::to_string(step));
  }
}

void check_index(int value, int bound, const char* what) {
  if (value < 0 || value >= bound) {
    throw std::invalid_argument(std::string(what) + " index " +
                                std::to_string(value) + " outside [0, " +
                                std::to_string(bound) + ")");
  }
}

Eigen::VectorXd column(const Eigen::MatrixXd& out) {
  if (out.cols() != 1) {
    throw std::invalid_argument("expected a single output column, got " +
                                std::to_string(out.cols()));
  }
  return out.col(0);
}

// Row-wise softmax probabilities with max-shift stabilization.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    p.row(i).array() -= p.row(i).maxCoeff();
    p.row(i) = p.row(i).array().exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

struct BatchViews {
  std::vector<int> s, a, s_next, g;
};

BatchViews split(const std::vector<RelabeledTransition>& batch) {
  BatchViews v;
  v.s.reserve(batch.size());
  v.a.reserve(batch.size());
  v.s_next.reserve(batch.size());
  v.g.reserve(batch.size());
  for (const RelabeledTransition& t : batch) {
    v.s.push_back(t.s);
    v.a.push_back(t.a);
    v.s_next.push_back(t.s_next);
    v.g.push_back(t.g);
  }
  return v;
}

std::vector<int> hidden_then(const std::vector<int>& hidden, int in, int out) {
  std::vector<int> sizes;
  sizes.push_back(in);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

double current_lr(const nn::CosineSchedule& schedule, const SmoreConfig& cfg,
                  int step) {
  return nn::cosine_lr(schedule, cfg.base_lr, std::min(step, schedule.total_steps));
}

std::vector<RelabeledTransition> draw_rho_batch(const OfflineDataset& dataset,
                                                const SmoreConfig& cfg,
                                                std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0,
                                                  dataset.transitions.size() - 1);
  std::vector<std::size_t> indices(static_cast<std::size_t>(cfg.batch_size));
  for (auto& i : indices) i = pick(rng);
  return data::her_relabel(dataset, indices, cfg.her_ratio, rng);
}

}  // namespace

void require_config(const SmoreConfig& config) {
  if (!(config.beta > 0.0 && config.beta <= 1.0)) {
    throw std::invalid_argument("beta must lie in (0, 1]");
  }
  if (!(config.expectile > 0.5 && config.expectile < 1.0)) {
    throw std::invalid_argument("expectile must lie in (0.5, 1)");
  }
  if (!(config.awr_temperature > 0.0)) {
    throw std::invalid_argument("awr_temperature must be positive");
  }
  if (!(config.her_ratio >= 0.0 && config.her_ratio <= 1.0)) {
    throw std::invalid_argument("her_ratio must lie in [0, 1]");
  }
  if (!(config.gamma > 0.0 && config.gamma < 1.0)) {
    throw std::invalid_argument("gamma must lie in (0, 1)");
  }
  if (config.batch_size <= 0 || config.total_steps < 0 ||
      config.disc_steps < 0) {
    throw std::invalid_argument("batch_size and step counts must be positive");
  }
  if (!(config.base_lr > 0.0)) {
    throw std::invalid_argument("base_lr must be positive");
  }
}

nlohmann::json config_to_json(const SmoreConfig& c) {
  return nlohmann::json{{"beta", c.beta},
                        {"awr_temperature", c.awr_temperature},
                        {"expectile", c.expectile},
                        {"her_ratio", c.her_ratio},
                        {"gamma", c.gamma},
                        {"batch_size", c.batch_size},
                        {"total_steps", c.total_steps},
                        {"base_lr", c.base_lr},
                        {"hidden", c.hidden},
                        {"lr_floor_fraction", c.lr_floor_fraction},
                        {"disc_steps", c.disc_steps}};
}

SmoreConfig config_from_json(const nlohmann::json& j) {
  SmoreConfig c;
  c.beta = j.at("beta").get<double>();
  c.awr_temperature = j.at("awr_temperature").get<double>();
  c.expectile = j.at("expectile").get<double>();
  c.her_ratio = j.at("her_ratio").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.total_steps = j.at("total_steps").get<int>();
  c.base_lr = j.at("base_lr").get<double>();
  c.hidden = j.at("hidden").get<std::vector<int>>();
  c.lr_floor_fraction = j.at("lr_floor_fraction").get<double>();
  c.disc_steps = j.at("disc_steps").get<int>();
  require_config(c);
  return c;
}

Eigen::MatrixXd encode_sag(const GoalMDP& env, const std::vector<int>& s,
                           const std::vector<int>& a,
                           const std::vector<int>& g) {
  if (s.size() != a.size() || s.size() != g.size()) {
    throw std::invalid_argument("encode_sag: mismatched column lengths");
  }
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(s.size()),
      env.n_states + env.n_actions + env.n_goals);
  for (std::size_t i = 0; i < s.size(); ++i) {
    check_index(s[i], env.n_states, "state");
    check_index(a[i], env.n_actions, "action");
    check_index(g[i], env.n_goals, "goal");
    x(static_cast<Eigen::Index>(i), s[i]) = 1.0;
    x(static_cast<Eigen::Index>(i), env.n_states + a[i]) = 1.0;
    x(static_cast<Eigen::Index>(i), env.n_states + env.n_actions + g[i]) = 1.0;
  }
  return x;
}

Eigen::MatrixXd encode_sg(const GoalMDP& env, const std::vector<int>& s,
                          const std::vector<int>& g) {
  if (s.size() != g.size()) {
    throw std::invalid_argument("encode_sg: mismatched column lengths");
  }
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(s.size()), env.n_states + env.n_goals);
  for (std::size_t i = 0; i < s.size(); ++i) {
    check_index(s[i], env.n_states, "state");
    check_index(g[i], env.n_goals, "goal");
    x(static_cast<Eigen::Index>(i), s[i]) = 1.0;
    x(static_cast<Eigen::Index>(i), env.n_states + g[i]) = 1.0;
  }
  return x;
}

std::pair<double, Eigen::MatrixXd> expectile_loss(const Eigen::MatrixXd& out,
                                                  const Eigen::VectorXd& targets,
                                                  double tau) {
  Eigen::VectorXd m = column(out);
  if (m.size() != targets.size()) {
    throw std::invalid_argument("expectile_loss: output/target size mismatch");
  }
  const double n = static_cast<double>(m.size());
  double loss = 0.0;
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(out.rows(), 1);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double u = targets(i) - m(i);
    double w = u < 0.0 ? 1.0 - tau : tau;
    loss += w * u * u / n;
    grad(i, 0) = -2.0 * w * u / n;
  }
  return {loss, grad};
}

std::pair<double, Eigen::MatrixXd> weighted_nll_loss(
    const Eigen::MatrixXd& logits, const std::vector<int>& actions,
    const Eigen::VectorXd& weights) {
  if (static_cast<std::size_t>(logits.rows()) != actions.size() ||
      logits.rows() != weights.size()) {
    throw std::invalid_argument("weighted_nll_loss: row count mismatch");
  }
  const double n = static_cast<double>(logits.rows());
  Eigen::MatrixXd probs = softmax_rows(logits);
  double loss = 0.0;
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    int a = actions[static_cast<std::size_t>(i)];
    check_index(a, static_cast<int>(logits.cols()), "action");
    // log softmax via the stabilized probabilities; probs > 0 by construction.
    loss += -weights(i) * std::log(probs(i, a)) / n;
    grad.row(i) = weights(i) / n * probs.row(i);
    grad(i, a) -= weights(i) / n;
  }
  return {loss, grad};
}

std::pair<double, Eigen::MatrixXd> linear_quadratic_loss(
    const Eigen::MatrixXd& out, const Eigen::VectorXd& linear,
    const Eigen::VectorXd& quad_weight, const Eigen::VectorXd& quad_target) {
  Eigen::VectorXd s = column(out);
  if (s.size() != linear.size() || s.size() != quad_weight.size() ||
      s.size() != quad_target.size()) {
    throw std::invalid_argument("linear_quadratic_loss: size mismatch");
  }
  double loss = 0.0;
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(out.rows(), 1);
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    double r = quad_target(i) - s(i);
    loss += linear(i) * s(i) + quad_weight(i) * r * r;
    grad(i, 0) = linear(i) - 2.0 * quad_weight(i) * r;
  }
  return {loss, grad};
}

std::pair<double, Eigen::MatrixXd> logistic_loss(const Eigen::MatrixXd& logits,
                                                 const Eigen::VectorXd& labels) {
  Eigen::VectorXd z = column(logits);
  if (z.size() != labels.size()) {
    throw std::invalid_argument("logistic_loss: size mismatch");
  }
  const double n = static_cast<double>(z.size());
  double loss = 0.0;
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(logits.rows(), 1);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    double zi = z(i);
    double softplus = zi > 0.0 ? zi + std::log1p(std::exp(-zi))
                               : std::log1p(std::exp(zi));
    double sigma = 1.0 / (1.0 + std::exp(-zi));
    loss += (softplus - labels(i) * zi) / n;
    grad(i, 0) = (sigma - labels(i)) / n;
  }
  return {loss, grad};
}

std::pair<double, Eigen::MatrixXd> flow_value_loss(const Eigen::MatrixXd& v_out,
                                                   const Eigen::VectorXd& rewards,
                                                   double gamma) {
  Eigen::VectorXd v = column(v_out);
  if (v.size() % 2 != 0 || v.size() / 2 != rewards.size()) {
    throw std::invalid_argument(
        "flow_value_loss: expected stacked V(s), V(s') rows matching rewards");
  }
  const Eigen::Index b = rewards.size();
  const double n = static_cast<double>(b);
  double loss = 0.0;
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(v_out.rows(), 1);
  for (Eigen::Index i = 0; i < b; ++i) {
    double y = rewards(i) + gamma * v(b + i) - v(i);
    double h = std::max(0.0, y / 2.0 + 1.0);
    loss += ((1.0 - gamma) * v(i) + h * h - 1.0) / n;
    grad(i, 0) = ((1.0 - gamma) - h) / n;
    grad(b + i, 0) = gamma * h / n;
  }
  return {loss, grad};
}

Eigen::VectorXd awr_weights(const Eigen::VectorXd& s_values,
                            const Eigen::VectorXd& m_values,
                            double temperature) {
  if (s_values.size() != m_values.size()) {
    throw std::invalid_argument("awr_weights: size mismatch");
  }
  Eigen::VectorXd w(s_values.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    w(i) = std::min(std::exp(temperature * (s_values(i) - m_values(i))),
                    kAwrClip);
  }
  return w;
}

SmoreAgent make_smore_agent(const GoalMDP& env, const SmoreConfig& config,
                            std::uint64_t seed) {
  require_config(config);
  SmoreAgent agent;
  agent.env = env;
  agent.config = config;
  std::mt19937_64 root(seed);
  int sag = env.n_states + env.n_actions + env.n_goals;
  int sg = env.n_states + env.n_goals;
  agent.s_net = nn::make_dense_net(hidden_then(config.hidden, sag, 1), root());
  agent.m_net = nn::make_dense_net(hidden_then(config.hidden, sg, 1), root());
  agent.policy_net =
      nn::make_dense_net(hidden_then(config.hidden, sg, env.n_actions), root());
  agent.s_opt = nn::make_adam(agent.s_net, config.base_lr);
  agent.m_opt = nn::make_adam(agent.m_net, config.base_lr);
  agent.policy_opt = nn::make_adam(agent.policy_net, config.base_lr);
  agent.schedule = {std::max(config.total_steps, 1),
                    config.lr_floor_fraction};
  return agent;
}

double smore_update_s(SmoreAgent& agent,
                      const std::vector<RelabeledTransition>& batch_rho,
                      const std::vector<RelabeledTransition>& batch_q) {
  if (batch_rho.empty() || batch_q.empty()) {
    throw std::invalid_argument("smore_update_s: empty batch");
  }
  const SmoreConfig& cfg = agent.config;
  BatchViews rho = split(batch_rho);
  BatchViews q = split(batch_q);
  const double nr = static_cast<double>(batch_rho.size());
  const double nq = static_cast<double>(batch_q.size());
  const int na = agent.env.n_actions;

  // Frozen policy action probabilities at the rho states and the q successor
  // states; the policy terms take the exact expectation over actions rather
  // than a one-sample estimate, which matters at small batch sizes.
  Eigen::MatrixXd pi_rho = softmax_rows(nn::forward(
      agent.policy_net, encode_sg(agent.env, rho.s, rho.g)));
  Eigen::MatrixXd pi_q_next = softmax_rows(nn::forward(
      agent.policy_net, encode_sg(agent.env, q.s_next, q.g)));

  // Frozen quadratic targets gamma * M(s', g) for both mixture halves.
  Eigen::VectorXd m_q = cfg.gamma * column(nn::forward(
      agent.m_net, encode_sg(agent.env, q.s_next, q.g)));
  Eigen::VectorXd m_rho = cfg.gamma * column(nn::forward(
      agent.m_net, encode_sg(agent.env, rho.s_next, rho.g)));

  // Stacked S rows: one block per action of policy rows at rho states, then
  // per action at q successors, then q data rows (linear and beta-weighted
  // quadratic), then rho data rows ((1-beta)-weighted quadratic).
  const Eigen::Index inr = static_cast<Eigen::Index>(nr);
  const Eigen::Index inq = static_cast<Eigen::Index>(nq);
  Eigen::MatrixXd x((inr + inq) * na + inq + inr, agent.s_net.in_dim());
  for (int a = 0; a < na; ++a) {
    std::vector<int> act_rho(batch_rho.size(), a);
    std::vector<int> act_q(batch_q.size(), a);
    x.middleRows(inr * a, inr) = encode_sag(agent.env, rho.s, act_rho, rho.g);
    x.middleRows(inr * na + inq * a, inq) =
        encode_sag(agent.env, q.s_next, act_q, q.g);
  }
  x.middleRows((inr + inq) * na, inq) = encode_sag(agent.env, q.s, q.a, q.g);
  x.bottomRows(inr) = encode_sag(agent.env, rho.s, rho.a, rho.g);

  Eigen::VectorXd linear = Eigen::VectorXd::Zero(x.rows());
  Eigen::VectorXd quad_w = Eigen::VectorXd::Zero(x.rows());
  Eigen::VectorXd quad_t = Eigen::VectorXd::Zero(x.rows());
  for (int a = 0; a < na; ++a) {
    for (Eigen::Index i = 0; i < inr; ++i) {
      linear(inr * a + i) = cfg.beta * (1.0 - cfg.gamma) * pi_rho(i, a) / nr;
    }
    for (Eigen::Index i = 0; i < inq; ++i) {
      linear(inr * na + inq * a + i) =
          cfg.beta * cfg.gamma * pi_q_next(i, a) / nq;
    }
  }
  for (Eigen::Index i = 0; i < inr; ++i) {
    Eigen::Index r = (inr + inq) * na + inq + i;
    quad_w(r) = (1.0 - cfg.beta) / nr;
    quad_t(r) = m_rho(i);
  }
  for (Eigen::Index i = 0; i < inq; ++i) {
    Eigen::Index r = (inr + inq) * na + i;
    linear(r) = -cfg.beta / nq;
    quad_w(r) = cfg.beta / nq;
    quad_t(r) = m_q(i);
  }

  nn::ForwardCache cache;
  Eigen::MatrixXd out = nn::forward(agent.s_net, x, cache);
  auto [loss, upstream] = linear_quadratic_loss(out, linear, quad_w, quad_t);
  require_finite(loss, "score", agent.step);
  nn::Gradients grads = nn::backward(agent.s_net, cache, upstream);
  nn::adam_step(agent.s_opt, agent.s_net, grads,
                current_lr(agent.schedule, cfg, agent.step));
  return loss;
}

double smore_update_m(SmoreAgent& agent,
                      const std::vector<RelabeledTransition>& batch_rho) {
  if (batch_rho.empty()) {
    throw std::invalid_argument("smore_update_m: empty batch");
  }
  BatchViews rho = split(batch_rho);
  Eigen::VectorXd targets = column(nn::forward(
      agent.s_net, encode_sag(agent.env, rho.s, rho.a, rho.g)));
  nn::ForwardCache cache;
  Eigen::MatrixXd out =
      nn::forward(agent.m_net, encode_sg(agent.env, rho.s, rho.g), cache);
  auto [loss, upstream] = expectile_loss(out, targets, agent.config.expectile);
  require_finite(loss, "expectile", agent.step);
  nn::Gradients grads = nn::backward(agent.m_net, cache, upstream);
  nn::adam_step(agent.m_opt, agent.m_net, grads,
                current_lr(agent.schedule, agent.config, agent.step));
  return loss;
}

double smore_update_policy(SmoreAgent& agent,
                           const std::vector<RelabeledTransition>& batch_rho) {
  if (batch_rho.empty()) {
    throw std::invalid_argument("smore_update_policy: empty batch");
  }
  BatchViews rho = split(batch_rho);
  Eigen::VectorXd s_vals = column(nn::forward(
      agent.s_net, encode_sag(agent.env, rho.s, rho.a, rho.g)));
  Eigen::VectorXd m_vals = column(nn::forward(
      agent.m_net, encode_sg(agent.env, rho.s, rho.g)));
  Eigen::VectorXd w = awr_weights(s_vals, m_vals, agent.config.awr_temperature);
  nn::ForwardCache cache;
  Eigen::MatrixXd logits =
      nn::forward(agent.policy_net, encode_sg(agent.env, rho.s, rho.g), cache);
  auto [loss, upstream] = weighted_nll_loss(logits, rho.a, w);
  require_finite(loss, "policy", agent.step);
  nn::Gradients grads = nn::backward(agent.policy_net, cache, upstream);
  nn::adam_step(agent.policy_opt, agent.policy_net, grads,
                current_lr(agent.schedule, agent.config, agent.step));
  return loss;
}

SmoreAgent smore_train(const OfflineDataset& dataset,
                       const SmoreConfig& config, std::uint64_t seed,
                       const SmoreObserver& observer) {
  if (dataset.transitions.empty()) {
    throw std::invalid_argument("smore_train: empty dataset");
  }
  SmoreAgent agent = make_smore_agent(dataset.env, config, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (int step = 0; step < config.total_steps; ++step) {
    auto rho = draw_rho_batch(dataset, config, rng);
    auto q = data::sample_goal_transition(dataset, config.her_ratio,
                                          config.batch_size, rng);
    double losses[3];
    losses[0] = smore_update_s(agent, rho, q);
    losses[1] = smore_update_m(agent, rho);
    losses[2] = smore_update_policy(agent, rho);
    agent.step += 1;
    if (observer) observer(agent, agent.step, losses);
  }
  return agent;
}

std::string variant_name(BaselineVariant variant) {
  switch (variant) {
    case BaselineVariant::gcsl: return "gcsl";
    case BaselineVariant::iql_sparse: return "iql_sparse";
    case BaselineVariant::gofar_lite: return "gofar_lite";
  }
  throw std::logic_error("unknown baseline variant");
}

BaselineVariant variant_from_name(const std::string& name) {
  if (name == "gcsl") return BaselineVariant::gcsl;
  if (name == "iql_sparse") return BaselineVariant::iql_sparse;
  if (name == "gofar_lite") return BaselineVariant::gofar_lite;
  throw std::invalid_argument("unknown baseline variant: " + name);
}

BaselineAgent make_baseline_agent(BaselineVariant variant, const GoalMDP& env,
                                  const SmoreConfig& config,
                                  std::uint64_t seed) {
  require_config(config);
  BaselineAgent agent;
  agent.variant = variant;
  agent.env = env;
  agent.config = config;
  std::mt19937_64 root(seed);
  int sag = env.n_states + env.n_actions + env.n_goals;
  int sg = env.n_states + env.n_goals;
  agent.policy_net =
      nn::make_dense_net(hidden_then(config.hidden, sg, env.n_actions), root());
  agent.policy_opt = nn::make_adam(agent.policy_net, config.base_lr);
  if (variant == BaselineVariant::iql_sparse) {
    agent.q_net = nn::make_dense_net(hidden_then(config.hidden, sag, 1), root());
    agent.v_net = nn::make_dense_net(hidden_then(config.hidden, sg, 1), root());
    agent.q_opt = nn::make_adam(agent.q_net, config.base_lr);
    agent.v_opt = nn::make_adam(agent.v_net, config.base_lr);
  }
  if (variant == BaselineVariant::gofar_lite) {
    agent.v_net = nn::make_dense_net(hidden_then(config.hidden, sg, 1), root());
    agent.v_opt = nn::make_adam(agent.v_net, config.base_lr);
    agent.disc_net =
        nn::make_dense_net(hidden_then(config.hidden, sg, 1), root());
    agent.disc_opt = nn::make_adam(agent.disc_net, config.base_lr);
  }
  agent.schedule = {std::max(config.total_steps, 1),
                    config.lr_floor_fraction};
  return agent;
}

double bc_update(BaselineAgent& agent,
                 const std::vector<RelabeledTransition>& batch) {
  if (batch.empty()) throw std::invalid_argument("bc_update: empty batch");
  BatchViews v = split(batch);
  nn::ForwardCache cache;
  Eigen::MatrixXd logits =
      nn::forward(agent.policy_net, encode_sg(agent.env, v.s, v.g), cache);
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(logits.rows());
  auto [loss, upstream] = weighted_nll_loss(logits, v.a, ones);
  require_finite(loss, "behavior-cloning", agent.step);
  nn::Gradients grads = nn::backward(agent.policy_net, cache, upstream);
  nn::adam_step(agent.policy_opt, agent.policy_net, grads,
                current_lr(agent.schedule, agent.config, agent.step));
  return loss;
}

IqlLosses iql_update(BaselineAgent& agent,
                     const std::vector<RelabeledTransition>& batch) {
  if (agent.variant != BaselineVariant::iql_sparse) {
    throw std::invalid_argument("iql_update: wrong agent variant");
  }
  if (batch.empty()) throw std::invalid_argument("iql_update: empty batch");
  const SmoreConfig& cfg = agent.config;
  BatchViews v = split(batch);
  Eigen::MatrixXd sag = encode_sag(agent.env, v.s, v.a, v.g);
  Eigen::MatrixXd sg = encode_sg(agent.env, v.s, v.g);
  double lr = current_lr(agent.schedule, cfg, agent.step);
  IqlLosses losses{};

  // V tracks the upper expectile of the frozen in-sample Q.
  Eigen::VectorXd q_frozen = column(nn::forward(agent.q_net, sag));
  {
    nn::ForwardCache cache;
    Eigen::MatrixXd out = nn::forward(agent.v_net, sg, cache);
    auto [loss, upstream] = expectile_loss(out, q_frozen, cfg.expectile);
    require_finite(loss, "iql value", agent.step);
    nn::adam_step(agent.v_opt, agent.v_net,
                  nn::backward(agent.v_net, cache, upstream), lr);
    losses.v_loss = loss;
  }

  // Q regresses onto the realized goal-entering reward plus gamma V(s').
  Eigen::VectorXd v_next = column(nn::forward(
      agent.v_net, encode_sg(agent.env, v.s_next, v.g)));
  Eigen::VectorXd target(v_next.size());
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    double r = agent.env.phi[v.s_next[static_cast<std::size_t>(i)]] ==
                       v.g[static_cast<std::size_t>(i)]
                   ? 1.0
                   : 0.0;
    target(i) = r + cfg.gamma * v_next(i);
  }
  {
    nn::ForwardCache cache;
    Eigen::MatrixXd out = nn::forward(agent.q_net, sag, cache);
    const double n = static_cast<double>(out.rows());
    auto [loss, upstream] = linear_quadratic_loss(
        out, Eigen::VectorXd::Zero(out.rows()),
        Eigen::VectorXd::Constant(out.rows(), 1.0 / n), target);
    require_finite(loss, "iql q", agent.step);
    nn::adam_step(agent.q_opt, agent.q_net,
                  nn::backward(agent.q_net, cache, upstream), lr);
    losses.q_loss = loss;
  }

  // Advantage-weighted regression with the refreshed frozen nets.
  Eigen::VectorXd q_vals = column(nn::forward(agent.q_net, sag));
  Eigen::VectorXd v_vals = column(nn::forward(agent.v_net, sg));
  Eigen::VectorXd w = awr_weights(q_vals, v_vals, cfg.awr_temperature);
  {
    nn::ForwardCache cache;
    Eigen::MatrixXd logits = nn::forward(agent.policy_net, sg, cache);
    auto [loss, upstream] = weighted_nll_loss(logits, v.a, w);
    require_finite(loss, "iql policy", agent.step);
    nn::adam_step(agent.policy_opt, agent.policy_net,
                  nn::backward(agent.policy_net, cache, upstream), lr);
    losses.policy_loss = loss;
  }
  return losses;
}

double gofar_disc_update(BaselineAgent& agent,
                         const Eigen::MatrixXd& positive_sg,
                         const Eigen::MatrixXd& negative_sg) {
  if (agent.variant != BaselineVariant::gofar_lite) {
    throw std::invalid_argument("gofar_disc_update: wrong agent variant");
  }
  Eigen::MatrixXd x(positive_sg.rows() + negative_sg.rows(),
                    agent.disc_net.in_dim());
  x.topRows(positive_sg.rows()) = positive_sg;
  x.bottomRows(negative_sg.rows()) = negative_sg;
  Eigen::VectorXd labels = Eigen::VectorXd::Zero(x.rows());
  labels.head(positive_sg.rows()).setOnes();
  nn::ForwardCache cache;
  Eigen::MatrixXd logits = nn::forward(agent.disc_net, x, cache);
  auto [loss, upstream] = logistic_loss(logits, labels);
  require_finite(loss, "discriminator", agent.step);
  nn::adam_step(agent.disc_opt, agent.disc_net,
                nn::backward(agent.disc_net, cache, upstream),
                agent.config.base_lr);
  return loss;
}

GofarLosses gofar_update(BaselineAgent& agent,
                         const std::vector<RelabeledTransition>& batch) {
  if (agent.variant != BaselineVariant::gofar_lite) {
    throw std::invalid_argument("gofar_update: wrong agent variant");
  }
  if (batch.empty()) throw std::invalid_argument("gofar_update: empty batch");
  const SmoreConfig& cfg = agent.config;
  BatchViews v = split(batch);
  Eigen::MatrixXd sg = encode_sg(agent.env, v.s, v.g);
  Eigen::MatrixXd sg_next = encode_sg(agent.env, v.s_next, v.g);
  double lr = current_lr(agent.schedule, cfg, agent.step);
  GofarLosses losses{};

  // Pseudo-reward from the frozen discriminator log odds.
  Eigen::VectorXd rewards = column(nn::forward(agent.disc_net, sg));
  for (Eigen::Index i = 0; i < rewards.size(); ++i) {
    rewards(i) = std::clamp(rewards(i), -kRewardClip, kRewardClip);
  }

  {
    Eigen::MatrixXd x(sg.rows() + sg_next.rows(), agent.v_net.in_dim());
    x.topRows(sg.rows()) = sg;
    x.bottomRows(sg_next.rows()) = sg_next;
    nn::ForwardCache cache;
    Eigen::MatrixXd out = nn::forward(agent.v_net, x, cache);
    auto [loss, upstream] = flow_value_loss(out, rewards, cfg.gamma);
    require_finite(loss, "gofar value", agent.step);
    nn::adam_step(agent.v_opt, agent.v_net,
                  nn::backward(agent.v_net, cache, upstream), lr);
    losses.v_loss = loss;
  }

  // Weighted regression with w = max(0, y/2 + 1) at the refreshed V.
  Eigen::VectorXd v_s = column(nn::forward(agent.v_net, sg));
  Eigen::VectorXd v_next = column(nn::forward(agent.v_net, sg_next));
  Eigen::VectorXd w(v_s.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    double y = rewards(i) + cfg.gamma * v_next(i) - v_s(i);
    w(i) = std::max(0.0, y / 2.0 + 1.0);
  }
  {
    nn::ForwardCache cache;
    Eigen::MatrixXd logits = nn::forward(agent.policy_net, sg, cache);
    auto [loss, upstream] = weighted_nll_loss(logits, v.a, w);
    require_finite(loss, "gofar policy", agent.step);
    nn::adam_step(agent.policy_opt, agent.policy_net,
                  nn::backward(agent.policy_net, cache, upstream), lr);
    losses.policy_loss = loss;
  }
  return losses;
}

BaselineAgent gcsl_train(const OfflineDataset& dataset,
                         const SmoreConfig& config, std::uint64_t seed,
                         const BaselineObserver& observer) {
  if (dataset.transitions.empty()) {
    throw std::invalid_argument("gcsl_train: empty dataset");
  }
  BaselineAgent agent =
      make_baseline_agent(BaselineVariant::gcsl, dataset.env, config, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (int step = 0; step < config.total_steps; ++step) {
    double losses[1] = {bc_update(agent, draw_rho_batch(dataset, config, rng))};
    agent.step += 1;
    if (observer) observer(agent, agent.step, losses);
  }
  return agent;
}

BaselineAgent iql_sparse_train(const OfflineDataset& dataset,
                               const SmoreConfig& config, std::uint64_t seed,
                               const BaselineObserver& observer) {
  if (dataset.transitions.empty()) {
    throw std::invalid_argument("iql_sparse_train: empty dataset");
  }
  BaselineAgent agent = make_baseline_agent(BaselineVariant::iql_sparse,
                                            dataset.env, config, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (int step = 0; step < config.total_steps; ++step) {
    IqlLosses l = iql_update(agent, draw_rho_batch(dataset, config, rng));
    double losses[3] = {l.v_loss, l.q_loss, l.policy_loss};
    agent.step += 1;
    if (observer) observer(agent, agent.step, losses);
  }
  return agent;
}

BaselineAgent gofar_lite_train(const OfflineDataset& dataset,
                               const SmoreConfig& config, std::uint64_t seed,
                               const BaselineObserver& observer) {
  if (dataset.transitions.empty()) {
    throw std::invalid_argument("gofar_lite_train: empty dataset");
  }
  BaselineAgent agent = make_baseline_agent(BaselineVariant::gofar_lite,
                                            dataset.env, config, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0,
                                                  dataset.transitions.size() - 1);
  for (int step = 0; step < config.disc_steps; ++step) {
    // Positives: states entering their own achieved goal. Negatives: the
    // relabeled dataset joint.
    std::vector<int> pos_s, pos_g;
    pos_s.reserve(static_cast<std::size_t>(config.batch_size));
    pos_g.reserve(static_cast<std::size_t>(config.batch_size));
    for (int i = 0; i < config.batch_size; ++i) {
      const data::Transition& t = dataset.transitions[pick(rng)];
      pos_s.push_back(t.s_next);
      pos_g.push_back(t.achieved_goal);
    }
    auto neg = draw_rho_batch(dataset, config, rng);
    BatchViews nv = split(neg);
    gofar_disc_update(agent, encode_sg(agent.env, pos_s, pos_g),
                      encode_sg(agent.env, nv.s, nv.g));
  }
  for (int step = 0; step < config.total_steps; ++step) {
    GofarLosses l = gofar_update(agent, draw_rho_batch(dataset, config, rng));
    double losses[2] = {l.v_loss, l.policy_loss};
    agent.step += 1;
    if (observer) observer(agent, agent.step, losses);
  }
  return agent;
}

int act(const nn::DenseNet& policy_net, const GoalMDP& env, int s, int g,
        bool greedy, std::mt19937_64& rng) {
  Eigen::MatrixXd logits =
      nn::forward(policy_net, encode_sg(env, {s}, {g}));
  if (greedy) {
    int best = 0;
    for (int a = 1; a < env.n_actions; ++a) {
      if (logits(0, a) > logits(0, best)) best = a;
    }
    return best;
  }
  Eigen::MatrixXd probs = softmax_rows(logits);
  std::vector<double> row(static_cast<std::size_t>(env.n_actions));
  for (int a = 0; a < env.n_actions; ++a) row[a] = probs(0, a);
  return mdp::sample_categorical(row, rng);
}

namespace {

nlohmann::json sidecar(const std::string& variant, const SmoreConfig& config,
                       const GoalMDP& env, int step) {
  return nlohmann::json{{"variant", variant},
                        {"config", config_to_json(config)},
                        {"env", mdp::to_json(env)},
                        {"step", step}};
}

void write_sidecar(const nlohmann::json& j, const std::string& prefix) {
  std::ofstream out(prefix + ".json");
  if (!out) {
    throw std::runtime_error("cannot write " + prefix + ".json");
  }
  out << j.dump(2) << "\n";
}

nlohmann::json read_sidecar(const std::string& prefix) {
  std::ifstream in(prefix + ".json");
  if (!in) {
    throw std::runtime_error("cannot read " + prefix + ".json");
  }
  return nlohmann::json::parse(in);
}

}  // namespace

void save_smore_agent(const SmoreAgent& agent, const std::string& prefix) {
  nn::save_checkpoint(agent.s_net, prefix + ".s.net");
  nn::save_checkpoint(agent.m_net, prefix + ".m.net");
  nn::save_checkpoint(agent.policy_net, prefix + ".policy.net");
  write_sidecar(sidecar("smore", agent.config, agent.env, agent.step), prefix);
}

SmoreAgent load_smore_agent(const std::string& prefix) {
  nlohmann::json j = read_sidecar(prefix);
  if (j.at("variant").get<std::string>() != "smore") {
    throw std::runtime_error("checkpoint at " + prefix + " is not a smore agent");
  }
  SmoreAgent agent = make_smore_agent(
      mdp::mdp_from_json(j.at("env")), config_from_json(j.at("config")), 0);
  agent.step = j.at("step").get<int>();
  agent.s_net = nn::load_checkpoint(prefix + ".s.net");
  agent.m_net = nn::load_checkpoint(prefix + ".m.net");
  agent.policy_net = nn::load_checkpoint(prefix + ".policy.net");
  return agent;
}

void save_baseline_agent(const BaselineAgent& agent,
                         const std::string& prefix) {
  nn::save_checkpoint(agent.policy_net, prefix + ".policy.net");
  if (agent.variant == BaselineVariant::iql_sparse) {
    nn::save_checkpoint(agent.q_net, prefix + ".q.net");
    nn::save_checkpoint(agent.v_net, prefix + ".v.net");
  }
  if (agent.variant == BaselineVariant::gofar_lite) {
    nn::save_checkpoint(agent.v_net, prefix + ".v.net");
    nn::save_checkpoint(agent.disc_net, prefix + ".disc.net");
  }
  write_sidecar(
      sidecar(variant_name(agent.variant), agent.config, agent.env, agent.step),
      prefix);
}

BaselineAgent load_baseline_agent(const std::string& prefix) {
  nlohmann::json j = read_sidecar(prefix);
  BaselineVariant variant =
      variant_from_name(j.at("variant").get<std::string>());
  BaselineAgent agent =
      make_baseline_agent(variant, mdp::mdp_from_json(j.at("env")),
                          config_from_json(j.at("config")), 0);
  agent.step = j.at("step").get<int>();
  agent.policy_net = nn::load_checkpoint(prefix + ".policy.net");
  if (variant == BaselineVariant::iql_sparse) {
    agent.q_net = nn::load_checkpoint(prefix + ".q.net");
    agent.v_net = nn::load_checkpoint(prefix + ".v.net");
  }
  if (variant == BaselineVariant::gofar_lite) {
    agent.v_net = nn::load_checkpoint(prefix + ".v.net");
    agent.disc_net = nn::load_checkpoint(prefix + ".disc.net");
  }
  return agent;
}

}  // namespace smore::agents
