#include "smore/agents.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <set>
#include <span>

#include <doctest.h>
#include <nlohmann/json.hpp>

using namespace smore;
using agents::BaselineAgent;
using agents::BaselineVariant;
using agents::SmoreAgent;
using agents::SmoreConfig;
using data::RelabeledTransition;

namespace {

std::string temp_prefix(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

Eigen::MatrixXd random_batch(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd x(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) x(i, j) = u(rng);
  return x;
}

void zero_net(nn::DenseNet& net) {
  for (auto& w : net.weights) w.setZero();
  for (auto& b : net.biases) b.setZero();
}

SmoreConfig small_config() {
  SmoreConfig cfg;
  cfg.hidden = {16, 16};
  cfg.batch_size = 32;
  cfg.total_steps = 100;
  return cfg;
}

mdp::GoalMDP one_state_env() {
  mdp::GoalMDP env;
  env.n_states = 1;
  env.n_actions = 2;
  env.n_goals = 1;
  env.transition = {1.0, 1.0};
  env.d0 = {1.0};
  env.phi = {0};
  env.gamma = 0.99;
  env.q_train = {1.0};
  env.q_test = {1.0};
  return env;
}

// Stationary point of the expectile loss on fixed targets, by bisecting the
// loss gradient; this is the fitted expectile independent of any optimizer.
double fitted_expectile(const Eigen::VectorXd& targets, double tau, double lo,
                        double hi) {
  auto grad = [&](double m) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Constant(targets.size(), 1, m);
    return agents::expectile_loss(out, targets, tau).second.sum();
  };
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    (grad(mid) > 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

double greedy_success(const nn::DenseNet& policy, const mdp::GoalMDP& env,
                      int episodes, int horizon, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  int hits = 0;
  for (int e = 0; e < episodes; ++e) {
    int s = mdp::sample_categorical(env.d0, rng);
    int g = mdp::sample_categorical(env.q_test, rng);
    for (int t = 0; t < horizon; ++t) {
      int a = agents::act(policy, env, s, g, true, rng);
      std::span<const double> row(
          env.transition.data() +
              (static_cast<std::size_t>(s) * env.n_actions + a) * env.n_states,
          static_cast<std::size_t>(env.n_states));
      s = mdp::sample_categorical(row, rng);
    }
    hits += env.phi[s] == g ? 1 : 0;
  }
  return static_cast<double>(hits) / episodes;
}

}  // namespace

TEST_CASE("config validation rejects out-of-range fields") {
  SmoreConfig cfg;
  CHECK_NOTHROW(agents::require_config(cfg));
  SmoreConfig bad = cfg;
  bad.beta = 0.0;
  CHECK_THROWS_AS(agents::require_config(bad), std::invalid_argument);
  bad = cfg;
  bad.expectile = 0.5;
  CHECK_THROWS_AS(agents::require_config(bad), std::invalid_argument);
  bad = cfg;
  bad.awr_temperature = 0.0;
  CHECK_THROWS_AS(agents::require_config(bad), std::invalid_argument);
  bad = cfg;
  bad.gamma = 1.0;
  CHECK_THROWS_AS(agents::require_config(bad), std::invalid_argument);
}

TEST_CASE("expectile loss is half mse at tau one half") {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(1, 1);
  Eigen::VectorXd target(1);
  target << 2.0;
  auto [loss, grad] = agents::expectile_loss(out, target, 0.5);
  CHECK(loss == doctest::Approx(2.0));
  CHECK(grad(0, 0) == doctest::Approx(-2.0));
}

TEST_CASE("expectile loss weighs upward residuals by tau") {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(1, 1);
  Eigen::VectorXd up(1), down(1);
  up << 1.0;
  down << -1.0;
  CHECK(agents::expectile_loss(out, up, 0.7).first == doctest::Approx(0.7));
  CHECK(agents::expectile_loss(out, down, 0.7).first == doctest::Approx(0.3));
}

TEST_CASE("fitted expectile matches the mean at tau one half") {
  Eigen::VectorXd targets(6);
  targets << 0.3, -1.2, 2.7, 0.9, -0.4, 1.1;
  double m = fitted_expectile(targets, 0.5, -5.0, 5.0);
  CHECK(m == doctest::Approx(targets.mean()).epsilon(1e-8));
}

TEST_CASE("fitted upper expectile of zero-two data at tau 0.99 is 1.98") {
  Eigen::VectorXd targets(2);
  targets << 0.0, 2.0;
  double m = fitted_expectile(targets, 0.99, 0.0, 2.0);
  CHECK(std::abs(m - 1.98) <= 1e-6);
}

TEST_CASE("a single-bias net fits the expectile of its targets") {
  nn::DenseNet net = nn::make_dense_net({0, 1}, 4);
  nn::AdamState opt = nn::make_adam(net, 1e-2);
  Eigen::MatrixXd batch(6, 0);
  Eigen::VectorXd targets(6);
  targets << 0.0, 2.0, 0.0, 2.0, 0.0, 2.0;
  for (int step = 0; step < 4000; ++step) {
    nn::ForwardCache cache;
    Eigen::MatrixXd out = nn::forward(net, batch, cache);
    auto [loss, upstream] = agents::expectile_loss(out, targets, 0.8);
    (void)loss;
    nn::adam_step(opt, net, nn::backward(net, cache, upstream), 1e-3);
  }
  // Balance: 0.8 (2 - m) = 0.2 m -> m = 1.6.
  CHECK(net.biases.back()(0) == doctest::Approx(1.6).epsilon(1e-3));
}

TEST_CASE("awr weights pin the exponential and the clip") {
  Eigen::VectorXd s(3), m(3);
  s << 0.5, 10.0, 0.0;
  m << 0.0, 0.0, 0.0;
  Eigen::VectorXd w = agents::awr_weights(s, m, 3.0);
  CHECK(w(0) == doctest::Approx(std::exp(1.5)).epsilon(1e-12));
  CHECK(w(0) == doctest::Approx(4.4816890703380645).epsilon(1e-12));
  CHECK(w(1) == 100.0);
  CHECK(w(2) == 1.0);
}

TEST_CASE("awr weights are exactly invariant to a common shift") {
  // Dyadic values keep the +256 additions exact in double precision.
  Eigen::VectorXd s(3), m(3);
  s << 0.5, 1.25, -0.75;
  m << 0.25, 0.5, 0.0;
  Eigen::VectorXd w0 = agents::awr_weights(s, m, 3.0);
  Eigen::VectorXd w1 = agents::awr_weights(
      s.array() + 256.0, m.array() + 256.0, 3.0);
  for (int i = 0; i < 3; ++i) CHECK(w0(i) == w1(i));
}

TEST_CASE("weighted nll pins the softmax gradient") {
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(1, 2);
  Eigen::VectorXd w(1);
  w << 1.0;
  auto [loss, grad] = agents::weighted_nll_loss(logits, {0}, w);
  CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(grad(0, 0) == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(grad(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("logistic loss pins the zero-logit point") {
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(2, 1);
  Eigen::VectorXd labels(2);
  labels << 1.0, 0.0;
  auto [loss, grad] = agents::logistic_loss(z, labels);
  CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(grad(0, 0) == doctest::Approx(-0.25).epsilon(1e-12));
  CHECK(grad(1, 0) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("flow value loss pins both hinge branches") {
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(2, 1);
  Eigen::VectorXd r(1);
  r << 0.0;
  auto [loss, grad] = agents::flow_value_loss(v, r, 0.99);
  // y = 0, hinge = 1: loss = 1 - 1 = 0.
  CHECK(loss == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(grad(0, 0) == doctest::Approx(0.01 - 1.0).epsilon(1e-12));
  CHECK(grad(1, 0) == doctest::Approx(0.99).epsilon(1e-12));

  r << -4.0;
  auto [loss2, grad2] = agents::flow_value_loss(v, r, 0.99);
  // y = -4, hinge = 0: loss = -1, only the d0 term gradient survives.
  CHECK(loss2 == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(grad2(0, 0) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(grad2(1, 0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("all agent losses pass the gradient check") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.1, 2.0);

  nn::DenseNet m_net = nn::make_dense_net({5, 8, 1}, 1);
  Eigen::MatrixXd m_batch = random_batch(7, 5, 2);
  Eigen::VectorXd targets = random_batch(7, 1, 3).col(0);
  CHECK(nn::gradient_check(m_net, [&](const Eigen::MatrixXd& out) {
          return agents::expectile_loss(out, targets, 0.8);
        }, m_batch) < 1e-4);

  nn::DenseNet pi_net = nn::make_dense_net({5, 8, 3}, 4);
  Eigen::MatrixXd pi_batch = random_batch(7, 5, 5);
  std::vector<int> actions = {0, 2, 1, 1, 0, 2, 1};
  Eigen::VectorXd weights(7);
  for (int i = 0; i < 7; ++i) weights(i) = u(rng);
  CHECK(nn::gradient_check(pi_net, [&](const Eigen::MatrixXd& out) {
          return agents::weighted_nll_loss(out, actions, weights);
        }, pi_batch) < 1e-4);

  nn::DenseNet s_net = nn::make_dense_net({6, 8, 1}, 6);
  Eigen::MatrixXd s_batch = random_batch(9, 6, 7);
  Eigen::VectorXd lin = random_batch(9, 1, 8).col(0);
  Eigen::VectorXd qw(9), qt = random_batch(9, 1, 9).col(0);
  for (int i = 0; i < 9; ++i) qw(i) = u(rng);
  CHECK(nn::gradient_check(s_net, [&](const Eigen::MatrixXd& out) {
          return agents::linear_quadratic_loss(out, lin, qw, qt);
        }, s_batch) < 1e-4);

  nn::DenseNet disc_net = nn::make_dense_net({4, 8, 1}, 10);
  Eigen::MatrixXd disc_batch = random_batch(8, 4, 11);
  Eigen::VectorXd labels(8);
  for (int i = 0; i < 8; ++i) labels(i) = i % 2;
  CHECK(nn::gradient_check(disc_net, [&](const Eigen::MatrixXd& out) {
          return agents::logistic_loss(out, labels);
        }, disc_batch) < 1e-4);

  nn::DenseNet v_net = nn::make_dense_net({4, 8, 1}, 12);
  Eigen::MatrixXd v_batch = random_batch(12, 4, 13);
  Eigen::VectorXd rewards(6);
  rewards << 0.3, -6.0, 0.2, 0.4, -5.0, 0.1;
  CHECK(nn::gradient_check(v_net, [&](const Eigen::MatrixXd& out) {
          return agents::flow_value_loss(out, rewards, 0.99);
        }, v_batch) < 1e-4);
}

TEST_CASE("score update is zero at all-zero score and target nets") {
  SmoreAgent agent = agents::make_smore_agent(one_state_env(), small_config(), 8);
  zero_net(agent.s_net);
  zero_net(agent.m_net);
  std::vector<RelabeledTransition> rho = {{0, 0, 0, 0}, {0, 1, 0, 0}};
  std::vector<RelabeledTransition> q = {{0, 1, 0, 0}};
  CHECK(agents::smore_update_s(agent, rho, q) == 0.0);
}

TEST_CASE("score update raises scores on the goal-transition support") {
  mdp::GoalMDP env = one_state_env();
  SmoreConfig cfg = small_config();
  SmoreAgent agent = agents::make_smore_agent(env, cfg, 21);
  std::vector<RelabeledTransition> rho, q;
  for (int i = 0; i < 16; ++i) {
    rho.push_back({0, i % 2, 0, 0});
    q.push_back({0, 1, 0, 0});
  }
  for (int step = 0; step < 500; ++step) {
    agents::smore_update_s(agent, rho, q);
  }
  Eigen::MatrixXd s_vals = nn::forward(
      agent.s_net, agents::encode_sag(env, {0, 0}, {0, 1}, {0, 0}));
  CHECK(s_vals(1, 0) - s_vals(0, 0) > 0.0);
}

TEST_CASE("at full mixture weight the reference actions drop out") {
  mdp::GoalMDP env = mdp::build_chain(3, 0.9);
  SmoreConfig cfg = small_config();
  cfg.beta = 1.0;
  SmoreAgent base = agents::make_smore_agent(env, cfg, 33);
  std::vector<RelabeledTransition> rho_a = {{0, 0, 1, 2}, {1, 1, 2, 1}};
  std::vector<RelabeledTransition> rho_b = {{0, 1, 2, 2}, {1, 0, 0, 1}};
  std::vector<RelabeledTransition> q = {{1, 1, 2, 2}, {0, 1, 1, 1}};

  SmoreAgent agent_a = base;
  SmoreAgent agent_b = base;
  double loss_a = agents::smore_update_s(agent_a, rho_a, q);
  double loss_b = agents::smore_update_s(agent_b, rho_b, q);
  CHECK(loss_a == loss_b);
  for (std::size_t l = 0; l < agent_a.s_net.weights.size(); ++l) {
    CHECK((agent_a.s_net.weights[l] - agent_b.s_net.weights[l]).norm() == 0.0);
  }
}

TEST_CASE("score update with identical batches is not an identity") {
  mdp::GoalMDP env = mdp::build_chain(3, 0.9);
  SmoreConfig cfg = small_config();
  cfg.beta = 0.5;
  SmoreAgent agent = agents::make_smore_agent(env, cfg, 44);
  std::vector<RelabeledTransition> batch = {{0, 1, 1, 2}, {1, 1, 2, 2},
                                            {2, 0, 1, 1}, {0, 0, 0, 0}};
  Eigen::MatrixXd before = agent.s_net.weights[0];
  agents::smore_update_s(agent, batch, batch);
  CHECK((agent.s_net.weights[0] - before).norm() > 0.0);
}

TEST_CASE("policy update equals behavior cloning when scores match targets") {
  mdp::GoalMDP env = mdp::build_chain(3, 0.9);
  SmoreAgent agent = agents::make_smore_agent(env, small_config(), 55);
  zero_net(agent.s_net);
  zero_net(agent.m_net);
  std::vector<RelabeledTransition> batch = {{0, 1, 1, 2}, {1, 0, 0, 1}};
  Eigen::MatrixXd logits = nn::forward(
      agent.policy_net, agents::encode_sg(env, {0, 1}, {2, 1}));
  double bc = agents::weighted_nll_loss(logits, {1, 0},
                                        Eigen::VectorXd::Ones(2)).first;
  CHECK(agents::smore_update_policy(agent, batch) == bc);
}

TEST_CASE("policy update moves the policy toward weighted actions") {
  mdp::GoalMDP env = one_state_env();
  SmoreAgent agent = agents::make_smore_agent(env, small_config(), 66);
  zero_net(agent.s_net);
  zero_net(agent.m_net);
  std::vector<RelabeledTransition> batch(16, RelabeledTransition{0, 1, 0, 0});
  for (int step = 0; step < 200; ++step) {
    agents::smore_update_policy(agent, batch);
  }
  std::mt19937_64 rng(67);
  CHECK(agents::act(agent.policy_net, env, 0, 0, true, rng) == 1);
}

TEST_CASE("training is seed-deterministic and zero steps returns init") {
  mdp::GoalMDP env = mdp::build_gridworld(3, 0.0);
  data::OfflineDataset ds = data::collect_dataset(env, 0.5, 20, 10, 3);
  SmoreConfig cfg = small_config();
  cfg.hidden = {8, 8};
  cfg.batch_size = 16;
  cfg.total_steps = 30;

  SmoreAgent a = agents::smore_train(ds, cfg, 42);
  SmoreAgent b = agents::smore_train(ds, cfg, 42);
  SmoreAgent c = agents::smore_train(ds, cfg, 43);
  CHECK(a.step == 30);
  bool all_equal = true, any_diff = false;
  for (std::size_t l = 0; l < a.s_net.weights.size(); ++l) {
    all_equal = all_equal &&
                (a.s_net.weights[l] - b.s_net.weights[l]).norm() == 0.0;
    any_diff = any_diff ||
               (a.s_net.weights[l] - c.s_net.weights[l]).norm() > 0.0;
  }
  CHECK(all_equal);
  CHECK(any_diff);

  cfg.total_steps = 0;
  SmoreAgent init = agents::smore_train(ds, cfg, 42);
  CHECK(init.step == 0);
}

TEST_CASE("behavior cloning on expert data reaches commanded goals") {
  mdp::GoalMDP env = mdp::build_gridworld(3, 0.0);
  data::OfflineDataset ds = data::collect_dataset(env, 1.0, 300, 30, 71);
  SmoreConfig cfg;
  cfg.hidden = {32, 32};
  cfg.batch_size = 64;
  cfg.total_steps = 3000;
  cfg.base_lr = 1e-3;
  BaselineAgent agent = agents::gcsl_train(ds, cfg, 72);
  CHECK(agent.variant == BaselineVariant::gcsl);
  CHECK(greedy_success(agent.policy_net, env, 200, 25, 73) >= 0.9);
}

TEST_CASE("behavior cloning loss decreases over early steps") {
  mdp::GoalMDP env = mdp::build_gridworld(3, 0.0);
  data::OfflineDataset ds = data::collect_dataset(env, 1.0, 100, 20, 81);
  SmoreConfig cfg;
  cfg.hidden = {16, 16};
  cfg.batch_size = 32;
  cfg.total_steps = 1000;
  cfg.base_lr = 1e-3;
  BaselineAgent agent = agents::make_baseline_agent(BaselineVariant::gcsl,
                                                    env, cfg, 82);
  std::mt19937_64 rng(83);
  std::uniform_int_distribution<std::size_t> pick(0, ds.transitions.size() - 1);
  double head = 0.0, tail = 0.0;
  for (int step = 0; step < 1000; ++step) {
    std::vector<std::size_t> idx(32);
    for (auto& i : idx) i = pick(rng);
    double loss =
        agents::bc_update(agent, data::her_relabel(ds, idx, 0.8, rng));
    if (step < 100) head += loss;
    if (step >= 900) tail += loss;
    agent.step += 1;
  }
  CHECK(tail < head);
}

TEST_CASE("sparse offline rl drives values to zero without rewards") {
  // Horizon-3 random walks never reach the commanded goal 5 and her_ratio 0
  // keeps that goal, so every realized reward is zero.
  mdp::GoalMDP env = mdp::build_chain(6, 0.99);
  data::OfflineDataset ds = data::collect_dataset(env, 0.0, 200, 3, 91);
  SmoreConfig cfg;
  cfg.hidden = {16, 16};
  cfg.batch_size = 32;
  cfg.total_steps = 2000;
  cfg.her_ratio = 0.0;
  cfg.base_lr = 3e-3;
  // The zero-reward fixed point is reached at rate gamma per full fit; a
  // small discount keeps the test fast.
  cfg.gamma = 0.5;
  BaselineAgent agent = agents::iql_sparse_train(ds, cfg, 92);
  // Only in-sample (s, a) pairs see the backup; unseen pairs keep their
  // initialization.
  std::set<std::pair<int, int>> seen;
  for (const data::Transition& t : ds.transitions) seen.insert({t.s, t.a});
  std::vector<int> ss, aa, gg;
  for (auto [s, a] : seen) {
    ss.push_back(s);
    aa.push_back(a);
    gg.push_back(5);
  }
  Eigen::MatrixXd q_vals =
      nn::forward(agent.q_net, agents::encode_sag(env, ss, aa, gg));
  CHECK(q_vals.cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("iql update rejects the wrong agent variant") {
  mdp::GoalMDP env = mdp::build_chain(3, 0.9);
  BaselineAgent agent = agents::make_baseline_agent(BaselineVariant::gcsl,
                                                    env, small_config(), 99);
  std::vector<RelabeledTransition> batch = {{0, 0, 1, 1}};
  CHECK_THROWS_AS(agents::iql_update(agent, batch), std::invalid_argument);
  CHECK_THROWS_AS(agents::gofar_update(agent, batch), std::invalid_argument);
}

TEST_CASE("discriminator separates disjoint supports toward certainty") {
  mdp::GoalMDP env = mdp::build_chain(2, 0.9);
  SmoreConfig cfg;
  cfg.hidden = {8};
  cfg.batch_size = 16;
  cfg.base_lr = 1e-2;
  BaselineAgent agent = agents::make_baseline_agent(
      BaselineVariant::gofar_lite, env, cfg, 101);
  Eigen::MatrixXd pos = agents::encode_sg(env, {1, 1}, {1, 1});
  Eigen::MatrixXd neg = agents::encode_sg(env, {0, 0}, {1, 1});
  for (int step = 0; step < 4000; ++step) {
    agents::gofar_disc_update(agent, pos, neg);
  }
  double pos_logit = nn::forward(agent.disc_net, pos)(0, 0);
  double neg_logit = nn::forward(agent.disc_net, neg)(0, 0);
  // Perfect separation drives the log odds past the pseudo-reward clip.
  CHECK(pos_logit > 10.0);
  CHECK(neg_logit < -10.0);
  // Value and policy phases stay finite under the clipped rewards.
  std::vector<RelabeledTransition> batch = {{0, 1, 1, 1}, {1, 0, 0, 1}};
  agents::GofarLosses losses = agents::gofar_update(agent, batch);
  CHECK(std::isfinite(losses.v_loss));
  CHECK(std::isfinite(losses.policy_loss));
}

TEST_CASE("gofar training runs end to end on a tiny dataset") {
  mdp::GoalMDP env = mdp::build_chain(3, 0.9);
  data::OfflineDataset ds = data::collect_dataset(env, 0.5, 40, 8, 111);
  SmoreConfig cfg;
  cfg.hidden = {8, 8};
  cfg.batch_size = 16;
  cfg.total_steps = 50;
  cfg.disc_steps = 200;
  BaselineAgent agent = agents::gofar_lite_train(ds, cfg, 112);
  CHECK(agent.step == 50);
  std::mt19937_64 rng(113);
  int a = agents::act(agent.policy_net, env, 0, 2, true, rng);
  CHECK(a >= 0);
  CHECK(a < env.n_actions);
}

TEST_CASE("greedy action ties break to the lowest index") {
  mdp::GoalMDP env = mdp::build_chain(2, 0.9);
  SmoreConfig cfg = small_config();
  BaselineAgent agent = agents::make_baseline_agent(BaselineVariant::gcsl,
                                                    env, cfg, 121);
  zero_net(agent.policy_net);
  std::mt19937_64 rng(122);
  for (int rep = 0; rep < 5; ++rep) {
    CHECK(agents::act(agent.policy_net, env, 0, 1, true, rng) == 0);
  }
}

TEST_CASE("stochastic action frequencies match the softmax") {
  mdp::GoalMDP env = mdp::build_chain(2, 0.9);
  nn::DenseNet net = nn::make_dense_net({4, 2}, 131);
  for (auto& w : net.weights) w.setZero();
  net.biases.back() << 0.0, std::log(3.0);
  std::mt19937_64 rng(132);
  int count1 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    count1 += agents::act(net, env, 0, 1, false, rng) == 1 ? 1 : 0;
  }
  CHECK(count1 / static_cast<double>(n) == doctest::Approx(0.75).epsilon(0.01));
}

TEST_CASE("smore checkpoints round trip through disk") {
  mdp::GoalMDP env = mdp::build_gridworld(3, 0.1);
  data::OfflineDataset ds = data::collect_dataset(env, 0.5, 20, 10, 141);
  SmoreConfig cfg = small_config();
  cfg.hidden = {8, 8};
  cfg.batch_size = 16;
  cfg.total_steps = 20;
  SmoreAgent agent = agents::smore_train(ds, cfg, 142);
  std::string prefix = temp_prefix("smore_agent_ckpt");
  agents::save_smore_agent(agent, prefix);
  SmoreAgent back = agents::load_smore_agent(prefix);
  CHECK(back.step == agent.step);
  CHECK(back.config.beta == cfg.beta);
  std::mt19937_64 rng(143);
  for (int s = 0; s < env.n_states; ++s) {
    for (int g = 0; g < env.n_goals; ++g) {
      CHECK(agents::act(back.policy_net, env, s, g, true, rng) ==
            agents::act(agent.policy_net, env, s, g, true, rng));
    }
  }
  for (const char* suffix : {".s.net", ".m.net", ".policy.net", ".json"}) {
    std::remove((prefix + suffix).c_str());
  }
}

TEST_CASE("baseline checkpoints preserve the variant and nets") {
  mdp::GoalMDP env = mdp::build_chain(4, 0.9);
  data::OfflineDataset ds = data::collect_dataset(env, 0.5, 30, 8, 151);
  SmoreConfig cfg = small_config();
  cfg.hidden = {8, 8};
  cfg.batch_size = 16;
  cfg.total_steps = 40;
  BaselineAgent agent = agents::iql_sparse_train(ds, cfg, 152);
  std::string prefix = temp_prefix("baseline_agent_ckpt");
  agents::save_baseline_agent(agent, prefix);
  BaselineAgent back = agents::load_baseline_agent(prefix);
  CHECK(back.variant == BaselineVariant::iql_sparse);
  Eigen::MatrixXd probe = agents::encode_sag(env, {0, 1}, {1, 0}, {3, 2});
  // Checkpoints store float32, so loaded outputs match to single precision.
  CHECK((nn::forward(back.q_net, probe) - nn::forward(agent.q_net, probe))
            .norm() < 1e-5);
  CHECK_THROWS_AS(agents::load_smore_agent(prefix), std::runtime_error);
  for (const char* suffix : {".q.net", ".v.net", ".policy.net", ".json"}) {
    std::remove((prefix + suffix).c_str());
  }
}
