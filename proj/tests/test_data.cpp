#include "smore/data.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include <doctest.h>

using namespace smore;
using data::OfflineDataset;
using data::RelabeledTransition;
using data::Transition;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

// One handcrafted episode on chain(4) moving right: s_next visits 1, 2, 3.
OfflineDataset tiny_chain_dataset() {
  OfflineDataset ds;
  ds.env = mdp::build_chain(4, 0.9);
  ds.transitions = {Transition{0, 0, 0, 1, 1, 1, 3},
                    Transition{0, 1, 1, 1, 2, 2, 3},
                    Transition{0, 2, 2, 1, 3, 3, 3}};
  ds.episodes = {{0, 3}};
  ds.horizon = 3;
  return ds;
}

}  // namespace

TEST_CASE("collect_dataset has the documented shape and provenance") {
  mdp::GoalMDP env = mdp::build_gridworld(3, 0.0);
  OfflineDataset ds = data::collect_dataset(env, 0.1, 100, 20, 5);
  CHECK(ds.episodes.size() == 100);
  CHECK(ds.transitions.size() == 2000);
  CHECK(ds.expert_fraction == 0.1);
  CHECK(ds.horizon == 20);
  for (std::size_t ep = 0; ep < ds.episodes.size(); ++ep) {
    auto [begin, end] = ds.episodes[ep];
    CHECK(end - begin == 20);
    for (std::size_t i = begin; i < end; ++i) {
      CHECK(ds.transitions[i].episode_id == static_cast<int>(ep));
      CHECK(ds.transitions[i].t == static_cast<int>(i - begin));
      CHECK(ds.transitions[i].achieved_goal ==
            env.phi[ds.transitions[i].s_next]);
      if (i > begin) {
        CHECK(ds.transitions[i].s == ds.transitions[i - 1].s_next);
      }
    }
  }
}

TEST_CASE("chain episodes start at the initial state") {
  mdp::GoalMDP env = mdp::build_chain(5, 0.99);
  OfflineDataset ds = data::collect_dataset(env, 0.0, 30, 10, 7);
  for (auto [begin, end] : ds.episodes) {
    (void)end;
    CHECK(ds.transitions[begin].s == 0);
  }
}

TEST_CASE("expert episodes reach their commanded goal") {
  // Expert with exploration noise 0.1 replans from every state, so on a
  // small deterministic grid with a long horizon every episode gets there.
  mdp::GoalMDP env = mdp::build_gridworld(3, 0.0);
  OfflineDataset ds = data::collect_dataset(env, 1.0, 50, 50, 11);
  for (auto [begin, end] : ds.episodes) {
    bool reached = false;
    for (std::size_t i = begin; i < end; ++i) {
      reached = reached ||
                ds.transitions[i].achieved_goal ==
                    ds.transitions[i].commanded_goal;
    }
    CHECK(reached);
  }
}

TEST_CASE("all-random datasets have near-uniform action usage") {
  mdp::GoalMDP env = mdp::build_chain(4, 0.9);
  OfflineDataset ds = data::collect_dataset(env, 0.0, 500, 20, 13);
  std::vector<int> counts(static_cast<std::size_t>(env.n_actions), 0);
  for (const Transition& t : ds.transitions) counts[t.a] += 1;
  double total = static_cast<double>(ds.transitions.size());
  for (int c : counts) {
    CHECK(c / total == doctest::Approx(1.0 / env.n_actions).epsilon(0.05));
  }
}

TEST_CASE("dataset collection is seed-deterministic") {
  mdp::GoalMDP env = mdp::build_gridworld(3, 0.2);
  OfflineDataset a = data::collect_dataset(env, 0.25, 40, 15, 99);
  OfflineDataset b = data::collect_dataset(env, 0.25, 40, 15, 99);
  OfflineDataset c = data::collect_dataset(env, 0.25, 40, 15, 100);
  REQUIRE(a.transitions.size() == b.transitions.size());
  for (std::size_t i = 0; i < a.transitions.size(); ++i) {
    CHECK(a.transitions[i] == b.transitions[i]);
  }
  bool any_diff = a.transitions.size() != c.transitions.size();
  for (std::size_t i = 0; !any_diff && i < a.transitions.size(); ++i) {
    any_diff = !(a.transitions[i] == c.transitions[i]);
  }
  CHECK(any_diff);
}

TEST_CASE("her ratio zero keeps commanded goals") {
  OfflineDataset ds = tiny_chain_dataset();
  std::mt19937_64 rng(1);
  auto batch = data::her_relabel(ds, {0, 1, 2}, 0.0, rng);
  for (const RelabeledTransition& t : batch) CHECK(t.g == 3);
}

TEST_CASE("her on the last step can only use its own achieved goal") {
  OfflineDataset ds = tiny_chain_dataset();
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    auto batch = data::her_relabel(ds, {2}, 1.0, rng);
    CHECK(batch[0].g == 3);
  }
}

TEST_CASE("her relabel frequency concentrates at the ratio") {
  // Horizon-3 random walks on chain(6) never reach the commanded goal 5,
  // so a non-commanded goal in the output marks exactly the relabeled draws.
  mdp::GoalMDP env = mdp::build_chain(6, 0.9);
  OfflineDataset ds = data::collect_dataset(env, 0.0, 300, 3, 17);
  for (const Transition& t : ds.transitions) {
    REQUIRE(t.achieved_goal != t.commanded_goal);
  }
  std::mt19937_64 rng(18);
  std::uniform_int_distribution<std::size_t> any(0, ds.transitions.size() - 1);
  const int n = 100000;
  std::vector<std::size_t> indices(n);
  for (auto& i : indices) i = any(rng);
  auto batch = data::her_relabel(ds, indices, 0.8, rng);
  int relabeled = 0;
  for (const RelabeledTransition& t : batch) relabeled += t.g != 5 ? 1 : 0;
  CHECK(relabeled / static_cast<double>(n) ==
        doctest::Approx(0.8).epsilon(0.0125));
}

TEST_CASE("relabeled goals are achieved at or after their transition") {
  mdp::GoalMDP env = mdp::build_chain(6, 0.9);
  OfflineDataset ds = data::collect_dataset(env, 0.0, 100, 5, 19);
  std::mt19937_64 rng(20);
  std::uniform_int_distribution<std::size_t> any(0, ds.transitions.size() - 1);
  for (int rep = 0; rep < 2000; ++rep) {
    std::size_t i = any(rng);
    auto batch = data::her_relabel(ds, {i}, 1.0, rng);
    auto [begin, end] = ds.episode_range(i);
    (void)begin;
    bool found = false;
    for (std::size_t m = i; m < end; ++m) {
      found = found || ds.transitions[m].achieved_goal == batch[0].g;
    }
    CHECK(found);
  }
}

TEST_CASE("goal transition samples enter their selected goal") {
  mdp::GoalMDP env = mdp::build_gridworld(3, 0.1);
  OfflineDataset ds = data::collect_dataset(env, 0.2, 80, 15, 23);
  std::mt19937_64 rng(24);
  for (double ratio : {0.0, 0.5, 1.0}) {
    auto batch = data::sample_goal_transition(ds, ratio, 500, rng);
    for (const RelabeledTransition& t : batch) {
      CHECK(env.phi[t.s_next] == t.g);
      // Support of the analytic goal-transition distribution: the pair must
      // be able to enter the goal.
      CHECK(mdp::sparse_reward(env, t.s, t.a, t.g) > 0.0);
    }
  }
}

TEST_CASE("goal transition sampling returns the step entering the goal") {
  OfflineDataset ds = tiny_chain_dataset();
  std::mt19937_64 rng(25);
  auto batch = data::sample_goal_transition(ds, 1.0, 200, rng);
  std::set<int> goals;
  for (const RelabeledTransition& t : batch) {
    goals.insert(t.g);
    if (t.g == 3) {
      // Only step 2 enters state 3.
      CHECK(t.s == 2);
      CHECK(t.s_next == 3);
    }
  }
  CHECK(goals.count(3) == 1);
}

TEST_CASE("empirical joint is normalized and respects goal support") {
  mdp::GoalMDP env = mdp::build_chain(4, 0.9);
  OfflineDataset ds = data::collect_dataset(env, 0.0, 50, 6, 27);
  data::EmpiricalJoint joint = data::empirical_joint(ds, 0.0, 20000, 28);
  CHECK(joint.rho.sum() == doctest::Approx(1.0).epsilon(1e-12));
  // her_ratio 0 keeps the commanded goal 3 everywhere.
  for (int s = 0; s < env.n_states; ++s) {
    for (int a = 0; a < env.n_actions; ++a) {
      for (int g = 0; g < 3; ++g) CHECK(joint.rho.at(s, a, g) == 0.0);
    }
  }
}

TEST_CASE("independent empirical joints agree in total variation") {
  mdp::GoalMDP env = mdp::build_chain(4, 0.9);
  OfflineDataset ds = data::collect_dataset(env, 0.3, 60, 8, 29);
  data::EmpiricalJoint a = data::empirical_joint(ds, 0.8, 1000000, 30);
  data::EmpiricalJoint b = data::empirical_joint(ds, 0.8, 1000000, 31);
  double tv = 0.0;
  for (std::size_t i = 0; i < a.rho.size(); ++i) {
    tv += 0.5 * std::abs(a.rho.v[i] - b.rho.v[i]);
  }
  CHECK(tv <= 0.01);
}

TEST_CASE("dataset files round trip bit-exactly") {
  mdp::GoalMDP env = mdp::build_gridworld(3, 0.2);
  OfflineDataset ds = data::collect_dataset(env, 0.5, 30, 12, 33);
  std::string path = temp_path("smore_data_roundtrip.bin");
  data::save_dataset(ds, path);
  OfflineDataset back = data::load_dataset(path);
  REQUIRE(back.transitions.size() == ds.transitions.size());
  for (std::size_t i = 0; i < ds.transitions.size(); ++i) {
    CHECK(back.transitions[i] == ds.transitions[i]);
  }
  CHECK(back.episodes == ds.episodes);
  CHECK(back.expert_fraction == ds.expert_fraction);
  CHECK(back.seed == ds.seed);
  CHECK(back.horizon == ds.horizon);
  CHECK(back.env.n_states == ds.env.n_states);
  CHECK(back.env.transition == ds.env.transition);

  std::string path2 = temp_path("smore_data_roundtrip2.bin");
  data::save_dataset(back, path2);
  CHECK(file_bytes(path) == file_bytes(path2));
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("dataset loader reports truncation with a byte offset") {
  mdp::GoalMDP env = mdp::build_chain(3, 0.9);
  OfflineDataset ds = data::collect_dataset(env, 0.0, 4, 5, 35);
  std::string path = temp_path("smore_data_truncated.bin");
  data::save_dataset(ds, path);
  std::string bytes = file_bytes(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 9));
  out.close();
  CHECK_THROWS_WITH_AS(data::load_dataset(path),
                       doctest::Contains("truncated at byte"),
                       std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("dataset loader rejects unknown format versions") {
  mdp::GoalMDP env = mdp::build_chain(3, 0.9);
  OfflineDataset ds = data::collect_dataset(env, 0.0, 2, 4, 37);
  std::string path = temp_path("smore_data_version.bin");
  data::save_dataset(ds, path);
  std::string bytes = file_bytes(path);
  std::size_t header_end = bytes.find('\n');
  std::string header = bytes.substr(0, header_end);
  std::size_t pos = header.find("\"version\":1");
  REQUIRE(pos != std::string::npos);
  header.replace(pos, 11, "\"version\":2");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << header << bytes.substr(header_end);
  out.close();
  CHECK_THROWS_WITH_AS(data::load_dataset(path),
                       doctest::Contains("format version 2"),
                       std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("csv export writes one headered row per transition") {
  OfflineDataset ds = tiny_chain_dataset();
  std::string path = temp_path("smore_data_export.csv");
  data::export_csv(ds, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "episode_id,t,s,a,s_next,achieved_goal,commanded_goal");
  std::getline(in, line);
  CHECK(line == "0,0,0,1,1,1,3");
  int rows = 1;
  while (std::getline(in, line)) rows += line.empty() ? 0 : 1;
  CHECK(rows == 3);
  in.close();
  std::remove(path.c_str());
}
