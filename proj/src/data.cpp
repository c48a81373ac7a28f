#include "smore/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace smore::data {

namespace {

constexpr int kFormatVersion = 1;
constexpr std::size_t kRecordBytes = 7 * 4;

void write_le_i32(std::ostream& out, std::int32_t value) {
  std::uint32_t bits = static_cast<std::uint32_t>(value);
  char bytes[4] = {static_cast<char>(bits & 0xff),
                   static_cast<char>((bits >> 8) & 0xff),
                   static_cast<char>((bits >> 16) & 0xff),
                   static_cast<char>((bits >> 24) & 0xff)};
  out.write(bytes, 4);
}

std::int32_t read_le_i32(const unsigned char* bytes) {
  std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) |
                       (static_cast<std::uint32_t>(bytes[1]) << 8) |
                       (static_cast<std::uint32_t>(bytes[2]) << 16) |
                       (static_cast<std::uint32_t>(bytes[3]) << 24);
  return static_cast<std::int32_t>(bits);
}

}  // namespace

bool operator==(const Transition& a, const Transition& b) {
  return a.episode_id == b.episode_id && a.t == b.t && a.s == b.s &&
         a.a == b.a && a.s_next == b.s_next &&
         a.achieved_goal == b.achieved_goal &&
         a.commanded_goal == b.commanded_goal;
}

std::pair<std::size_t, std::size_t> OfflineDataset::episode_range(
    std::size_t i) const {
  if (i >= transitions.size()) {
    throw std::out_of_range("episode_range: transition index out of range");
  }
  std::size_t ep = static_cast<std::size_t>(transitions[i].episode_id);
  if (ep >= episodes.size() || i < episodes[ep].first ||
      i >= episodes[ep].second) {
    throw std::logic_error("episode_range: episode table is inconsistent");
  }
  return episodes[ep];
}

OfflineDataset collect_dataset(const mdp::GoalMDP& env, double expert_fraction,
                               int n_episodes, int horizon,
                               std::uint64_t seed) {
  if (expert_fraction < 0.0 || expert_fraction > 1.0) {
    throw std::invalid_argument("collect_dataset: expert_fraction outside "
                                "[0, 1]");
  }
  if (n_episodes <= 0 || horizon <= 0) {
    throw std::invalid_argument("collect_dataset: n_episodes and horizon "
                                "must be positive");
  }
  OfflineDataset ds;
  ds.env = env;
  ds.expert_fraction = expert_fraction;
  ds.seed = seed;
  ds.horizon = horizon;

  const int n_expert = static_cast<int>(
      std::ceil(expert_fraction * static_cast<double>(n_episodes)));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> any_action(0, env.n_actions - 1);
  constexpr double kExpertEpsilon = 0.1;

  std::map<int, std::vector<int>> expert_cache;
  auto expert_action = [&](int goal, int s) {
    auto it = expert_cache.find(goal);
    if (it == expert_cache.end()) {
      it = expert_cache.emplace(goal, mdp::value_iteration_expert(env, goal))
               .first;
    }
    return it->second[static_cast<std::size_t>(s)];
  };

  for (int ep = 0; ep < n_episodes; ++ep) {
    const bool is_expert = ep < n_expert;
    int goal = mdp::sample_categorical(env.q_test, rng);
    int s = mdp::sample_categorical(env.d0, rng);
    std::size_t begin = ds.transitions.size();
    for (int t = 0; t < horizon; ++t) {
      int a;
      if (is_expert && coin(rng) >= kExpertEpsilon) {
        a = expert_action(goal, s);
      } else {
        a = any_action(rng);
      }
      std::vector<double> row(static_cast<std::size_t>(env.n_states));
      for (int s2 = 0; s2 < env.n_states; ++s2) row[s2] = env.p(s, a, s2);
      int s_next = mdp::sample_categorical(row, rng);
      ds.transitions.push_back(Transition{ep, t, s, a, s_next,
                                          env.phi[s_next], goal});
      s = s_next;
    }
    ds.episodes.emplace_back(begin, ds.transitions.size());
  }
  return ds;
}

namespace {

// HER goal selection for transition i: a uniformly chosen step at or after i
// in the same episode; returns that step's index.
std::size_t future_step(const OfflineDataset& ds, std::size_t i,
                        std::mt19937_64& rng) {
  auto [begin, end] = ds.episode_range(i);
  (void)begin;
  std::uniform_int_distribution<std::size_t> pick(i, end - 1);
  return pick(rng);
}

}  // namespace

std::vector<RelabeledTransition> her_relabel(
    const OfflineDataset& dataset, const std::vector<std::size_t>& indices,
    double her_ratio, std::mt19937_64& rng) {
  if (her_ratio < 0.0 || her_ratio > 1.0) {
    throw std::invalid_argument("her_relabel: her_ratio outside [0, 1]");
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<RelabeledTransition> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const Transition& tr = dataset.transitions.at(i);
    int g = tr.commanded_goal;
    if (coin(rng) < her_ratio) {
      g = dataset.transitions[future_step(dataset, i, rng)].achieved_goal;
    }
    out.push_back(RelabeledTransition{tr.s, tr.a, tr.s_next, g});
  }
  return out;
}

std::vector<RelabeledTransition> sample_goal_transition(
    const OfflineDataset& dataset, double her_ratio, int batch_size,
    std::mt19937_64& rng) {
  if (dataset.transitions.empty()) {
    throw std::invalid_argument("sample_goal_transition: empty dataset");
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> any(0,
                                                 dataset.transitions.size() -
                                                     1);
  std::vector<RelabeledTransition> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (int k = 0; k < batch_size; ++k) {
    std::size_t i = any(rng);
    std::size_t j;
    if (coin(rng) < her_ratio) {
      j = future_step(dataset, i, rng);
    } else {
      // Commanded-goal branch: pick uniformly among the episode's steps that
      // enter the commanded goal; fall back to the HER branch when the
      // episode never reaches it, so phi(s_next) = g holds by construction.
      const Transition& tr = dataset.transitions[i];
      auto [begin, end] = dataset.episode_range(i);
      std::size_t count = 0;
      for (std::size_t m = begin; m < end; ++m) {
        if (dataset.transitions[m].achieved_goal == tr.commanded_goal) {
          ++count;
        }
      }
      if (count == 0) {
        j = future_step(dataset, i, rng);
      } else {
        std::uniform_int_distribution<std::size_t> which(0, count - 1);
        std::size_t target = which(rng);
        j = begin;
        for (std::size_t m = begin; m < end; ++m) {
          if (dataset.transitions[m].achieved_goal == tr.commanded_goal) {
            if (target == 0) {
              j = m;
              break;
            }
            --target;
          }
        }
      }
    }
    const Transition& hit = dataset.transitions[j];
    out.push_back(
        RelabeledTransition{hit.s, hit.a, hit.s_next, hit.achieved_goal});
  }
  return out;
}

EmpiricalJoint empirical_joint(const OfflineDataset& dataset, double her_ratio,
                               int n_samples, std::uint64_t seed) {
  if (dataset.transitions.empty()) {
    throw std::invalid_argument("empirical_joint: empty dataset");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> any(0,
                                                 dataset.transitions.size() -
                                                     1);
  EmpiricalJoint joint;
  joint.rho = SagTensor(dataset.env.n_states, dataset.env.n_actions,
                        dataset.env.n_goals);
  std::vector<std::size_t> one(1);
  for (int k = 0; k < n_samples; ++k) {
    one[0] = any(rng);
    RelabeledTransition t = her_relabel(dataset, one, her_ratio, rng)[0];
    joint.rho.at(t.s, t.a, t.g) += 1.0;
  }
  for (double& x : joint.rho.v) x /= static_cast<double>(n_samples);
  return joint;
}

void save_dataset(const OfflineDataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("save_dataset: cannot open " + path);
  }
  nlohmann::json header;
  header["version"] = kFormatVersion;
  header["env"] = mdp::to_json(dataset.env);
  header["n_transitions"] = dataset.transitions.size();
  header["n_episodes"] = dataset.episodes.size();
  header["expert_fraction"] = dataset.expert_fraction;
  header["seed"] = dataset.seed;
  header["horizon"] = dataset.horizon;
  out << header.dump() << '\n';
  for (const Transition& t : dataset.transitions) {
    write_le_i32(out, t.episode_id);
    write_le_i32(out, t.t);
    write_le_i32(out, t.s);
    write_le_i32(out, t.a);
    write_le_i32(out, t.s_next);
    write_le_i32(out, t.achieved_goal);
    write_le_i32(out, t.commanded_goal);
  }
  if (!out) {
    throw std::runtime_error("save_dataset: write failed for " + path);
  }
}

OfflineDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("load_dataset: cannot open " + path);
  }
  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw std::runtime_error("load_dataset: missing header in " + path);
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("load_dataset: bad header in " + path + ": " +
                             e.what());
  }
  int version = header.at("version").get<int>();
  if (version != kFormatVersion) {
    std::ostringstream msg;
    msg << "load_dataset: format version " << version << " in " << path
        << ", expected " << kFormatVersion;
    throw std::runtime_error(msg.str());
  }
  OfflineDataset ds;
  ds.env = mdp::mdp_from_json(header.at("env"));
  ds.expert_fraction = header.at("expert_fraction").get<double>();
  ds.seed = header.at("seed").get<std::uint64_t>();
  ds.horizon = header.at("horizon").get<int>();
  std::size_t n = header.at("n_transitions").get<std::size_t>();
  std::size_t header_bytes = header_line.size() + 1;

  std::vector<unsigned char> buf(n * kRecordBytes);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
    std::ostringstream msg;
    msg << "load_dataset: " << path << " truncated at byte "
        << header_bytes + static_cast<std::size_t>(in.gcount())
        << " (expected " << buf.size() << " record bytes)";
    throw std::runtime_error(msg.str());
  }
  ds.transitions.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* r = &buf[i * kRecordBytes];
    ds.transitions.push_back(Transition{
        read_le_i32(r), read_le_i32(r + 4), read_le_i32(r + 8),
        read_le_i32(r + 12), read_le_i32(r + 16), read_le_i32(r + 20),
        read_le_i32(r + 24)});
  }
  // Rebuild episode ranges from contiguous episode ids.
  std::size_t n_episodes = header.at("n_episodes").get<std::size_t>();
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= ds.transitions.size(); ++i) {
    if (i == ds.transitions.size() ||
        ds.transitions[i].episode_id != ds.transitions[begin].episode_id) {
      ds.episodes.emplace_back(begin, i);
      begin = i;
    }
  }
  if (ds.episodes.size() != n_episodes) {
    throw std::runtime_error("load_dataset: episode count mismatch in " +
                             path);
  }
  return ds;
}

void export_csv(const OfflineDataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("export_csv: cannot open " + path);
  }
  out << "episode_id,t,s,a,s_next,achieved_goal,commanded_goal\n";
  for (const Transition& t : dataset.transitions) {
    out << t.episode_id << ',' << t.t << ',' << t.s << ',' << t.a << ','
        << t.s_next << ',' << t.achieved_goal << ',' << t.commanded_goal
        << '\n';
  }
  if (!out) {
    throw std::runtime_error("export_csv: write failed for " + path);
  }
}

}  // namespace smore::data
