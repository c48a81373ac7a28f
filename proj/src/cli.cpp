#include "smore/cli.hpp"

#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "smore/data.hpp"
#include "smore/nn.hpp"
#include "smore/verify.hpp"

namespace smore::cli {

namespace {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Flat TOML-subset parsing: dotted keys or [section] headers, scalar and
// homogeneous array values, # comments. Duplicate and unknown keys are
// errors so config typos fail loudly.

struct TomlValue {
  enum class Type { string, boolean, integer, floating, array };
  Type type = Type::string;
  std::string s;
  bool b = false;
  long long i = 0;
  double d = 0.0;
  std::vector<TomlValue> items;
};

using TomlMap = std::map<std::string, TomlValue>;

bool is_bare_key_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' ||
         c == '.';
}

struct Cursor {
  const std::string& text;
  size_t pos = 0;
  int line = 1;

  bool done() const { return pos >= text.size(); }
  char peek() const { return text[pos]; }
  void advance() {
    if (text[pos] == '\n') ++line;
    ++pos;
  }
  void skip_spaces() {
    while (!done() && (peek() == ' ' || peek() == '\t')) advance();
  }
  [[noreturn]] void fail(const std::string& what) const {
    std::ostringstream msg;
    msg << "config line " << line << ": " << what;
    throw ConfigError(msg.str());
  }
};

TomlValue parse_value(Cursor& c);

TomlValue parse_string(Cursor& c) {
  c.advance();  // opening quote
  TomlValue v;
  v.type = TomlValue::Type::string;
  while (!c.done() && c.peek() != '"') {
    if (c.peek() == '\n') c.fail("unterminated string");
    if (c.peek() == '\\') {
      c.advance();
      if (c.done()) c.fail("unterminated string escape");
      char e = c.peek();
      if (e == '"' || e == '\\') {
        v.s.push_back(e);
      } else {
        c.fail(std::string("unsupported string escape '\\") + e + "'");
      }
      c.advance();
      continue;
    }
    v.s.push_back(c.peek());
    c.advance();
  }
  if (c.done()) c.fail("unterminated string");
  c.advance();  // closing quote
  return v;
}

TomlValue parse_array(Cursor& c) {
  c.advance();  // '['
  TomlValue v;
  v.type = TomlValue::Type::array;
  c.skip_spaces();
  while (!c.done() && c.peek() != ']') {
    v.items.push_back(parse_value(c));
    c.skip_spaces();
    if (!c.done() && c.peek() == ',') {
      c.advance();
      c.skip_spaces();
    }
  }
  if (c.done()) c.fail("unterminated array");
  c.advance();  // ']'
  return v;
}

TomlValue parse_scalar(Cursor& c) {
  size_t start = c.pos;
  while (!c.done() && c.peek() != '\n' && c.peek() != ',' && c.peek() != ']' &&
         c.peek() != '#') {
    c.advance();
  }
  std::string token = c.text.substr(start, c.pos - start);
  while (!token.empty() && (token.back() == ' ' || token.back() == '\t')) {
    token.pop_back();
  }
  if (token.empty()) c.fail("missing value");

  TomlValue v;
  if (token == "true" || token == "false") {
    v.type = TomlValue::Type::boolean;
    v.b = token == "true";
    return v;
  }
  bool integral = true;
  for (size_t k = 0; k < token.size(); ++k) {
    char ch = token[k];
    if (k == 0 && (ch == '+' || ch == '-')) continue;
    if (!std::isdigit(static_cast<unsigned char>(ch))) integral = false;
  }
  const char* begin = token.c_str();
  char* end = nullptr;
  if (integral) {
    v.type = TomlValue::Type::integer;
    v.i = std::strtoll(begin, &end, 10);
  } else {
    v.type = TomlValue::Type::floating;
    v.d = std::strtod(begin, &end);
  }
  if (end != begin + token.size()) {
    c.fail("cannot parse value '" + token + "'");
  }
  return v;
}

TomlValue parse_value(Cursor& c) {
  if (c.done()) c.fail("missing value");
  char ch = c.peek();
  if (ch == '"') return parse_string(c);
  if (ch == '[') return parse_array(c);
  return parse_scalar(c);
}

TomlMap parse_toml(const std::string& text) {
  TomlMap out;
  Cursor c{text};
  std::string prefix;
  while (!c.done()) {
    c.skip_spaces();
    if (c.done()) break;
    char ch = c.peek();
    if (ch == '\n') {
      c.advance();
      continue;
    }
    if (ch == '#') {
      while (!c.done() && c.peek() != '\n') c.advance();
      continue;
    }
    if (ch == '[') {
      c.advance();
      std::string name;
      while (!c.done() && c.peek() != ']' && c.peek() != '\n') {
        name.push_back(c.peek());
        c.advance();
      }
      if (c.done() || c.peek() != ']') c.fail("unterminated section header");
      c.advance();
      for (char k : name) {
        if (!is_bare_key_char(k)) c.fail("bad section name '" + name + "'");
      }
      if (name.empty()) c.fail("empty section name");
      prefix = name + ".";
      continue;
    }
    // key = value
    std::string key;
    while (!c.done() && is_bare_key_char(c.peek())) {
      key.push_back(c.peek());
      c.advance();
    }
    if (key.empty()) c.fail("expected a key");
    c.skip_spaces();
    if (c.done() || c.peek() != '=') c.fail("expected '=' after '" + key + "'");
    c.advance();
    c.skip_spaces();
    TomlValue v = parse_value(c);
    c.skip_spaces();
    if (!c.done() && c.peek() == '#') {
      while (!c.done() && c.peek() != '\n') c.advance();
    }
    if (!c.done() && c.peek() != '\n') c.fail("trailing text after value");
    std::string full = prefix + key;
    if (out.count(full)) c.fail("duplicate key '" + full + "'");
    out.emplace(full, std::move(v));
  }
  return out;
}

[[noreturn]] void type_fail(const std::string& key, const char* want) {
  throw ConfigError("config key '" + key + "' must be " + want);
}

std::string take_string(TomlMap& m, const std::string& key,
                        const std::string& fallback) {
  auto it = m.find(key);
  if (it == m.end()) return fallback;
  if (it->second.type != TomlValue::Type::string) type_fail(key, "a string");
  std::string v = it->second.s;
  m.erase(it);
  return v;
}

long long take_int(TomlMap& m, const std::string& key, long long fallback) {
  auto it = m.find(key);
  if (it == m.end()) return fallback;
  if (it->second.type != TomlValue::Type::integer) type_fail(key, "an integer");
  long long v = it->second.i;
  m.erase(it);
  return v;
}

double take_double(TomlMap& m, const std::string& key, double fallback) {
  auto it = m.find(key);
  if (it == m.end()) return fallback;
  double v = 0.0;
  if (it->second.type == TomlValue::Type::floating) {
    v = it->second.d;
  } else if (it->second.type == TomlValue::Type::integer) {
    v = static_cast<double>(it->second.i);
  } else {
    type_fail(key, "a number");
  }
  m.erase(it);
  return v;
}

std::vector<int> take_int_array(TomlMap& m, const std::string& key,
                                std::vector<int> fallback) {
  auto it = m.find(key);
  if (it == m.end()) return fallback;
  if (it->second.type != TomlValue::Type::array) {
    type_fail(key, "an array of integers");
  }
  std::vector<int> out;
  for (const TomlValue& item : it->second.items) {
    if (item.type != TomlValue::Type::integer) {
      type_fail(key, "an array of integers");
    }
    out.push_back(static_cast<int>(item.i));
  }
  m.erase(it);
  return out;
}

std::vector<double> take_double_array(TomlMap& m, const std::string& key,
                                      std::vector<double> fallback) {
  auto it = m.find(key);
  if (it == m.end()) return fallback;
  if (it->second.type != TomlValue::Type::array) {
    type_fail(key, "an array of numbers");
  }
  std::vector<double> out;
  for (const TomlValue& item : it->second.items) {
    if (item.type == TomlValue::Type::integer) {
      out.push_back(static_cast<double>(item.i));
    } else if (item.type == TomlValue::Type::floating) {
      out.push_back(item.d);
    } else {
      type_fail(key, "an array of numbers");
    }
  }
  m.erase(it);
  return out;
}

std::vector<std::string> take_string_array(TomlMap& m, const std::string& key,
                                           std::vector<std::string> fallback) {
  auto it = m.find(key);
  if (it == m.end()) return fallback;
  if (it->second.type != TomlValue::Type::array) {
    type_fail(key, "an array of strings");
  }
  std::vector<std::string> out;
  for (const TomlValue& item : it->second.items) {
    if (item.type != TomlValue::Type::string) {
      type_fail(key, "an array of strings");
    }
    out.push_back(item.s);
  }
  m.erase(it);
  return out;
}

void require_agent_name(const std::string& name) {
  if (name == "smore") return;
  agents::variant_from_name(name);  // throws on anything else
}

const char* kSweepAxes[] = {"data.expert_fraction", "env.slip", "agent.beta"};

void validate(const ExperimentConfig& c) {
  if (c.env_type != "grid" && c.env_type != "chain") {
    throw ConfigError("env.type must be \"grid\" or \"chain\"");
  }
  if (c.env_size < 2) throw ConfigError("env.size must be at least 2");
  if (c.env_slip < 0.0 || c.env_slip >= 1.0) {
    throw ConfigError("env.slip must be in [0, 1)");
  }
  if (c.env_type == "chain" && c.env_slip != 0.0) {
    throw ConfigError("env.slip applies only to grid environments");
  }
  if (c.env_gamma <= 0.0 || c.env_gamma >= 1.0) {
    throw ConfigError("env.gamma must be strictly inside (0, 1)");
  }
  if (c.expert_fraction < 0.0 || c.expert_fraction > 1.0) {
    throw ConfigError("data.expert_fraction must be in [0, 1]");
  }
  if (c.data_episodes <= 0) throw ConfigError("data.episodes must be positive");
  if (c.data_horizon <= 0) throw ConfigError("data.horizon must be positive");
  try {
    require_agent_name(c.agent_name);
    for (const std::string& name : c.sweep_agents) require_agent_name(name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  agents::SmoreConfig agent = c.agent;
  agent.gamma = c.env_gamma;
  try {
    agents::require_config(agent);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.eval_every <= 0) throw ConfigError("agent.eval_every must be positive");
  if (c.eval_episodes <= 0) throw ConfigError("eval.episodes must be positive");
  if (c.eval_horizon <= 0) throw ConfigError("eval.horizon must be positive");
  if (c.eval_seeds.empty()) throw ConfigError("eval.seeds must not be empty");
  for (int s : c.eval_seeds) {
    if (s < 0) throw ConfigError("eval.seeds must be nonnegative");
  }
  if (!c.sweep_key.empty()) {
    bool known = false;
    for (const char* axis : kSweepAxes) {
      if (c.sweep_key == axis) known = true;
    }
    if (!known) {
      throw ConfigError(
          "sweep.key must be one of data.expert_fraction, env.slip, "
          "agent.beta");
    }
    if (c.sweep_values.empty()) {
      throw ConfigError("sweep.values must not be empty when sweep.key is set");
    }
  } else if (!c.sweep_values.empty()) {
    throw ConfigError("sweep.values requires sweep.key");
  }
}

// ---------------------------------------------------------------------------
// plumbing shared by the commands

void apply_sweep_value(ExperimentConfig& c, const std::string& key, double v) {
  if (key == "data.expert_fraction") {
    c.expert_fraction = v;
  } else if (key == "env.slip") {
    c.env_slip = v;
  } else if (key == "agent.beta") {
    c.agent.beta = v;
  } else {
    throw ConfigError("unsupported sweep key '" + key + "'");
  }
}

agents::SmoreConfig agent_config(const ExperimentConfig& c) {
  agents::SmoreConfig agent = c.agent;
  agent.gamma = c.env_gamma;
  return agent;
}

bool same_env(const mdp::GoalMDP& a, const mdp::GoalMDP& b) {
  return a.n_states == b.n_states && a.n_actions == b.n_actions &&
         a.n_goals == b.n_goals && a.gamma == b.gamma &&
         a.transition == b.transition && a.d0 == b.d0 && a.phi == b.phi &&
         a.q_train == b.q_train && a.q_test == b.q_test;
}

void ensure_dir(const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    throw std::runtime_error("cannot create output directory " + out_dir +
                             ": " + ec.message());
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

data::OfflineDataset dataset_for(const ExperimentConfig& c,
                                 const mdp::GoalMDP& env,
                                 const std::string& out_dir,
                                 std::ostream& log) {
  std::string bin = out_dir + "/dataset.bin";
  if (fs::exists(bin)) {
    data::OfflineDataset ds = data::load_dataset(bin);
    if (!same_env(ds.env, env) || ds.expert_fraction != c.expert_fraction ||
        ds.seed != c.data_seed || ds.horizon != c.data_horizon ||
        ds.episodes.size() != static_cast<std::size_t>(c.data_episodes)) {
      throw ConfigError(
          "dataset at " + bin +
          " was generated with different settings; delete it or match its "
          "config");
    }
    log << "loaded dataset " << bin << " (" << ds.size() << " transitions)\n";
    return ds;
  }
  data::OfflineDataset ds = data::collect_dataset(
      env, c.expert_fraction, c.data_episodes, c.data_horizon, c.data_seed);
  log << "collected dataset in memory (" << ds.size() << " transitions)\n";
  return ds;
}

std::uint64_t train_eval_seed(std::uint64_t agent_seed, int step) {
  return (agent_seed + 1) * 0x9e3779b97f4a7c15ULL +
         static_cast<std::uint64_t>(step);
}

struct TrainedPolicy {
  nn::DenseNet policy_net;
};

// Trains the configured agent, streaming log rows through `row`. Returns the
// final policy net; when `checkpoint_prefix` is nonempty the full agent is
// saved there.
TrainedPolicy train_agent(
    const ExperimentConfig& c, const data::OfflineDataset& ds,
    std::uint64_t agent_seed,
    const std::function<void(int, double, std::span<const double>,
                             const nn::DenseNet&)>& row,
    const std::string& checkpoint_prefix) {
  agents::SmoreConfig agent_cfg = agent_config(c);
  auto want_row = [&](int step) {
    return row && (step % c.eval_every == 0 || step == agent_cfg.total_steps);
  };
  double base_lr = agent_cfg.base_lr;

  if (c.agent_name == "smore") {
    agents::SmoreObserver observer =
        [&](const agents::SmoreAgent& a, int step, std::span<const double> l) {
          if (!want_row(step)) return;
          row(step, nn::cosine_lr(a.schedule, base_lr, step), l, a.policy_net);
        };
    agents::SmoreAgent agent =
        agents::smore_train(ds, agent_cfg, agent_seed, observer);
    if (!checkpoint_prefix.empty()) {
      agents::save_smore_agent(agent, checkpoint_prefix);
    }
    return {agent.policy_net};
  }

  agents::BaselineObserver observer =
      [&](const agents::BaselineAgent& a, int step, std::span<const double> l) {
        if (!want_row(step)) return;
        row(step, nn::cosine_lr(a.schedule, base_lr, step), l, a.policy_net);
      };
  agents::BaselineVariant variant = agents::variant_from_name(c.agent_name);
  agents::BaselineAgent agent =
      variant == agents::BaselineVariant::gcsl
          ? agents::gcsl_train(ds, agent_cfg, agent_seed, observer)
          : variant == agents::BaselineVariant::iql_sparse
                ? agents::iql_sparse_train(ds, agent_cfg, agent_seed, observer)
                : agents::gofar_lite_train(ds, agent_cfg, agent_seed, observer);
  if (!checkpoint_prefix.empty()) {
    agents::save_baseline_agent(agent, checkpoint_prefix);
  }
  return {agent.policy_net};
}

const char* train_log_header(const std::string& agent_name) {
  if (agent_name == "smore") {
    return "step,lr,score_loss,expectile_loss,policy_loss,eval_return\n";
  }
  if (agent_name == "gcsl") return "step,lr,cloning_loss,eval_return\n";
  if (agent_name == "iql_sparse") {
    return "step,lr,value_loss,q_loss,policy_loss,eval_return\n";
  }
  return "step,lr,value_loss,policy_loss,eval_return\n";
}

std::vector<eval::MetricSample> eval_cell(const ExperimentConfig& c,
                                          const mdp::GoalMDP& env,
                                          const nn::DenseNet& policy_net,
                                          const std::string& setting,
                                          int seed) {
  eval::RolloutStats stats = eval::rollout_stats(
      env, eval::make_net_policy(policy_net, env), c.eval_episodes,
      c.eval_horizon, c.env_gamma, static_cast<std::uint64_t>(seed),
      env_metric(c));
  std::string env_name = env_label(c);
  return {{env_name, c.agent_name, setting, seed, "return", stats.return_mean},
          {env_name, c.agent_name, setting, seed, "success_rate",
           stats.success_mean},
          {env_name, c.agent_name, setting, seed, "final_distance",
           stats.distance_mean}};
}

// ---------------------------------------------------------------------------
// summary emission shared by sweep and report

struct DropRow {
  std::string env;
  std::string agent;
  std::string setting;
  double mean = 0.0;
  double drop = 0.0;
};

// Mean return per (env, agent, setting) with the relative drop against the
// first-seen setting. Setting order follows first appearance in `samples`.
std::vector<DropRow> drop_rows(const std::vector<eval::MetricSample>& samples) {
  std::vector<std::string> setting_order;
  std::map<std::string, std::map<std::string, std::map<std::string,
                                                       std::vector<double>>>>
      by_env_agent_setting;
  for (const eval::MetricSample& s : samples) {
    if (s.metric != "return") continue;
    if (std::find(setting_order.begin(), setting_order.end(), s.setting) ==
        setting_order.end()) {
      setting_order.push_back(s.setting);
    }
    by_env_agent_setting[s.env][s.agent][s.setting].push_back(s.value);
  }
  std::vector<DropRow> rows;
  for (const auto& [env, agents_map] : by_env_agent_setting) {
    for (const auto& [agent, settings_map] : agents_map) {
      double base_mean = 0.0;
      bool have_base = false;
      for (const std::string& setting : setting_order) {
        auto it = settings_map.find(setting);
        if (it == settings_map.end()) continue;
        double mean = 0.0;
        for (double v : it->second) mean += v;
        mean /= static_cast<double>(it->second.size());
        if (!have_base) {
          base_mean = mean;
          have_base = true;
        }
        double drop =
            base_mean == 0.0 ? 0.0 : (mean - base_mean) / base_mean;
        rows.push_back({env, agent, setting, mean, drop});
      }
    }
  }
  return rows;
}

void write_drops_csv(const std::vector<DropRow>& rows,
                     const std::string& path) {
  std::ofstream out = open_out(path);
  out << "env,agent,metric,setting,mean,drop_vs_base\n";
  for (const DropRow& r : rows) {
    out << r.env << ',' << r.agent << ",return," << r.setting << ','
        << format_double(r.mean) << ',' << format_double(r.drop) << '\n';
  }
}

void write_summary_md(const std::vector<eval::MetricSample>& samples,
                      const std::vector<DropRow>& drops,
                      const std::string& path) {
  std::ofstream out = open_out(path);
  out << "# Results\n\n";
  out << eval::to_markdown(eval::aggregate(samples));
  std::vector<std::string> settings;
  for (const DropRow& r : drops) {
    if (std::find(settings.begin(), settings.end(), r.setting) ==
        settings.end()) {
      settings.push_back(r.setting);
    }
  }
  if (settings.size() > 1) {
    out << "\n## Return drop vs " << settings.front() << "\n\n";
    out << "| env | agent | setting | mean_return | drop_vs_base |\n";
    out << "| --- | --- | --- | --- | --- |\n";
    char buf[64];
    for (const DropRow& r : drops) {
      out << "| " << r.env << " | " << r.agent << " | " << r.setting << " | ";
      std::snprintf(buf, sizeof(buf), "%.4f", r.mean);
      out << buf << " | ";
      std::snprintf(buf, sizeof(buf), "%.4f", r.drop);
      out << buf << " |\n";
    }
  }
}

void write_summary_outputs(const std::vector<eval::MetricSample>& samples,
                           const std::string& out_dir) {
  std::vector<DropRow> drops = drop_rows(samples);
  write_drops_csv(drops, out_dir + "/drops.csv");
  write_summary_md(samples, drops, out_dir + "/summary.md");
}

}  // namespace

// ---------------------------------------------------------------------------
// config surface

ExperimentConfig parse_config_text(const std::string& text) {
  TomlMap m = parse_toml(text);
  ExperimentConfig c;

  c.env_type = take_string(m, "env.type", c.env_type);
  c.env_size = static_cast<int>(take_int(m, "env.size", c.env_size));
  c.env_slip = take_double(m, "env.slip", c.env_slip);
  c.env_gamma = take_double(m, "env.gamma", c.env_gamma);

  c.expert_fraction =
      take_double(m, "data.expert_fraction", c.expert_fraction);
  c.data_episodes =
      static_cast<int>(take_int(m, "data.episodes", c.data_episodes));
  c.data_horizon =
      static_cast<int>(take_int(m, "data.horizon", c.data_horizon));
  c.data_seed = static_cast<std::uint64_t>(
      take_int(m, "data.seed", static_cast<long long>(c.data_seed)));

  c.agent_name = take_string(m, "agent.name", c.agent_name);
  c.agent.beta = take_double(m, "agent.beta", c.agent.beta);
  c.agent.awr_temperature =
      take_double(m, "agent.awr_temperature", c.agent.awr_temperature);
  c.agent.expectile = take_double(m, "agent.expectile", c.agent.expectile);
  c.agent.her_ratio = take_double(m, "agent.her_ratio", c.agent.her_ratio);
  c.agent.batch_size =
      static_cast<int>(take_int(m, "agent.batch_size", c.agent.batch_size));
  c.agent.total_steps =
      static_cast<int>(take_int(m, "agent.total_steps", c.agent.total_steps));
  c.agent.base_lr = take_double(m, "agent.base_lr", c.agent.base_lr);
  c.agent.lr_floor_fraction =
      take_double(m, "agent.lr_floor_fraction", c.agent.lr_floor_fraction);
  c.agent.disc_steps =
      static_cast<int>(take_int(m, "agent.disc_steps", c.agent.disc_steps));
  c.agent.hidden = take_int_array(m, "agent.hidden", c.agent.hidden);
  c.agent_seed = static_cast<std::uint64_t>(
      take_int(m, "agent.seed", static_cast<long long>(c.agent_seed)));
  c.eval_every =
      static_cast<int>(take_int(m, "agent.eval_every", c.eval_every));

  c.eval_episodes =
      static_cast<int>(take_int(m, "eval.episodes", c.eval_episodes));
  c.eval_horizon =
      static_cast<int>(take_int(m, "eval.horizon", c.eval_horizon));
  c.eval_seeds = take_int_array(m, "eval.seeds", c.eval_seeds);

  c.sweep_agents = take_string_array(m, "sweep.agents", {});
  c.sweep_key = take_string(m, "sweep.key", "");
  c.sweep_values = take_double_array(m, "sweep.values", {});

  if (!m.empty()) {
    throw ConfigError("unknown config key '" + m.begin()->first + "'");
  }
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void override_seed(ExperimentConfig& config, std::uint64_t seed) {
  config.data_seed = seed;
  config.agent_seed = seed;
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  return {{"env",
           {{"type", c.env_type},
            {"size", c.env_size},
            {"slip", c.env_slip},
            {"gamma", c.env_gamma}}},
          {"data",
           {{"expert_fraction", c.expert_fraction},
            {"episodes", c.data_episodes},
            {"horizon", c.data_horizon},
            {"seed", c.data_seed}}},
          {"agent",
           {{"name", c.agent_name},
            {"seed", c.agent_seed},
            {"eval_every", c.eval_every},
            {"hyper", agents::config_to_json(agent_config(c))}}},
          {"eval",
           {{"episodes", c.eval_episodes},
            {"horizon", c.eval_horizon},
            {"seeds", c.eval_seeds}}},
          {"sweep",
           {{"agents", c.sweep_agents},
            {"key", c.sweep_key},
            {"values", c.sweep_values}}}};
}

mdp::GoalMDP build_env(const ExperimentConfig& c) {
  if (c.env_type == "grid") {
    return mdp::build_gridworld(c.env_size, c.env_slip, c.env_gamma);
  }
  return mdp::build_chain(c.env_size, c.env_gamma);
}

std::string env_label(const ExperimentConfig& c) {
  return c.env_type + std::to_string(c.env_size);
}

eval::MetricFn env_metric(const ExperimentConfig& c) {
  if (c.env_type == "grid") return eval::make_grid_metric(c.env_size);
  return eval::make_chain_metric();
}

// ---------------------------------------------------------------------------
// commands

bool cmd_verify(const std::string& suite, const std::string& out_dir,
                std::ostream& log) {
  verify::VerifyReport report;
  try {
    report = verify::run_suite(suite);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  ensure_dir(out_dir);
  std::string path = out_dir + "/verify_" + suite + ".json";
  {
    std::ofstream out = open_out(path);
    out << verify::to_json(report).dump(2) << '\n';
  }
  for (const verify::Check& c : report.checks) {
    log << (c.passed ? "[pass] " : "[FAIL] ") << c.name
        << " measured=" << format_double(c.measured)
        << " tolerance=" << format_double(c.tolerance) << '\n';
  }
  int passed = 0;
  for (const verify::Check& c : report.checks) passed += c.passed ? 1 : 0;
  log << "suite " << report.suite << ": "
      << (report.overall ? "PASS" : "FAIL") << " (" << passed << '/'
      << report.checks.size() << " checks), report " << path << '\n';
  return report.overall;
}

std::string cmd_gen_data(const ExperimentConfig& c, const std::string& out_dir,
                         std::ostream& log) {
  ensure_dir(out_dir);
  mdp::GoalMDP env = build_env(c);
  data::OfflineDataset ds = data::collect_dataset(
      env, c.expert_fraction, c.data_episodes, c.data_horizon, c.data_seed);
  std::string bin = out_dir + "/dataset.bin";
  data::save_dataset(ds, bin);
  data::export_csv(ds, out_dir + "/dataset.csv");
  log << "wrote " << bin << " (" << ds.size() << " transitions, "
      << ds.episodes.size() << " episodes)\n";
  return bin;
}

std::string cmd_train(const ExperimentConfig& c, const std::string& out_dir,
                      std::ostream& log) {
  ensure_dir(out_dir);
  std::string config_path = out_dir + "/train_config.json";
  std::string config_dump = config_to_json(c).dump(2) + "\n";
  if (fs::exists(config_path)) {
    std::string stored = read_file(config_path);
    if (stored != config_dump) {
      throw ConfigError("refusing to resume: " + config_path +
                        " records a different config; delete it or rerun "
                        "with the matching config");
    }
  }
  {
    std::ofstream out = open_out(config_path);
    out << config_dump;
  }

  mdp::GoalMDP env = build_env(c);
  data::OfflineDataset ds = dataset_for(c, env, out_dir, log);

  std::string log_path = out_dir + "/train_log.csv";
  std::ofstream train_log = open_out(log_path);
  train_log << train_log_header(c.agent_name);

  double final_return = 0.0;
  auto row = [&](int step, double lr, std::span<const double> losses,
                 const nn::DenseNet& policy_net) {
    double ret = eval::rollout_return(
        env, eval::make_net_policy(policy_net, env), c.eval_episodes,
        c.eval_horizon, c.env_gamma, train_eval_seed(c.agent_seed, step));
    train_log << step << ',' << format_double(lr);
    for (double l : losses) train_log << ',' << format_double(l);
    train_log << ',' << format_double(ret) << '\n';
    final_return = ret;
  };

  std::string prefix = out_dir + "/" + c.agent_name;
  train_agent(c, ds, c.agent_seed, row, prefix);
  log << "trained " << c.agent_name << " for " << c.agent.total_steps
      << " steps; final greedy return " << format_double(final_return) << '\n';
  log << "checkpoint " << prefix << ".json, log " << log_path << '\n';
  return prefix;
}

std::string cmd_eval(const ExperimentConfig& c, const std::string& out_dir,
                     std::ostream& log) {
  ensure_dir(out_dir);
  std::string prefix = out_dir + "/" + c.agent_name;
  if (!fs::exists(prefix + ".json")) {
    throw std::runtime_error("no checkpoint at " + prefix +
                             ".json; run train first");
  }
  mdp::GoalMDP env = build_env(c);
  nn::DenseNet policy_net;
  if (c.agent_name == "smore") {
    agents::SmoreAgent agent = agents::load_smore_agent(prefix);
    if (!same_env(agent.env, env)) {
      throw ConfigError("checkpoint " + prefix +
                        " was trained on a different environment");
    }
    policy_net = agent.policy_net;
  } else {
    agents::BaselineAgent agent = agents::load_baseline_agent(prefix);
    if (agents::variant_name(agent.variant) != c.agent_name) {
      throw ConfigError("checkpoint " + prefix + " holds agent '" +
                        agents::variant_name(agent.variant) +
                        "', not '" + c.agent_name + "'");
    }
    if (!same_env(agent.env, env)) {
      throw ConfigError("checkpoint " + prefix +
                        " was trained on a different environment");
    }
    policy_net = agent.policy_net;
  }

  std::vector<eval::MetricSample> samples;
  for (int seed : c.eval_seeds) {
    std::vector<eval::MetricSample> cell =
        eval_cell(c, env, policy_net, "base", seed);
    samples.insert(samples.end(), cell.begin(), cell.end());
  }
  std::string path = out_dir + "/eval.csv";
  eval::write_csv(samples, path);

  double mean_return = 0.0;
  for (const eval::MetricSample& s : samples) {
    if (s.metric == "return") mean_return += s.value;
  }
  mean_return /= static_cast<double>(c.eval_seeds.size());
  log << "evaluated " << c.agent_name << " over " << c.eval_seeds.size()
      << " seeds; mean return " << format_double(mean_return) << "; wrote "
      << path << '\n';
  return path;
}

std::string cmd_sweep(const ExperimentConfig& c, const std::string& out_dir,
                      int jobs, std::ostream& log) {
  ensure_dir(out_dir);
  std::vector<std::string> agents_list =
      c.sweep_agents.empty() ? std::vector<std::string>{c.agent_name}
                             : c.sweep_agents;

  struct Setting {
    std::string label;
    bool has_value = false;
    double value = 0.0;
  };
  std::vector<Setting> settings;
  if (c.sweep_key.empty()) {
    settings.push_back({"base", false, 0.0});
  } else {
    for (double v : c.sweep_values) {
      settings.push_back({c.sweep_key + "=" + format_double(v), true, v});
    }
  }

  struct Cell {
    std::string agent;
    Setting setting;
    int seed;
  };
  std::vector<Cell> cells;
  for (const std::string& agent : agents_list) {
    for (const Setting& setting : settings) {
      for (int seed : c.eval_seeds) cells.push_back({agent, setting, seed});
    }
  }

  int effective_jobs = std::max(jobs, 1);
  if (const char* cap = std::getenv("SMORE_LAB_THREADS")) {
    char* end = nullptr;
    long parsed = std::strtol(cap, &end, 10);
    if (end != cap && *end == '\0' && parsed >= 1) {
      effective_jobs = std::min(effective_jobs, static_cast<int>(parsed));
    }
  }
  effective_jobs =
      std::min(effective_jobs, static_cast<int>(cells.size()));

  std::vector<std::vector<eval::MetricSample>> results(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto worker = [&]() {
    for (;;) {
      std::size_t idx = next.fetch_add(1);
      if (idx >= cells.size()) return;
      {
        std::lock_guard<std::mutex> guard(error_mutex);
        if (first_error) return;
      }
      const Cell& cell = cells[idx];
      try {
        ExperimentConfig cc = c;
        cc.agent_name = cell.agent;
        if (cell.setting.has_value) {
          apply_sweep_value(cc, c.sweep_key, cell.setting.value);
        }
        validate(cc);
        mdp::GoalMDP env = build_env(cc);
        data::OfflineDataset ds = data::collect_dataset(
            env, cc.expert_fraction, cc.data_episodes, cc.data_horizon,
            cc.data_seed + static_cast<std::uint64_t>(cell.seed));
        TrainedPolicy trained = train_agent(
            cc, ds, cc.agent_seed + static_cast<std::uint64_t>(cell.seed), {},
            "");
        results[idx] = eval_cell(cc, env, trained.policy_net,
                                 cell.setting.label, cell.seed);
        std::lock_guard<std::mutex> guard(log_mutex);
        log << "cell " << (idx + 1) << '/' << cells.size() << ": "
            << cell.agent << " " << cell.setting.label << " seed "
            << cell.seed << " return "
            << format_double(results[idx][0].value) << '\n';
      } catch (...) {
        std::lock_guard<std::mutex> guard(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  if (effective_jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(effective_jobs));
    for (int t = 0; t < effective_jobs; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<eval::MetricSample> samples;
  for (const std::vector<eval::MetricSample>& cell : results) {
    samples.insert(samples.end(), cell.begin(), cell.end());
  }
  std::string path = out_dir + "/sweep.csv";
  eval::write_csv(samples, path);
  // Summaries derive from the published CSV, not the in-memory doubles, so
  // `report` regenerates them byte-identically.
  write_summary_outputs(read_samples_csv(path), out_dir);
  log << "wrote " << path << ", " << out_dir << "/drops.csv, " << out_dir
      << "/summary.md\n";
  return path;
}

std::string cmd_report(const ExperimentConfig&, const std::string& out_dir,
                       std::ostream& log) {
  std::string csv = out_dir + "/sweep.csv";
  if (!fs::exists(csv)) {
    throw std::runtime_error("no sweep results at " + csv +
                             "; run sweep first");
  }
  std::vector<eval::MetricSample> samples = read_samples_csv(csv);
  write_summary_outputs(samples, out_dir);
  std::string path = out_dir + "/summary.md";
  log << "rebuilt " << path << " and " << out_dir << "/drops.csv from " << csv
      << '\n';
  return path;
}

std::vector<eval::MetricSample> read_samples_csv(const std::string& path) {
  std::string text = read_file(path);
  // RFC-4180 state machine over the whole file; fields may be quoted and
  // contain commas or doubled quotes.
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
      continue;
    }
    if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      record.push_back(std::move(field));
      field.clear();
    } else if (ch == '\n') {
      record.push_back(std::move(field));
      field.clear();
      records.push_back(std::move(record));
      record.clear();
    } else if (ch != '\r') {
      field.push_back(ch);
    }
  }
  if (!field.empty() || !record.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  if (records.empty() ||
      records.front() != std::vector<std::string>{"env", "agent", "setting",
                                                  "seed", "metric", "value"}) {
    throw std::runtime_error(path + ": not a result CSV (bad header)");
  }
  std::vector<eval::MetricSample> samples;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const std::vector<std::string>& rec = records[r];
    if (rec.size() != 6) {
      throw std::runtime_error(path + ": row " + std::to_string(r + 1) +
                               " has " + std::to_string(rec.size()) +
                               " fields, expected 6");
    }
    eval::MetricSample s;
    s.env = rec[0];
    s.agent = rec[1];
    s.setting = rec[2];
    s.seed = std::stoi(rec[3]);
    s.metric = rec[4];
    s.value = std::stod(rec[5]);
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace smore::cli
