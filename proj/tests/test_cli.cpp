#include <doctest.h>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "smore/cli.hpp"
#include "smore/data.hpp"

using namespace smore;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("smore_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) n += c == '\n' ? 1 : 0;
  return n;
}

// Small end-to-end config: tiny nets and batches so train-based cases run in
// milliseconds while still exercising every code path.
cli::ExperimentConfig tiny_config(const std::string& agent) {
  cli::ExperimentConfig c;
  c.env_type = "grid";
  c.env_size = 3;
  c.env_slip = 0.0;
  c.env_gamma = 0.99;
  c.expert_fraction = 0.2;
  c.data_episodes = 30;
  c.data_horizon = 10;
  c.data_seed = 3;
  c.agent_name = agent;
  c.agent.total_steps = 60;
  c.agent.batch_size = 16;
  c.agent.hidden = {8, 8};
  c.agent.disc_steps = 40;
  c.agent_seed = 5;
  c.eval_every = 20;
  c.eval_episodes = 10;
  c.eval_horizon = 10;
  c.eval_seeds = {0, 1};
  return c;
}

}  // namespace

TEST_CASE("empty config text yields the documented defaults") {
  cli::ExperimentConfig c = cli::parse_config_text("");
  CHECK(c.env_type == "grid");
  CHECK(c.env_size == 5);
  CHECK(c.env_slip == 0.0);
  CHECK(c.env_gamma == 0.99);
  CHECK(c.expert_fraction == 0.1);
  CHECK(c.data_episodes == 500);
  CHECK(c.data_horizon == 50);
  CHECK(c.agent_name == "smore");
  CHECK(c.eval_every == 1000);
  CHECK(c.eval_seeds == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(c.sweep_key.empty());
}

TEST_CASE("section headers and dotted keys parse to the same config") {
  std::string dotted =
      "env.type = \"chain\"\n"
      "env.size = 7\n"
      "agent.name = \"gcsl\"  # trailing comment\n"
      "agent.hidden = [8, 8]\n"
      "eval.seeds = [2, 3]\n";
  std::string sectioned =
      "# leading comment\n"
      "[env]\n"
      "type = \"chain\"\n"
      "size = 7\n"
      "[agent]\n"
      "name = \"gcsl\"\n"
      "hidden = [8, 8]\n"
      "[eval]\n"
      "seeds = [2, 3]\n";
  cli::ExperimentConfig a = cli::parse_config_text(dotted);
  cli::ExperimentConfig b = cli::parse_config_text(sectioned);
  CHECK(cli::config_to_json(a).dump() == cli::config_to_json(b).dump());
  CHECK(a.env_type == "chain");
  CHECK(a.env_size == 7);
  CHECK(a.agent_name == "gcsl");
  CHECK(a.agent.hidden == std::vector<int>{8, 8});
  CHECK(a.eval_seeds == std::vector<int>{2, 3});
}

TEST_CASE("number arrays accept integer literals for float values") {
  cli::ExperimentConfig c = cli::parse_config_text(
      "sweep.key = \"agent.beta\"\n"
      "sweep.values = [1, 0.5]\n"
      "agent.awr_temperature = 2\n");
  CHECK(c.sweep_values == std::vector<double>{1.0, 0.5});
  CHECK(c.agent.awr_temperature == 2.0);
}

TEST_CASE("string escapes reach the parsed value") {
  // The escaped quote must survive parsing and land in validation, which
  // rejects the resulting env type by name.
  CHECK_THROWS_WITH_AS(cli::parse_config_text("env.type = \"gr\\\"id\"\n"),
                       "env.type must be \"grid\" or \"chain\"",
                       cli::ConfigError);
}

TEST_CASE("malformed configs fail with the offending key named") {
  CHECK_THROWS_WITH_AS(cli::parse_config_text("bogus.key = 1\n"),
                       "unknown config key 'bogus.key'", cli::ConfigError);
  CHECK_THROWS_WITH_AS(
      cli::parse_config_text("env.size = 3\nenv.size = 4\n"),
      "config line 2: duplicate key 'env.size'", cli::ConfigError);
  CHECK_THROWS_WITH_AS(cli::parse_config_text("env.size = \"big\"\n"),
                       "config key 'env.size' must be an integer",
                       cli::ConfigError);
  CHECK_THROWS_AS(cli::parse_config_text("env.type = \"chain\"\nenv.slip = 0.1\n"),
                  cli::ConfigError);
  CHECK_THROWS_AS(cli::parse_config_text("env.type = \"unterminated\n"),
                  cli::ConfigError);
  CHECK_THROWS_AS(cli::parse_config_text("env.size = 3 junk\n"),
                  cli::ConfigError);
  CHECK_THROWS_AS(cli::parse_config_text("sweep.key = \"env.gamma\"\n"
                                         "sweep.values = [0.9]\n"),
                  cli::ConfigError);
  CHECK_THROWS_AS(cli::parse_config_text("sweep.values = [0.9]\n"),
                  cli::ConfigError);
  CHECK_THROWS_AS(cli::parse_config_text("eval.seeds = []\n"),
                  cli::ConfigError);
  CHECK_THROWS_AS(cli::parse_config_text("agent.name = \"dqn\"\n"),
                  cli::ConfigError);
  CHECK_THROWS_AS(cli::parse_config_text("agent.beta = 0.0\n"),
                  cli::ConfigError);
}

TEST_CASE("seed override replaces both data and training seeds") {
  cli::ExperimentConfig c = cli::parse_config_text(
      "data.seed = 11\nagent.seed = 22\n");
  CHECK(c.data_seed == 11);
  CHECK(c.agent_seed == 22);
  cli::override_seed(c, 99);
  CHECK(c.data_seed == 99);
  CHECK(c.agent_seed == 99);
}

TEST_CASE("build_env honors type, size, slip, and gamma") {
  cli::ExperimentConfig grid = tiny_config("smore");
  grid.env_size = 4;
  grid.env_slip = 0.25;
  mdp::GoalMDP g = cli::build_env(grid);
  CHECK(g.n_states == 16);
  CHECK(g.n_actions == 5);
  CHECK(g.gamma == 0.99);
  CHECK(cli::env_label(grid) == "grid4");

  cli::ExperimentConfig chain = tiny_config("smore");
  chain.env_type = "chain";
  chain.env_size = 6;
  chain.env_slip = 0.0;
  mdp::GoalMDP h = cli::build_env(chain);
  CHECK(h.n_states == 6);
  CHECK(h.n_actions == 2);
  CHECK(cli::env_label(chain) == "chain6");

  // Metrics mirror the env geometry: grid4 corners are 6 apart, chain ends 5.
  CHECK(cli::env_metric(grid)(0, 15) == 6.0);
  CHECK(cli::env_metric(chain)(0, 5) == 5.0);
}

TEST_CASE("gen-data writes a deterministic dataset pair") {
  std::string dir = temp_dir("gen");
  cli::ExperimentConfig c = tiny_config("smore");
  std::ostringstream log;
  std::string bin = cli::cmd_gen_data(c, dir, log);
  CHECK(bin == dir + "/dataset.bin");
  CHECK(fs::exists(dir + "/dataset.csv"));

  data::OfflineDataset ds = data::load_dataset(bin);
  CHECK(ds.episodes.size() == 30);
  CHECK(ds.size() == 300);
  CHECK(ds.seed == 3);

  std::string first = file_bytes(bin);
  std::string first_csv = file_bytes(dir + "/dataset.csv");
  cli::cmd_gen_data(c, dir, log);
  CHECK(file_bytes(bin) == first);
  CHECK(file_bytes(dir + "/dataset.csv") == first_csv);
}

TEST_CASE("train writes one log row per eval interval plus the final step") {
  std::string dir = temp_dir("train_rows");
  cli::ExperimentConfig c = tiny_config("smore");
  c.agent.total_steps = 50;  // not a multiple of eval_every = 20
  std::ostringstream log;
  cli::cmd_train(c, dir, log);

  std::string text = file_bytes(dir + "/train_log.csv");
  // header + rows at steps 20, 40, 50
  CHECK(count_lines(text) == 4);
  CHECK(text.rfind("step,lr,score_loss,expectile_loss,policy_loss,eval_return",
                   0) == 0);
  CHECK(text.find("\n20,") != std::string::npos);
  CHECK(text.find("\n40,") != std::string::npos);
  CHECK(text.find("\n50,") != std::string::npos);
  CHECK(fs::exists(dir + "/smore.json"));
  CHECK(fs::exists(dir + "/smore.policy.net"));
  CHECK(fs::exists(dir + "/train_config.json"));
}

TEST_CASE("train logs per-agent loss columns") {
  cli::ExperimentConfig c = tiny_config("gcsl");
  std::string dir = temp_dir("train_gcsl");
  std::ostringstream log;
  cli::cmd_train(c, dir, log);
  std::string text = file_bytes(dir + "/train_log.csv");
  CHECK(text.rfind("step,lr,cloning_loss,eval_return", 0) == 0);
  CHECK(count_lines(text) == 4);  // header + steps 20, 40, 60

  c = tiny_config("iql_sparse");
  dir = temp_dir("train_iql");
  cli::cmd_train(c, dir, log);
  CHECK(file_bytes(dir + "/train_log.csv")
            .rfind("step,lr,value_loss,q_loss,policy_loss,eval_return", 0) ==
        0);

  c = tiny_config("gofar_lite");
  dir = temp_dir("train_gofar");
  cli::cmd_train(c, dir, log);
  CHECK(file_bytes(dir + "/train_log.csv")
            .rfind("step,lr,value_loss,policy_loss,eval_return", 0) == 0);
}

TEST_CASE("train reruns are byte-identical and reuse a matching dataset") {
  cli::ExperimentConfig c = tiny_config("gcsl");
  std::string dir_a = temp_dir("train_a");
  std::string dir_b = temp_dir("train_b");
  std::ostringstream log_a, log_b;
  cli::cmd_gen_data(c, dir_a, log_a);  // trains from the saved dataset
  cli::cmd_train(c, dir_a, log_a);
  cli::cmd_train(c, dir_b, log_b);  // trains from an in-memory collection
  CHECK(file_bytes(dir_a + "/train_log.csv") ==
        file_bytes(dir_b + "/train_log.csv"));
  CHECK(file_bytes(dir_a + "/gcsl.policy.net") ==
        file_bytes(dir_b + "/gcsl.policy.net"));
  CHECK(log_a.str().find("loaded dataset") != std::string::npos);
  CHECK(log_b.str().find("collected dataset in memory") != std::string::npos);

  // Same config again in the same directory: allowed, still identical.
  std::string log_bytes = file_bytes(dir_a + "/train_log.csv");
  cli::cmd_train(c, dir_a, log_a);
  CHECK(file_bytes(dir_a + "/train_log.csv") == log_bytes);
}

TEST_CASE("train refuses a directory recorded under a different config") {
  cli::ExperimentConfig c = tiny_config("gcsl");
  std::string dir = temp_dir("train_refuse");
  std::ostringstream log;
  cli::cmd_train(c, dir, log);
  c.agent.total_steps = 80;
  CHECK_THROWS_AS(cli::cmd_train(c, dir, log), cli::ConfigError);
}

TEST_CASE("train refuses a dataset generated with different settings") {
  cli::ExperimentConfig c = tiny_config("gcsl");
  std::string dir = temp_dir("train_ds_refuse");
  std::ostringstream log;
  cli::cmd_gen_data(c, dir, log);
  c.data_seed = 4;  // dataset on disk was collected with seed 3
  CHECK_THROWS_AS(cli::cmd_train(c, dir, log), cli::ConfigError);
}

TEST_CASE("eval writes per-seed metric rows for a trained checkpoint") {
  cli::ExperimentConfig c = tiny_config("gcsl");
  std::string dir = temp_dir("eval");
  std::ostringstream log;
  cli::cmd_train(c, dir, log);
  std::string path = cli::cmd_eval(c, dir, log);
  CHECK(path == dir + "/eval.csv");

  std::vector<eval::MetricSample> samples = cli::read_samples_csv(path);
  REQUIRE(samples.size() == 6);  // 2 seeds x {return, success_rate, final_distance}
  CHECK(samples[0].env == "grid3");
  CHECK(samples[0].agent == "gcsl");
  CHECK(samples[0].setting == "base");
  CHECK(samples[0].metric == "return");
  int distance_rows = 0;
  for (const eval::MetricSample& s : samples) {
    distance_rows += s.metric == "final_distance" ? 1 : 0;
  }
  CHECK(distance_rows == 2);

  // Same seed, same policy: eval is a pure function of the checkpoint.
  std::string bytes = file_bytes(path);
  cli::cmd_eval(c, dir, log);
  CHECK(file_bytes(path) == bytes);
}

TEST_CASE("eval without a checkpoint or with the wrong env fails loudly") {
  cli::ExperimentConfig c = tiny_config("gcsl");
  std::string dir = temp_dir("eval_missing");
  std::ostringstream log;
  CHECK_THROWS_AS(cli::cmd_eval(c, dir, log), std::runtime_error);

  cli::cmd_train(c, dir, log);
  cli::ExperimentConfig other = c;
  other.env_size = 4;
  CHECK_THROWS_AS(cli::cmd_eval(other, dir, log), cli::ConfigError);
}

TEST_CASE("sweep runs the full cartesian grid and reports drops vs base") {
  cli::ExperimentConfig c = tiny_config("gcsl");
  c.agent.total_steps = 40;
  c.sweep_agents = {"gcsl"};
  c.sweep_key = "data.expert_fraction";
  c.sweep_values = {0.2, 0.05};
  std::string dir = temp_dir("sweep");
  std::ostringstream log;
  std::string path = cli::cmd_sweep(c, dir, 1, log);

  std::vector<eval::MetricSample> samples = cli::read_samples_csv(path);
  // 1 agent x 2 settings x 2 seeds x 3 metrics
  CHECK(samples.size() == 12);
  CHECK(samples[0].setting == "data.expert_fraction=0.2");

  std::string drops = file_bytes(dir + "/drops.csv");
  CHECK(drops.rfind("env,agent,metric,setting,mean,drop_vs_base", 0) == 0);
  CHECK(count_lines(drops) == 3);  // header + one row per setting
  // The first declared setting is the baseline, so its drop is exactly 0.
  CHECK(drops.find("data.expert_fraction=0.2") < drops.find(
            "data.expert_fraction=0.05"));
  CHECK(drops.find(",data.expert_fraction=0.2,") != std::string::npos);
  std::string base_row =
      drops.substr(drops.find("gcsl,return,data.expert_fraction=0.2"));
  base_row = base_row.substr(0, base_row.find('\n'));
  CHECK(base_row.substr(base_row.size() - 2) == ",0");

  std::string summary = file_bytes(dir + "/summary.md");
  CHECK(summary.rfind("# Results", 0) == 0);
  CHECK(summary.find("## Return drop vs data.expert_fraction=0.2") !=
        std::string::npos);
}

TEST_CASE("sweep output is byte-identical across job counts") {
  cli::ExperimentConfig c = tiny_config("gcsl");
  c.agent.total_steps = 40;
  c.sweep_agents = {"gcsl", "smore"};
  std::string dir_1 = temp_dir("sweep_j1");
  std::string dir_3 = temp_dir("sweep_j3");
  std::ostringstream log;
  cli::cmd_sweep(c, dir_1, 1, log);
  cli::cmd_sweep(c, dir_3, 3, log);
  CHECK(file_bytes(dir_1 + "/sweep.csv") == file_bytes(dir_3 + "/sweep.csv"));
  CHECK(file_bytes(dir_1 + "/drops.csv") == file_bytes(dir_3 + "/drops.csv"));
  CHECK(file_bytes(dir_1 + "/summary.md") ==
        file_bytes(dir_3 + "/summary.md"));
}

TEST_CASE("report regenerates sweep summaries byte-identically") {
  cli::ExperimentConfig c = tiny_config("gcsl");
  c.agent.total_steps = 40;
  std::string dir = temp_dir("report");
  std::ostringstream log;
  cli::cmd_sweep(c, dir, 2, log);
  std::string drops = file_bytes(dir + "/drops.csv");
  std::string summary = file_bytes(dir + "/summary.md");
  fs::remove(dir + "/drops.csv");
  fs::remove(dir + "/summary.md");
  cli::cmd_report(c, dir, log);
  CHECK(file_bytes(dir + "/drops.csv") == drops);
  CHECK(file_bytes(dir + "/summary.md") == summary);

  std::string empty = temp_dir("report_empty");
  CHECK_THROWS_AS(cli::cmd_report(c, empty, log), std::runtime_error);
}

TEST_CASE("result CSV round trips quoted fields") {
  std::vector<eval::MetricSample> samples = {
      {"grid5", "smore", "slip=0.2,beta=0.5", 3, "return", 1.25},
      {"grid5", "a\"b", "base", 0, "return", -2.5}};
  std::string dir = temp_dir("csv_round");
  std::string path = dir + "/samples.csv";
  eval::write_csv(samples, path);
  std::vector<eval::MetricSample> back = cli::read_samples_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].setting == "slip=0.2,beta=0.5");
  CHECK(back[0].seed == 3);
  CHECK(back[0].value == 1.25);
  CHECK(back[1].agent == "a\"b");
  CHECK(back[1].value == -2.5);

  std::string bad = dir + "/bad.csv";
  std::ofstream(bad) << "not,a,result,file\n";
  CHECK_THROWS_AS(cli::read_samples_csv(bad), std::runtime_error);
}

TEST_CASE("verify command writes a machine-readable report") {
  std::string dir = temp_dir("verify_cmd");
  std::ostringstream log;
  bool ok = cli::cmd_verify("conjugates", dir, log);
  CHECK(ok);
  std::string text = file_bytes(dir + "/verify_conjugates.json");
  CHECK(text.find("\"suite\": \"conjugates\"") != std::string::npos);
  CHECK(text.find("\"overall\": true") != std::string::npos);
  CHECK(log.str().find("[pass] conjugates/generator_root") !=
        std::string::npos);
  CHECK(log.str().find("suite conjugates: PASS (3/3 checks)") !=
        std::string::npos);
  CHECK_THROWS_AS(cli::cmd_verify("bogus", dir, log), cli::ConfigError);
}

TEST_CASE("config json identity distinguishes every field") {
  cli::ExperimentConfig a = tiny_config("smore");
  cli::ExperimentConfig b = a;
  CHECK(cli::config_to_json(a).dump() == cli::config_to_json(b).dump());
  b.agent.beta = 0.7;
  CHECK(cli::config_to_json(a).dump() != cli::config_to_json(b).dump());
  b = a;
  b.data_seed = 77;
  CHECK(cli::config_to_json(a).dump() != cli::config_to_json(b).dump());
  b = a;
  b.eval_seeds = {0};
  CHECK(cli::config_to_json(a).dump() != cli::config_to_json(b).dump());
}
