// rtt: command-line front end for task generation, verification,
// annotation, advantage computation, training and run comparison.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rtt/advantage.hpp"
#include "rtt/attribution.hpp"
#include "rtt/error.hpp"
#include "rtt/harness.hpp"
#include "rtt/io.hpp"
#include "rtt/trainer.hpp"

namespace fs = std::filesystem;

namespace {

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    rtt::io::write_file(out_path, text);
  }
}

std::map<std::string, const rtt::Instruction*> index_tasks(const std::vector<rtt::Instruction>& tasks) {
  std::map<std::string, const rtt::Instruction*> out;
  for (const auto& t : tasks) out[t.id()] = &t;
  return out;
}

const rtt::Instruction& task_for(const std::map<std::string, const rtt::Instruction*>& tasks,
                                 const std::string& id) {
  auto it = tasks.find(id);
  if (it == tasks.end()) throw rtt::Error(rtt::ErrorCode::kParse, "response refers to unknown task '" + id + "'");
  return *it->second;
}

// --config wins; RTT_CONFIG fills in when the flag is absent.
fs::path resolve_config(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("RTT_CONFIG"); env != nullptr && *env != '\0') return env;
  throw rtt::Error(rtt::ErrorCode::kConfig, "no config given (use --config or RTT_CONFIG)");
}

void reject_unknown(const rtt::io::FlatConfig& rest) {
  if (rest.empty()) return;
  std::string keys;
  for (const auto& [k, v] : rest) keys += (keys.empty() ? "" : ", ") + k;
  throw rtt::Error(rtt::ErrorCode::kConfig, "unknown config keys: " + keys);
}

// A suite comes either from `tasks = <path>` or from the suite_* keys.
std::vector<rtt::Instruction> load_suite(rtt::io::FlatConfig& config, const fs::path& config_dir) {
  rtt::TaskSuiteSpec spec;
  config = rtt::apply_suite_config(config, spec);
  if (auto it = config.find("tasks"); it != config.end()) {
    fs::path p = it->second;
    if (p.is_relative()) p = config_dir / p;
    config.erase(it);
    return rtt::io::read_instructions(p);
  }
  return rtt::suite_instructions(rtt::generate_task_suite(spec));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

double parse_number(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw rtt::Error(rtt::ErrorCode::kConfig, "not a number: '" + s + "'");
  return v;
}

int cmd_gen_tasks(const std::string& out, const std::string& witnesses, rtt::TaskSuiteSpec spec,
                  const std::string& mixture) {
  if (!mixture.empty()) spec.mixture = rtt::parse_mixture(mixture);
  const auto tasks = rtt::generate_task_suite(spec);
  emit(rtt::io::instructions_jsonl(rtt::suite_instructions(tasks)), out);
  if (!witnesses.empty()) {
    std::string lines;
    for (const auto& t : tasks) {
      lines += rtt::io::response_to_json({t.instruction.id(), "witness", rtt::Response::from_text(t.witness, true)}) + "\n";
    }
    rtt::io::write_file(witnesses, lines);
  }
  return 0;
}

int cmd_verify(const std::string& tasks_path, const std::string& responses_path, const std::string& out) {
  const auto tasks = rtt::io::read_instructions(tasks_path);
  const auto index = index_tasks(tasks);
  std::string lines;
  for (const auto& r : rtt::io::read_responses(responses_path)) {
    const auto& task = task_for(index, r.task_id);
    const auto verdicts = rtt::verify_rubric(task, r.response);
    for (std::size_t k = 0; k < verdicts.size(); ++k) {
      lines += rtt::io::verdict_to_json(r, task.rubric()[k], verdicts[k]) + "\n";
    }
  }
  emit(lines, out);
  return 0;
}

int cmd_annotate(const std::string& tasks_path, const std::string& responses_path, const std::string& out) {
  const auto tasks = rtt::io::read_instructions(tasks_path);
  const auto index = index_tasks(tasks);
  std::string lines;
  for (const auto& r : rtt::io::read_responses(responses_path)) {
    const auto& task = task_for(index, r.task_id);
    const auto verdicts = rtt::verify_rubric(task, r.response);
    for (std::size_t k = 0; k < verdicts.size(); ++k) {
      const auto labels = rtt::annotate_labels(task.rubric()[k], r.response, verdicts[k]);
      const rtt::io::LabelRecord rec{r.task_id, r.response_id, labels.constraint_id, labels.type,
                                     rtt::encode_label_runs(labels.labels)};
      lines += rtt::io::label_to_json(rec) + "\n";
    }
  }
  emit(lines, out);
  return 0;
}

int cmd_advantage(const std::string& group_path, const std::string& mode, double alpha, double beta,
                  const std::string& out) {
  const auto group = rtt::io::group_from_json(rtt::io::read_file(group_path));
  const auto norm = rtt::parse_normalization(mode);
  const auto bundle = rtt::compute_advantages(group, norm, alpha, beta);
  emit(rtt::io::advantages_to_json(group, bundle, norm) + "\n", out);
  return 0;
}

int cmd_bias_check(std::size_t trials, std::uint64_t seed, std::size_t group_size, std::size_t long_length,
                   const std::string& out) {
  emit(rtt::bias_check_json(rtt::bias_check(trials, seed, group_size, long_length)) + "\n", out);
  return 0;
}

int cmd_train(const std::string& config_flag, const std::string& out_dir) {
  const fs::path config_path = resolve_config(config_flag);
  auto config = rtt::io::read_flat_config(config_path);
  const auto suite = load_suite(config, config_path.parent_path());
  rtt::TrainConfig train;
  reject_unknown(rtt::io::apply_train_config(config, train));
  const fs::path dir = out_dir;
  fs::create_directories(dir);
  rtt::io::write_file(dir / "config.toml", rtt::io::train_config_to_flat(train));
  rtt::io::write_file(dir / "tasks.jsonl", rtt::io::instructions_jsonl(suite));
  int status = 0;
  rtt::TrainResult result;
  try {
    result = rtt::train(train, suite);
  } catch (const rtt::TrainingDiverged& e) {
    std::cerr << "rtt: " << e.what() << " (partial history written)\n";
    result = e.partial();
    status = 3;
  }
  rtt::io::write_file(dir / "metrics.csv", rtt::metrics_csv(result.history));
  rtt::io::write_file(dir / "final_policy.json", rtt::io::policy_to_json(result.policy));
  if (!result.history.empty()) {
    const auto& m = result.history.back();
    std::cout << "steps " << result.history.size() << "  rollout_acc " << m.rollout_acc << "  mean_reward "
              << m.mean_reward;
    if (m.eval_aon) std::cout << "  eval_aon " << *m.eval_aon << "  eval_csr " << *m.eval_csr;
    std::cout << "\n";
  }
  return status;
}

int cmd_experiment(const std::string& config_flag, const std::string& out_root) {
  const fs::path config_path = resolve_config(config_flag);
  auto config = rtt::io::read_flat_config(config_path);
  const auto suite = load_suite(config, config_path.parent_path());
  rtt::ExperimentSpec spec;
  std::vector<double> betas;
  std::vector<rtt::Weighting> weightings;
  rtt::io::FlatConfig trainer_keys;
  for (const auto& [key, value] : config) {
    if (key == "name") spec.name = value;
    else if (key == "method") spec.method = rtt::parse_method(value);
    else if (key == "normalization") spec.normalization = rtt::parse_normalization(value);
    else if (key == "weighting") spec.weighting = rtt::parse_weighting(value);
    else if (key == "alpha") spec.alpha = parse_number(value);
    else if (key == "beta") spec.beta = parse_number(value);
    else if (key == "steps") spec.steps = static_cast<std::size_t>(parse_number(value));
    else if (key == "eval_suite_id") spec.eval_suite_id = value;
    else if (key == "seeds") {
      spec.seeds.clear();
      for (const auto& s : split_list(value)) spec.seeds.push_back(std::stoull(s));
    } else if (key == "sweep_beta") {
      for (const auto& s : split_list(value)) betas.push_back(parse_number(s));
    } else if (key == "sweep_weighting") {
      for (const auto& s : split_list(value)) weightings.push_back(rtt::parse_weighting(s));
    } else {
      trainer_keys.emplace(key, value);
    }
  }
  reject_unknown(rtt::io::apply_train_config(trainer_keys, spec.base));
  if (spec.eval_suite_id.empty()) spec.eval_suite_id = rtt::suite_hash(suite);

  std::vector<rtt::ExperimentSpec> specs{spec};
  if (!betas.empty()) specs = rtt::expand_beta_sweep(spec, betas);
  if (!weightings.empty()) {
    std::vector<rtt::ExperimentSpec> grid;
    for (const auto& s : specs) {
      for (auto& g : rtt::expand_weighting_grid(s, weightings)) grid.push_back(std::move(g));
    }
    specs = std::move(grid);
  }
  for (const auto& s : specs) {
    const auto result = rtt::run_experiment(s, suite, out_root);
    const auto& sum = result.summary;
    std::cout << result.directory.string() << "  completed " << sum.completed << "/" << s.seeds.size()
              << "  eval_aon " << sum.final_eval_aon.mean << " +- " << sum.final_eval_aon.stddev << "  eval_csr "
              << sum.final_eval_csr.mean << " +- " << sum.final_eval_csr.stddev << "\n";
  }
  return 0;
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& csv_prefix) {
  std::vector<fs::path> paths(dirs.begin(), dirs.end());
  const auto report = rtt::compare_runs(paths);
  std::cout << report.table();
  if (!csv_prefix.empty()) {
    rtt::io::write_file(csv_prefix + "_aligned.csv", report.aligned_csv);
    rtt::io::write_file(csv_prefix + "_deltas.csv", report.deltas_csv());
  } else {
    std::cout << "\n" << report.deltas_csv();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rubric-based token-level credit assignment toolkit"};
  app.require_subcommand(1);

  std::string out;

  auto* gen = app.add_subcommand("gen-tasks", "Generate a synthetic instruction suite with verified witnesses");
  rtt::TaskSuiteSpec suite_spec;
  std::string witnesses;
  std::string mixture;
  gen->add_option("--count", suite_spec.instructions, "Number of instructions")->capture_default_str();
  gen->add_option("--min-constraints", suite_spec.min_constraints)->capture_default_str();
  gen->add_option("--max-constraints", suite_spec.max_constraints)->capture_default_str();
  gen->add_option("--mixture", mixture, "default, trainable, or kind:weight,...");
  gen->add_option("--pool-limit", suite_spec.pool_limit, "Use only the first n parameter values per kind")
      ->capture_default_str();
  gen->add_option("--seed", suite_spec.seed)->capture_default_str();
  gen->add_option("--out", out, "Instruction JSONL (stdout when omitted)");
  gen->add_option("--witnesses", witnesses, "Also write witness responses as JSONL");

  auto* verify = app.add_subcommand("verify", "Verify responses against their rubrics");
  std::string tasks_path;
  std::string responses_path;
  verify->add_option("--tasks", tasks_path)->required();
  verify->add_option("--responses", responses_path)->required();
  verify->add_option("--out", out);

  auto* annotate = app.add_subcommand("annotate", "Emit token relevance labels for responses");
  annotate->add_option("--tasks", tasks_path)->required();
  annotate->add_option("--responses", responses_path)->required();
  annotate->add_option("--out", out);

  auto* advantage = app.add_subcommand("advantage", "Compute per-token advantages for one rollout group");
  std::string group_path;
  std::string mode = "intra";
  double alpha = 1.0;
  double beta = 0.5;
  advantage->add_option("--group", group_path)->required();
  advantage->add_option("--mode", mode)->check(CLI::IsMember({"intra", "inter"}))->capture_default_str();
  advantage->add_option("--alpha", alpha)->capture_default_str();
  advantage->add_option("--beta", beta)->capture_default_str();
  advantage->add_option("--out", out);

  auto* bias = app.add_subcommand("bias-check", "Check the group mean/variance decompositions");
  std::size_t trials = 1000;
  std::uint64_t seed = 1;
  std::size_t group_size = 8;
  std::size_t long_length = 4096;
  bias->add_option("--trials", trials)->capture_default_str();
  bias->add_option("--seed", seed)->capture_default_str();
  bias->add_option("--group-size", group_size)->capture_default_str();
  bias->add_option("--long-length", long_length)->capture_default_str();
  bias->add_option("--out", out);

  auto* train = app.add_subcommand("train", "Train a policy from a flat config");
  std::string config_path;
  train->add_option("--config", config_path, "Flat key = value config (or RTT_CONFIG)");
  train->add_option("--out", out)->required();

  auto* experiment = app.add_subcommand("experiment", "Run a method across seeds (and optional sweeps)");
  experiment->add_option("--config", config_path, "Flat key = value config (or RTT_CONFIG)");
  experiment->add_option("--out", out)->required();

  auto* compare = app.add_subcommand("compare", "Compare archived experiment runs");
  std::vector<std::string> run_dirs;
  std::string csv_prefix;
  compare->add_option("runs", run_dirs)->required()->expected(2, -1);
  compare->add_option("--csv", csv_prefix, "Write <prefix>_aligned.csv and <prefix>_deltas.csv");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_tasks(out, witnesses, suite_spec, mixture);
    if (*verify) return cmd_verify(tasks_path, responses_path, out);
    if (*annotate) return cmd_annotate(tasks_path, responses_path, out);
    if (*advantage) return cmd_advantage(group_path, mode, alpha, beta, out);
    if (*bias) return cmd_bias_check(trials, seed, group_size, long_length, out);
    if (*train) return cmd_train(config_path, out);
    if (*experiment) return cmd_experiment(config_path, out);
    if (*compare) return cmd_compare(run_dirs, csv_prefix);
  } catch (const rtt::Error& e) {
    std::cerr << "rtt: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "rtt: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
