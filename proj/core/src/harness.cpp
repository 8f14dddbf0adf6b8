#include "rtt/harness.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "json.hpp"
#include "rtt/composer.hpp"
#include "rtt/error.hpp"
#include "rtt/io.hpp"
#include "rtt/verifiers.hpp"

#ifndef RTT_VERSION
#define RTT_VERSION "unknown"
#endif

namespace rtt {

using nlohmann::json;

namespace {

constexpr std::string_view kPrefixes[] = {"GO:", "SUN:", "RED:"};
constexpr std::string_view kSuffixes[] = {"!", "?", "."};
constexpr std::string_view kRequiredWords[] = {"sun", "cat", "tea", "sky", "dog", "map"};
constexpr std::string_view kForbiddenWords[] = {"the", "a", "and", "is", "ride"};
constexpr std::int64_t kMaxLengths[] = {16, 20, 24};
constexpr std::int64_t kMinLengths[] = {6, 8, 10};
constexpr std::pair<std::int64_t, std::int64_t> kWordRanges[] = {{2, 4}, {3, 5}, {1, 3}};

struct Statement {
  std::string_view text;
  std::string_view contradiction;
};
constexpr Statement kStatements[] = {{"the sky is blue", "the sky is red"}, {"water is wet", "water is dry"}};

template <typename T, std::size_t N>
const T& pick(const T (&pool)[N], std::size_t limit, Rng& rng) {
  return pool[rng.index(limit == 0 ? N : std::min(limit, N))];
}

std::set<std::string> words_of(std::string_view text) {
  std::set<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch)) != 0) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      out.insert(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.insert(std::move(cur));
  return out;
}

std::vector<ConstraintKind> draw_kinds(const std::vector<KindWeight>& mixture, std::size_t k, Rng& rng) {
  std::vector<KindWeight> remaining;
  for (const auto& kw : mixture) {
    if (kw.weight > 0.0) remaining.push_back(kw);
  }
  std::vector<ConstraintKind> out;
  while (out.size() < k && !remaining.empty()) {
    double total = 0.0;
    for (const auto& kw : remaining) total += kw.weight;
    double u = rng.uniform() * total;
    std::size_t chosen = remaining.size() - 1;
    for (std::size_t i = 0; i < remaining.size(); ++i) {
      if (u < remaining[i].weight) {
        chosen = i;
        break;
      }
      u -= remaining[i].weight;
    }
    out.push_back(remaining[chosen].kind);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(chosen));
  }
  // Kinds are drawn in mixture order for stable rubric layout.
  std::vector<ConstraintKind> ordered;
  for (auto kind : kAllConstraintKinds) {
    if (std::find(out.begin(), out.end(), kind) != out.end()) ordered.push_back(kind);
  }
  return ordered;
}

std::string describe(const Constraint& c) {
  const auto& p = c.params;
  switch (c.kind) {
    case ConstraintKind::kAllCaps: return "Use only capital letters.";
    case ConstraintKind::kStartsWith: return "Start with \"" + p.text + "\".";
    case ConstraintKind::kEndsWith: return "End with \"" + p.text + "\".";
    case ConstraintKind::kForbiddenWord: return "Do not use the word \"" + p.text + "\".";
    case ConstraintKind::kRequiredWord: return "Include the word \"" + p.text + "\".";
    case ConstraintKind::kMaxLength: return "Use at most " + std::to_string(p.max) + " characters.";
    case ConstraintKind::kMinLength: return "Use at least " + std::to_string(p.min) + " characters.";
    case ConstraintKind::kWordCountRange:
      return "Use between " + std::to_string(p.min) + " and " + std::to_string(p.max) + " words.";
    case ConstraintKind::kStatementPresent: return "State that " + p.text + ".";
  }
  return {};
}

std::optional<Instruction> draw_instruction(const TaskSuiteSpec& spec, std::size_t index, Rng& rng) {
  const auto k = static_cast<std::size_t>(
      rng.range(static_cast<std::int64_t>(spec.min_constraints), static_cast<std::int64_t>(spec.max_constraints)));
  const auto kinds = draw_kinds(spec.mixture, k, rng);
  if (kinds.size() != k) return std::nullopt;

  std::vector<Constraint> rubric;
  std::set<std::string> used_words;
  std::string forbidden;
  for (auto kind : kinds) {
    ConstraintParams p;
    switch (kind) {
      case ConstraintKind::kAllCaps: break;
      case ConstraintKind::kStartsWith: p.text = pick(kPrefixes, spec.pool_limit, rng); break;
      case ConstraintKind::kEndsWith: p.text = pick(kSuffixes, spec.pool_limit, rng); break;
      case ConstraintKind::kForbiddenWord: p.text = pick(kForbiddenWords, spec.pool_limit, rng); break;
      case ConstraintKind::kRequiredWord: p.text = pick(kRequiredWords, spec.pool_limit, rng); break;
      case ConstraintKind::kMaxLength: p.max = pick(kMaxLengths, spec.pool_limit, rng); break;
      case ConstraintKind::kMinLength: p.min = pick(kMinLengths, spec.pool_limit, rng); break;
      case ConstraintKind::kWordCountRange: {
        const auto& [lo, hi] = pick(kWordRanges, spec.pool_limit, rng);
        p.min = lo;
        p.max = hi;
        break;
      }
      case ConstraintKind::kStatementPresent: {
        const auto& s = pick(kStatements, spec.pool_limit, rng);
        p.text = s.text;
        p.contradictions = {std::string(s.contradiction)};
        break;
      }
    }
    if (kind == ConstraintKind::kForbiddenWord) {
      forbidden = p.text;
    } else {
      for (const auto& w : words_of(p.text)) used_words.insert(w);
      for (const auto& contra : p.contradictions) {
        for (const auto& w : words_of(contra)) used_words.insert(w);
      }
    }
    rubric.push_back(make_constraint("c" + std::to_string(rubric.size() + 1), kind, std::move(p)));
  }
  if (!forbidden.empty() && used_words.contains(forbidden)) return std::nullopt;

  std::string task_text = "Write a short reply.";
  for (const auto& c : rubric) task_text += " " + describe(c);
  char id[32];
  std::snprintf(id, sizeof(id), "task-%04zu", index + 1);
  return Instruction(id, std::move(task_text), std::move(rubric));
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::vector<KindWeight> TaskSuiteSpec::default_mixture() {
  return {{ConstraintKind::kAllCaps, 1.0},        {ConstraintKind::kStartsWith, 1.0},
          {ConstraintKind::kEndsWith, 1.0},       {ConstraintKind::kForbiddenWord, 1.0},
          {ConstraintKind::kRequiredWord, 1.0},   {ConstraintKind::kMaxLength, 1.0},
          {ConstraintKind::kMinLength, 0.5},      {ConstraintKind::kWordCountRange, 0.5},
          {ConstraintKind::kStatementPresent, 0.5}};
}

std::vector<KindWeight> TaskSuiteSpec::trainable_mixture() {
  return {{ConstraintKind::kAllCaps, 1.0},      {ConstraintKind::kEndsWith, 1.0},  {ConstraintKind::kForbiddenWord, 1.0},
          {ConstraintKind::kRequiredWord, 1.0}, {ConstraintKind::kMaxLength, 1.0}, {ConstraintKind::kMinLength, 1.0},
          {ConstraintKind::kWordCountRange, 1.0}};
}

std::vector<KindWeight> parse_mixture(std::string_view text) {
  if (text == "default") return TaskSuiteSpec::default_mixture();
  if (text == "trainable") return TaskSuiteSpec::trainable_mixture();
  std::vector<KindWeight> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = std::min(text.find(',', pos), text.size());
    const auto item = text.substr(pos, comma - pos);
    const auto colon = item.find(':');
    if (colon == std::string_view::npos) {
      throw Error(ErrorCode::kConfig, "mixture entry '" + std::string(item) + "' must be kind:weight");
    }
    double w = 0.0;
    const auto ws = item.substr(colon + 1);
    const auto [end, ec] = std::from_chars(ws.data(), ws.data() + ws.size(), w);
    if (ec != std::errc() || end != ws.data() + ws.size()) {
      throw Error(ErrorCode::kConfig, "mixture weight '" + std::string(ws) + "' is not a number");
    }
    out.push_back({parse_kind(item.substr(0, colon)), w});
    pos = comma + 1;
  }
  return out;
}

std::string mixture_to_string(const std::vector<KindWeight>& mixture) {
  std::string out;
  for (const auto& kw : mixture) {
    if (!out.empty()) out += ",";
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), kw.weight);
    out += std::string(kind_name(kw.kind)) + ":" + std::string(buf, ec == std::errc() ? end : buf);
  }
  return out;
}

io::FlatConfig apply_suite_config(const io::FlatConfig& config, TaskSuiteSpec& out) {
  io::FlatConfig rest;
  auto unsigned_of = [](const std::string& key, const std::string& v) {
    std::uint64_t n = 0;
    const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
    if (ec != std::errc() || end != v.data() + v.size()) {
      throw Error(ErrorCode::kConfig, "'" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    return n;
  };
  for (const auto& [key, value] : config) {
    if (key == "suite_instructions") out.instructions = unsigned_of(key, value);
    else if (key == "suite_min_constraints") out.min_constraints = unsigned_of(key, value);
    else if (key == "suite_max_constraints") out.max_constraints = unsigned_of(key, value);
    else if (key == "suite_pool_limit") out.pool_limit = unsigned_of(key, value);
    else if (key == "suite_seed") out.seed = unsigned_of(key, value);
    else if (key == "suite_mixture") out.mixture = parse_mixture(value);
    else rest.emplace(key, value);
  }
  return rest;
}

void TaskSuiteSpec::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::kConfig, why); };
  if (instructions < 1) fail("suite needs at least one instruction");
  if (min_constraints < 1 || max_constraints > 5 || min_constraints > max_constraints) {
    fail("constraints per instruction must satisfy 1 <= min <= max <= 5");
  }
  std::size_t positive = 0;
  std::set<ConstraintKind> seen;
  for (const auto& kw : mixture) {
    if (!std::isfinite(kw.weight) || kw.weight < 0.0) fail("mixture weights must be finite and non-negative");
    if (!seen.insert(kw.kind).second) fail("mixture lists a kind twice");
    positive += kw.weight > 0.0 ? 1 : 0;
  }
  if (positive < max_constraints) fail("mixture has fewer positive-weight kinds than max_constraints");
  if (attempts < 1) fail("attempts must be positive");
  if (max_witness_chars < 1) fail("max_witness_chars must be positive");
}

std::vector<GeneratedTask> generate_task_suite(const TaskSuiteSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "task-suite"));
  std::vector<GeneratedTask> out;
  for (std::size_t i = 0; i < spec.instructions; ++i) {
    bool accepted = false;
    for (int attempt = 0; attempt < spec.attempts && !accepted; ++attempt) {
      auto instr = draw_instruction(spec, i, rng);
      if (!instr) continue;
      auto witness = compose_with_retries(instr->rubric(), rng);
      if (!witness || witness->size() > spec.max_witness_chars) continue;
      if (score_aon(*instr, Response::from_text(*witness, true)) != 1) continue;
      out.push_back({std::move(*instr), std::move(*witness)});
      accepted = true;
    }
    if (!accepted) {
      throw Error(ErrorCode::kUnsatisfiableSpec,
                  "no satisfiable rubric for instruction " + std::to_string(i + 1) + " after " +
                      std::to_string(spec.attempts) + " attempts");
    }
  }
  return out;
}

std::vector<Instruction> suite_instructions(const std::vector<GeneratedTask>& tasks) {
  std::vector<Instruction> out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) out.push_back(t.instruction);
  return out;
}

std::string suite_hash(const std::vector<Instruction>& suite) { return hex64(fnv1a64(io::instructions_jsonl(suite))); }

std::string_view method_name(Method method) noexcept {
  switch (method) {
    case Method::kRlAon: return "rl-aon";
    case Method::kRlCsr: return "rl-csr";
    case Method::kRttAon: return "rtt-aon";
    case Method::kRttCsr: return "rtt-csr";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  if (name == "rl-aon") return Method::kRlAon;
  if (name == "rl-csr") return Method::kRlCsr;
  if (name == "rtt-aon") return Method::kRttAon;
  if (name == "rtt-csr") return Method::kRttCsr;
  throw Error(ErrorCode::kConfig, "method must be rl-aon, rl-csr, rtt-aon or rtt-csr; got '" + std::string(name) + "'");
}

namespace {

bool is_rtt(Method m) { return m == Method::kRttAon || m == Method::kRttCsr; }

RewardMode reward_of(Method m) {
  return m == Method::kRlAon || m == Method::kRttAon ? RewardMode::kAon : RewardMode::kCsr;
}

}  // namespace

void ExperimentSpec::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::kConfig, why); };
  if (name.empty()) fail("experiment name must not be empty");
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c)) == 0 && c != '-' && c != '_' && c != '.') {
      fail("experiment name may only contain letters, digits, '-', '_' and '.'");
    }
  }
  if (seeds.empty()) fail("experiment needs at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) fail("seeds must be distinct");
  if (!is_rtt(method) && beta != 0.0) fail(std::string(method_name(method)) + " requires beta = 0");
  if (is_rtt(method) && !(beta > 0.0)) fail(std::string(method_name(method)) + " requires beta > 0");
  train_config(seeds.front()).validate();
}

TrainConfig ExperimentSpec::train_config(std::uint64_t seed) const {
  TrainConfig c = base;
  c.reward_mode = reward_of(method);
  c.token_level = is_rtt(method);
  c.weighting = weighting;
  c.normalization = normalization;
  c.alpha = alpha;
  c.beta = is_rtt(method) ? beta : 0.0;
  c.steps = steps;
  c.seed = seed;
  return c;
}

std::vector<ExperimentSpec> expand_beta_sweep(const ExperimentSpec& base, const std::vector<double>& betas) {
  std::vector<ExperimentSpec> out;
  const RewardMode reward = reward_of(base.method);
  for (double beta : betas) {
    ExperimentSpec s = base;
    s.beta = beta;
    if (beta == 0.0) {
      s.method = reward == RewardMode::kAon ? Method::kRlAon : Method::kRlCsr;
    } else {
      s.method = reward == RewardMode::kAon ? Method::kRttAon : Method::kRttCsr;
    }
    char suffix[32];
    std::snprintf(suffix, sizeof(suffix), "-beta%g", beta);
    s.name = base.name + suffix;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ExperimentSpec> expand_weighting_grid(const ExperimentSpec& base, const std::vector<Weighting>& weightings) {
  std::vector<ExperimentSpec> out;
  for (auto w : weightings) {
    ExperimentSpec s = base;
    s.weighting = w;
    s.name = base.name + "-" + std::string(weighting_name(w));
    out.push_back(std::move(s));
  }
  return out;
}

std::string experiment_manifest(const ExperimentSpec& spec, const std::vector<Instruction>& suite) {
  json config = json::object();
  for (const auto& [k, v] : io::parse_flat_config(io::train_config_to_flat(spec.train_config(0)))) {
    if (k != "seed") config[k] = v;
  }
  return json{{"name", spec.name},
              {"method", method_name(spec.method)},
              {"normalization", normalization_name(spec.normalization)},
              {"weighting", weighting_name(spec.weighting)},
              {"alpha", spec.alpha},
              {"beta", spec.beta},
              {"seeds", spec.seeds},
              {"steps", spec.steps},
              {"eval_suite_id", spec.eval_suite_id},
              {"suite_hash", suite_hash(suite)},
              {"suite_size", suite.size()},
              {"code_version", RTT_VERSION},
              {"config", config}}
      .dump(2);
}

namespace {

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - out.mean) * (x - out.mean);
  out.stddev = std::sqrt(ss / static_cast<double>(xs.size()));
  return out;
}

std::optional<StepMetrics> last_evaluated(const std::vector<StepMetrics>& history) {
  for (auto it = history.rbegin(); it != history.rend(); ++it) {
    if (it->eval_aon) return *it;
  }
  return std::nullopt;
}

json mean_std_json(const MeanStd& m) { return json{{"mean", m.mean}, {"std", m.stddev}}; }

std::string fmt(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ec == std::errc() ? end : buf);
}

}  // namespace

ExperimentSummary summarize(const std::vector<SeedOutcome>& seeds) {
  ExperimentSummary s;
  std::vector<double> aon, csr, aon_g, csr_g;
  for (const auto& o : seeds) {
    if (!o.completed) {
      s.incomplete_seeds.push_back(o.seed);
      continue;
    }
    ++s.completed;
    if (auto m = last_evaluated(o.history)) {
      aon.push_back(*m->eval_aon);
      csr.push_back(*m->eval_csr);
      aon_g.push_back(*m->eval_aon_greedy);
      csr_g.push_back(*m->eval_csr_greedy);
    }
  }
  s.final_eval_aon = mean_std(aon);
  s.final_eval_csr = mean_std(csr);
  s.final_eval_aon_greedy = mean_std(aon_g);
  s.final_eval_csr_greedy = mean_std(csr_g);
  return s;
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const std::vector<Instruction>& suite,
                                const std::filesystem::path& root) {
  spec.validate();
  if (suite.empty()) throw Error(ErrorCode::kPrecondition, "experiment needs a non-empty suite");
  const std::string manifest = experiment_manifest(spec, suite);
  ExperimentResult result;
  result.directory = root / (spec.name + "-" + hex64(fnv1a64(manifest)).substr(0, 12));
  std::filesystem::create_directories(result.directory);
  io::write_file(result.directory / "manifest.json", manifest);
  io::write_file(result.directory / "suite.jsonl", io::instructions_jsonl(suite));

  json seed_status = json::array();
  for (std::uint64_t seed : spec.seeds) {
    SeedOutcome outcome;
    outcome.seed = seed;
    std::optional<PolicyParams> policy;
    try {
      TrainResult r = train(spec.train_config(seed), suite);
      outcome.completed = true;
      outcome.history = std::move(r.history);
      policy = std::move(r.policy);
    } catch (const TrainingDiverged& e) {
      outcome.failure = e.what();
      outcome.history = e.partial().history;
      policy = e.partial().policy;
    }
    const auto dir = result.directory / ("seed_" + std::to_string(seed));
    io::write_file(dir / "metrics.csv", metrics_csv(outcome.history));
    if (policy) io::write_file(dir / "final_policy.json", io::policy_to_json(*policy));
    seed_status.push_back({{"seed", seed}, {"completed", outcome.completed}, {"failure", outcome.failure}});
    result.seeds.push_back(std::move(outcome));
  }

  result.summary = summarize(result.seeds);
  const auto& s = result.summary;
  io::write_file(result.directory / "summary.json",
                 json{{"name", spec.name},
                      {"completed", s.completed},
                      {"incomplete_seeds", s.incomplete_seeds},
                      {"seeds", seed_status},
                      {"final_eval_aon", mean_std_json(s.final_eval_aon)},
                      {"final_eval_csr", mean_std_json(s.final_eval_csr)},
                      {"final_eval_aon_greedy", mean_std_json(s.final_eval_aon_greedy)},
                      {"final_eval_csr_greedy", mean_std_json(s.final_eval_csr_greedy)}}
                         .dump(2) +
                     "\n");
  std::string csv = "seed,completed,final_eval_aon,final_eval_csr,final_eval_aon_greedy,final_eval_csr_greedy\n";
  for (const auto& o : result.seeds) {
    csv += std::to_string(o.seed) + "," + (o.completed ? "1" : "0");
    const auto m = last_evaluated(o.history);
    for (auto v : {&StepMetrics::eval_aon, &StepMetrics::eval_csr, &StepMetrics::eval_aon_greedy,
                   &StepMetrics::eval_csr_greedy}) {
      csv += "," + (m ? fmt(*((*m).*v)) : std::string());
    }
    csv += "\n";
  }
  io::write_file(result.directory / "summary.csv", csv);
  return result;
}

RunRecord load_run(const std::filesystem::path& directory) {
  RunRecord run;
  run.directory = directory;
  json manifest;
  json summary;
  try {
    manifest = json::parse(io::read_file(directory / "manifest.json"));
    summary = json::parse(io::read_file(directory / "summary.json"));
    run.name = directory.filename().string();
    if (run.name.empty()) run.name = directory.parent_path().filename().string();
    run.suite_hash = manifest.at("suite_hash").get<std::string>();
    run.steps = manifest.at("steps").get<std::size_t>();
    for (const auto& st : summary.at("seeds")) {
      SeedOutcome o;
      o.seed = st.at("seed").get<std::uint64_t>();
      o.completed = st.at("completed").get<bool>();
      o.failure = st.at("failure").get<std::string>();
      o.history = io::parse_metrics_csv(io::read_file(directory / ("seed_" + std::to_string(o.seed)) / "metrics.csv"));
      run.seeds.push_back(std::move(o));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, "run '" + directory.string() + "': " + e.what());
  }
  return run;
}

namespace {

using MetricField = double StepMetrics::*;
using OptionalField = std::optional<double> StepMetrics::*;

constexpr std::pair<std::string_view, MetricField> kStepFields[] = {
    {"rollout_acc", &StepMetrics::rollout_acc}, {"entropy", &StepMetrics::entropy},
    {"kl", &StepMetrics::kl},                   {"clip_frac", &StepMetrics::clip_frac},
    {"mean_reward", &StepMetrics::mean_reward},
};
constexpr std::pair<std::string_view, OptionalField> kEvalFields[] = {
    {"eval_aon", &StepMetrics::eval_aon},
    {"eval_csr", &StepMetrics::eval_csr},
    {"eval_aon_greedy", &StepMetrics::eval_aon_greedy},
    {"eval_csr_greedy", &StepMetrics::eval_csr_greedy},
};

std::vector<std::uint64_t> seed_list(const RunRecord& r) {
  std::vector<std::uint64_t> out;
  for (const auto& s : r.seeds) out.push_back(s.seed);
  return out;
}

const SeedOutcome* find_seed(const RunRecord& r, std::uint64_t seed) {
  for (const auto& s : r.seeds) {
    if (s.seed == seed) return &s;
  }
  return nullptr;
}

}  // namespace

ComparisonReport compare_runs(const std::vector<RunRecord>& runs) {
  if (runs.size() < 2) throw Error(ErrorCode::kIncomparableRuns, "comparison needs at least two runs");
  const RunRecord& base = runs.front();
  for (const auto& r : runs) {
    if (r.suite_hash != base.suite_hash) {
      throw Error(ErrorCode::kIncomparableRuns, "runs '" + base.name + "' and '" + r.name + "' use different suites");
    }
    if (seed_list(r) != seed_list(base)) {
      throw Error(ErrorCode::kIncomparableRuns, "runs '" + base.name + "' and '" + r.name + "' use different seeds");
    }
    if (r.steps != base.steps) {
      throw Error(ErrorCode::kIncomparableRuns, "runs '" + base.name + "' and '" + r.name + "' differ in steps");
    }
  }

  ComparisonReport report;
  report.seeds = seed_list(base);
  for (const auto& r : runs) report.runs.push_back(r.name);

  std::string csv = "seed,step,run";
  for (const auto& [name, f] : kStepFields) csv += "," + std::string(name);
  for (const auto& [name, f] : kEvalFields) csv += "," + std::string(name);
  csv += "\n";
  for (std::uint64_t seed : report.seeds) {
    for (std::size_t step = 0; step < base.steps; ++step) {
      for (const auto& r : runs) {
        const SeedOutcome* o = find_seed(r, seed);
        if (step >= o->history.size()) continue;
        const StepMetrics& m = o->history[step];
        csv += std::to_string(seed) + "," + std::to_string(step) + "," + r.name;
        for (const auto& [name, f] : kStepFields) csv += "," + fmt(m.*f);
        for (const auto& [name, f] : kEvalFields) csv += "," + ((m.*f) ? fmt(*(m.*f)) : std::string());
        csv += "\n";
      }
    }
  }
  report.aligned_csv = std::move(csv);

  for (std::size_t k = 1; k < runs.size(); ++k) {
    RunComparison cmp;
    cmp.baseline = base.name;
    cmp.candidate = runs[k].name;
    auto add = [&](std::string_view metric, auto value_of) {
      FinalDelta d;
      d.metric = std::string(metric);
      std::size_t n = 0;
      for (std::uint64_t seed : report.seeds) {
        const SeedOutcome* a = find_seed(base, seed);
        const SeedOutcome* b = find_seed(runs[k], seed);
        const auto va = value_of(*a);
        const auto vb = value_of(*b);
        if (!a->completed || !b->completed || !va || !vb) {
          d.per_seed.push_back(std::nan(""));
          continue;
        }
        const double delta = *vb - *va;
        d.per_seed.push_back(delta);
        d.mean += delta;
        ++n;
        if (delta > 0.0) {
          ++d.wins;
        } else if (delta < 0.0) {
          ++d.losses;
        } else {
          ++d.ties;
        }
      }
      if (n > 0) d.mean /= static_cast<double>(n);
      cmp.deltas.push_back(std::move(d));
    };
    for (const auto& [name, f] : kEvalFields) {
      add(std::string("final_") + std::string(name), [f = f](const SeedOutcome& o) -> std::optional<double> {
        const auto m = last_evaluated(o.history);
        return m ? (*m).*f : std::nullopt;
      });
    }
    for (const auto& [name, f] : kStepFields) {
      add(std::string("final_") + std::string(name), [f = f](const SeedOutcome& o) -> std::optional<double> {
        if (o.history.empty()) return std::nullopt;
        return o.history.back().*f;
      });
    }
    report.comparisons.push_back(std::move(cmp));
  }
  return report;
}

ComparisonReport compare_runs(const std::vector<std::filesystem::path>& run_dirs) {
  std::vector<RunRecord> runs;
  for (const auto& d : run_dirs) runs.push_back(load_run(d));
  return compare_runs(runs);
}

std::string ComparisonReport::deltas_csv() const {
  std::string out = "baseline,candidate,metric,mean_delta,wins,losses,ties";
  for (auto s : seeds) out += ",seed_" + std::to_string(s);
  out += "\n";
  for (const auto& cmp : comparisons) {
    for (const auto& d : cmp.deltas) {
      out += cmp.baseline + "," + cmp.candidate + "," + d.metric + "," + fmt(d.mean) + "," + std::to_string(d.wins) +
             "," + std::to_string(d.losses) + "," + std::to_string(d.ties);
      for (double v : d.per_seed) out += "," + (std::isnan(v) ? std::string() : fmt(v));
      out += "\n";
    }
  }
  return out;
}

std::string ComparisonReport::table() const {
  std::ostringstream out;
  char line[256];
  for (const auto& cmp : comparisons) {
    out << cmp.candidate << " vs " << cmp.baseline << "\n";
    std::snprintf(line, sizeof(line), "  %-24s %12s %5s %7s %5s\n", "metric", "mean delta", "wins", "losses", "ties");
    out << line;
    for (const auto& d : cmp.deltas) {
      std::snprintf(line, sizeof(line), "  %-24s %+12.6f %5zu %7zu %5zu\n", d.metric.c_str(), d.mean, d.wins, d.losses,
                    d.ties);
      out << line;
    }
  }
  return out.str();
}

BiasCheckReport bias_check(std::size_t trials, std::uint64_t seed, std::size_t group_size, std::size_t long_length) {
  if (group_size < 2) throw Error(ErrorCode::kPrecondition, "bias check needs a group of at least 2");
  BiasCheckReport report;
  report.trials = trials;
  Rng rng(derive_seed(seed, "bias-check"));
  auto random_row = [&rng](std::size_t length) {
    const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
    std::vector<double> row(length);
    for (auto& v : row) v = rng.bernoulli(0.3) ? 0.0 : sign * rng.uniform();
    return row;
  };
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const auto g = static_cast<std::size_t>(rng.range(2, 16));
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < g; ++i) rows.push_back(random_row(static_cast<std::size_t>(rng.range(1, 256))));
    const GroupStats stats = compute_group_stats(rows);
    const auto mean_res = verify_mean_decomposition(stats);
    report.max_weighted_mean_residual = std::max(report.max_weighted_mean_residual, std::abs(mean_res.weighted_mean));
    for (double r : mean_res.leave_one_out) {
      report.max_leave_one_out_residual = std::max(report.max_leave_one_out_residual, std::abs(r));
    }
    for (std::size_t j = 0; j < g; ++j) {
      report.max_variance_residual =
          std::max(report.max_variance_residual, std::abs(verify_variance_decomposition(stats, j)));
    }
  }

  std::vector<std::vector<double>> rows{random_row(4)};
  for (std::size_t i = 1; i < group_size; ++i) rows.push_back(random_row(long_length));
  const GroupStats stats = compute_group_stats(rows);
  report.short_weight = stats.weights[0];
  const double gap = std::abs(stats.response_means[0] - stats.loo_means[0]);
  report.mean_shift_ratio = gap > 0.0 ? std::abs(stats.mean - stats.loo_means[0]) / gap : 0.0;

  TokenRewardMatrix short_matrix{"0", {1.0}, {rows[0]}};
  const auto before = intra_sample_advantage(short_matrix);
  for (std::size_t i = 1; i < rows.size(); ++i) rows[i] = random_row(long_length);
  const auto after = intra_sample_advantage(TokenRewardMatrix{"0", {1.0}, {rows[0]}});
  report.intra_unchanged_under_perturbation = before == after;
  return report;
}

std::string bias_check_json(const BiasCheckReport& r) {
  return json{{"trials", r.trials},
              {"max_residual",
               {{"weighted_mean", r.max_weighted_mean_residual},
                {"leave_one_out_mean", r.max_leave_one_out_residual},
                {"variance", r.max_variance_residual}}},
              {"length_bias",
               {{"short_weight", r.short_weight},
                {"mean_shift_ratio", r.mean_shift_ratio},
                {"intra_unchanged_under_perturbation", r.intra_unchanged_under_perturbation}}}}
      .dump(2);
}

}  // namespace rtt
