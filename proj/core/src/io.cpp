#include "rtt/io.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "rtt/error.hpp"

namespace rtt::io {

using nlohmann::json;

namespace {

json parse_json(std::string_view text, std::string_view what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string(what) + ": " + e.what());
  }
}

template <typename T>
T field(const json& j, const char* key, std::string_view what) {
  auto it = j.find(key);
  if (it == j.end()) throw Error(ErrorCode::kParse, std::string(what) + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string(what) + ": field '" + key + "': " + e.what());
  }
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(line);
  }
  return out;
}

const char* text_key(ConstraintKind kind) {
  switch (kind) {
    case ConstraintKind::kStartsWith: return "prefix";
    case ConstraintKind::kEndsWith: return "suffix";
    case ConstraintKind::kForbiddenWord:
    case ConstraintKind::kRequiredWord: return "word";
    case ConstraintKind::kStatementPresent: return "statement";
    default: return nullptr;
  }
}

bool uses_min(ConstraintKind kind) {
  return kind == ConstraintKind::kMinLength || kind == ConstraintKind::kWordCountRange;
}

bool uses_max(ConstraintKind kind) {
  return kind == ConstraintKind::kMaxLength || kind == ConstraintKind::kWordCountRange;
}

json constraint_json(const Constraint& c) {
  json params = json::object();
  if (const char* key = text_key(c.kind)) params[key] = c.params.text;
  if (c.kind == ConstraintKind::kStatementPresent && !c.params.contradictions.empty()) {
    params["contradictions"] = c.params.contradictions;
  }
  if (uses_min(c.kind)) params["min"] = c.params.min;
  if (uses_max(c.kind)) params["max"] = c.params.max;
  return json{{"id", c.id}, {"kind", kind_name(c.kind)}, {"params", params}, {"hardness", hardness_name(c.hardness)}};
}

Constraint constraint_from(const json& j) {
  const auto id = field<std::string>(j, "id", "constraint");
  const ConstraintKind kind = parse_kind(field<std::string>(j, "kind", "constraint " + id));
  const std::string what = "constraint " + id;
  ConstraintParams params;
  const json p = j.contains("params") ? j.at("params") : json::object();
  if (!p.is_object()) throw Error(ErrorCode::kParse, what + ": params must be an object");
  if (const char* key = text_key(kind)) {
    if (p.contains(key)) params.text = field<std::string>(p, key, what);
  }
  if (p.contains("contradictions")) params.contradictions = field<std::vector<std::string>>(p, "contradictions", what);
  if (uses_min(kind) && p.contains("min")) params.min = field<std::int64_t>(p, "min", what);
  if (uses_max(kind) && p.contains("max")) params.max = field<std::int64_t>(p, "max", what);
  Constraint c = make_constraint(id, kind, std::move(params));
  if (j.contains("hardness")) {
    c.hardness = parse_hardness(field<std::string>(j, "hardness", what));
    validate_constraint(c);
  }
  return c;
}

}  // namespace

std::string instruction_to_json(const Instruction& instruction) {
  json rubric = json::array();
  for (const auto& c : instruction.rubric()) rubric.push_back(constraint_json(c));
  return json{{"id", instruction.id()}, {"task_text", instruction.task_text()}, {"rubric", rubric}}.dump();
}

Instruction instruction_from_json(std::string_view line) {
  const json j = parse_json(line, "instruction");
  const auto id = field<std::string>(j, "id", "instruction");
  const auto task_text = j.contains("task_text") ? field<std::string>(j, "task_text", id) : std::string();
  const auto rubric_json = field<json>(j, "rubric", "instruction " + id);
  if (!rubric_json.is_array()) throw Error(ErrorCode::kParse, "instruction " + id + ": rubric must be an array");
  std::vector<Constraint> rubric;
  for (const auto& c : rubric_json) rubric.push_back(constraint_from(c));
  return Instruction(id, task_text, std::move(rubric));
}

std::string instructions_jsonl(const std::vector<Instruction>& instructions) {
  std::string out;
  for (const auto& instr : instructions) out += instruction_to_json(instr) + "\n";
  return out;
}

std::vector<Instruction> read_instructions(const std::filesystem::path& path) {
  std::vector<Instruction> out;
  std::set<std::string> ids;
  for (const auto& line : lines_of(read_file(path))) {
    out.push_back(instruction_from_json(line));
    if (!ids.insert(out.back().id()).second) {
      throw Error(ErrorCode::kParse, "duplicate instruction id '" + out.back().id() + "'");
    }
  }
  return out;
}

void write_instructions(const std::filesystem::path& path, const std::vector<Instruction>& instructions) {
  write_file(path, instructions_jsonl(instructions));
}

std::vector<ResponseRecord> read_responses(const std::filesystem::path& path) {
  std::vector<ResponseRecord> out;
  for (const auto& line : lines_of(read_file(path))) {
    const json j = parse_json(line, "response");
    ResponseRecord r;
    r.task_id = field<std::string>(j, "task_id", "response");
    r.response_id = field<std::string>(j, "response_id", "response");
    const bool eos = j.contains("eos") && field<bool>(j, "eos", "response");
    r.response = Response::from_text(field<std::string>(j, "text", "response " + r.response_id), eos);
    out.push_back(std::move(r));
  }
  return out;
}

std::string response_to_json(const ResponseRecord& record) {
  json j{{"task_id", record.task_id}, {"response_id", record.response_id}, {"text", record.response.text()}};
  if (record.response.terminated_by_eos()) j["eos"] = true;
  return j.dump();
}

std::string verdict_to_json(const ResponseRecord& record, const Constraint& constraint,
                            const ConstraintVerdict& verdict) {
  json spans = json::array();
  for (const auto& s : verdict.match_spans) spans.push_back({s.begin, s.end});
  return json{{"task_id", record.task_id},
              {"response_id", record.response_id},
              {"constraint_id", verdict.constraint_id},
              {"kind", kind_name(constraint.kind)},
              {"satisfied", verdict.satisfied},
              {"match_spans", spans}}
      .dump();
}

std::string label_to_json(const LabelRecord& record) {
  json runs = json::array();
  for (const auto& [b, e] : record.label_runs) runs.push_back({b, e});
  return json{{"task_id", record.task_id},
              {"response_id", record.response_id},
              {"constraint_id", record.constraint_id},
              {"annotation_type", annotation_name(record.annotation_type)},
              {"label_runs", runs}}
      .dump();
}

LabelRecord label_from_json(std::string_view line) {
  const json j = parse_json(line, "label");
  LabelRecord r;
  r.task_id = field<std::string>(j, "task_id", "label");
  r.response_id = field<std::string>(j, "response_id", "label");
  r.constraint_id = field<std::string>(j, "constraint_id", "label");
  r.annotation_type = parse_annotation(field<std::string>(j, "annotation_type", "label"));
  r.label_runs = field<std::vector<std::pair<std::size_t, std::size_t>>>(j, "label_runs", "label");
  return r;
}

RolloutGroup group_from_json(std::string_view text) {
  const json j = parse_json(text, "group");
  RolloutGroup g;
  g.instruction_id = j.contains("instruction_id") ? field<std::string>(j, "instruction_id", "group") : "";
  g.reward_mode = parse_reward_mode(j.contains("reward_mode") ? field<std::string>(j, "reward_mode", "group") : "aon");
  g.rewards = field<std::vector<double>>(j, "rewards", "group");
  const auto responses = field<json>(j, "responses", "group");
  if (!responses.is_array()) throw Error(ErrorCode::kParse, "group: responses must be an array");
  for (std::size_t i = 0; i < responses.size(); ++i) {
    const json& r = responses[i];
    TokenRewardMatrix m;
    m.response_id = r.contains("response_id") ? field<std::string>(r, "response_id", "group response")
                                              : std::to_string(i);
    m.rows = field<std::vector<std::vector<double>>>(r, "rows", "group response " + m.response_id);
    for (const auto& row : m.rows) {
      double sign = 0.0;
      for (double v : row) {
        if (!std::isfinite(v) || v < -1.0 || v > 1.0) {
          throw Error(ErrorCode::kRange, "group response " + m.response_id + ": token reward outside [-1, 1]");
        }
        if (v != 0.0) {
          const double s = v > 0.0 ? 1.0 : -1.0;
          if (sign != 0.0 && s != sign) {
            throw Error(ErrorCode::kRange, "group response " + m.response_id + ": mixed signs within a constraint row");
          }
          sign = s;
        }
      }
      m.signs.push_back(sign);
    }
    g.token_rewards.push_back(std::move(m));
  }
  return g;
}

std::string group_to_json(const RolloutGroup& group) {
  json responses = json::array();
  for (const auto& m : group.token_rewards) responses.push_back({{"response_id", m.response_id}, {"rows", m.rows}});
  return json{{"instruction_id", group.instruction_id},
              {"reward_mode", reward_mode_name(group.reward_mode)},
              {"rewards", group.rewards},
              {"responses", responses}}
      .dump();
}

std::string advantages_to_json(const RolloutGroup& group, const AdvantageBundle& bundle, Normalization normalization) {
  json responses = json::array();
  for (std::size_t i = 0; i < bundle.sum.size(); ++i) {
    const std::string id = i < group.token_rewards.size() ? group.token_rewards[i].response_id : std::to_string(i);
    responses.push_back({{"response_id", id},
                         {"a_res", bundle.res[i].empty() ? 0.0 : bundle.res[i].front()},
                         {"a_tok", bundle.tok[i]},
                         {"a_sum", bundle.sum[i]}});
  }
  return json{{"instruction_id", group.instruction_id},
              {"normalization", normalization_name(normalization)},
              {"alpha", bundle.alpha},
              {"beta", bundle.beta},
              {"responses", responses}}
      .dump(2);
}

std::string policy_to_json(const PolicyParams& policy) {
  json rows = json::array();
  for (std::uint64_t key : policy.table().sorted_keys()) {
    const LogitRow& row = *policy.table().find(key);
    rows.push_back({{"key", key}, {"logits", std::vector<double>(row.begin(), row.end())}});
  }
  return json{{"context_length", policy.context_length()},
              {"vocabulary", std::string(vocab_characters())},
              {"vocab_size", kVocabSize},
              {"rows", rows}}
      .dump();
}

PolicyParams policy_from_json(std::string_view text) {
  const json j = parse_json(text, "policy");
  PolicyParams policy(field<int>(j, "context_length", "policy"));
  if (field<std::string>(j, "vocabulary", "policy") != vocab_characters()) {
    throw Error(ErrorCode::kVocab, "policy vocabulary does not match this build");
  }
  for (const auto& r : field<json>(j, "rows", "policy")) {
    const auto key = field<std::uint64_t>(r, "key", "policy row");
    const auto logits = field<std::vector<double>>(r, "logits", "policy row");
    if (logits.size() != static_cast<std::size_t>(kVocabSize)) {
      throw Error(ErrorCode::kDimension, "policy row has the wrong vocabulary size");
    }
    LogitRow& row = policy.table().row(key);
    std::copy(logits.begin(), logits.end(), row.begin());
  }
  return policy;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

FlatConfig parse_flat_config(std::string_view text) {
  FlatConfig out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    const std::string body = trim(line);
    if (body.empty()) continue;
    if (body.front() == '[') {
      throw Error(ErrorCode::kParse, "line " + std::to_string(lineno) + ": tables are not supported in flat configs");
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kParse, "line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw Error(ErrorCode::kParse, "line " + std::to_string(lineno) + ": empty key");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (!out.emplace(key, value).second) {
      throw Error(ErrorCode::kParse, "line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

FlatConfig read_flat_config(const std::filesystem::path& path) { return parse_flat_config(read_file(path)); }

namespace {

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw Error(ErrorCode::kConfig, "'" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_unsigned(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw Error(ErrorCode::kConfig, "'" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error(ErrorCode::kConfig, "'" + key + "' expects true or false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ec == std::errc() ? end : buf);
}

}  // namespace

FlatConfig apply_train_config(const FlatConfig& config, TrainConfig& out) {
  FlatConfig rest;
  for (const auto& [key, value] : config) {
    if (key == "reward_mode") out.reward_mode = parse_reward_mode(value);
    else if (key == "token_level") out.token_level = to_bool(key, value);
    else if (key == "weighting") out.weighting = parse_weighting(value);
    else if (key == "normalization") out.normalization = parse_normalization(value);
    else if (key == "alpha") out.alpha = to_double(key, value);
    else if (key == "beta") out.beta = to_double(key, value);
    else if (key == "group_size") out.group_size = to_unsigned(key, value);
    else if (key == "max_len") out.max_len = to_unsigned(key, value);
    else if (key == "steps") out.steps = to_unsigned(key, value);
    else if (key == "batch_size") out.batch_size = to_unsigned(key, value);
    else if (key == "mini_epochs") out.mini_epochs = to_unsigned(key, value);
    else if (key == "learning_rate") out.learning_rate = to_double(key, value);
    else if (key == "clip_low") out.clip.low = to_double(key, value);
    else if (key == "clip_high") out.clip.high = to_double(key, value);
    else if (key == "kl_coef") out.kl_coef = to_double(key, value);
    else if (key == "context_length") out.context_length = static_cast<int>(to_unsigned(key, value));
    else if (key == "update_prior") out.update_prior = to_bool(key, value);
    else if (key == "eval_samples") out.eval_samples = to_unsigned(key, value);
    else if (key == "eval_every") out.eval_every = to_unsigned(key, value);
    else if (key == "holdout_fraction") out.holdout_fraction = to_double(key, value);
    else if (key == "prior_sentences") out.prior_sentences = to_unsigned(key, value);
    else if (key == "prior_smoothing") out.prior_smoothing = to_double(key, value);
    else if (key == "seed") out.seed = to_unsigned(key, value);
    else rest.emplace(key, value);
  }
  return rest;
}

std::string train_config_to_flat(const TrainConfig& c) {
  std::string out;
  auto put = [&out](std::string_view key, const std::string& value) {
    out += std::string(key) + " = " + value + "\n";
  };
  put("reward_mode", std::string(reward_mode_name(c.reward_mode)));
  put("token_level", c.token_level ? "true" : "false");
  put("weighting", std::string(weighting_name(c.weighting)));
  put("normalization", std::string(normalization_name(c.normalization)));
  put("alpha", fmt(c.alpha));
  put("beta", fmt(c.beta));
  put("group_size", std::to_string(c.group_size));
  put("max_len", std::to_string(c.max_len));
  put("steps", std::to_string(c.steps));
  put("batch_size", std::to_string(c.batch_size));
  put("mini_epochs", std::to_string(c.mini_epochs));
  put("learning_rate", fmt(c.learning_rate));
  put("clip_low", fmt(c.clip.low));
  put("clip_high", fmt(c.clip.high));
  put("kl_coef", fmt(c.kl_coef));
  put("context_length", std::to_string(c.context_length));
  put("update_prior", c.update_prior ? "true" : "false");
  put("eval_samples", std::to_string(c.eval_samples));
  put("eval_every", std::to_string(c.eval_every));
  put("holdout_fraction", fmt(c.holdout_fraction));
  put("prior_sentences", std::to_string(c.prior_sentences));
  put("prior_smoothing", fmt(c.prior_smoothing));
  put("seed", std::to_string(c.seed));
  return out;
}

std::vector<StepMetrics> parse_metrics_csv(std::string_view text) {
  const auto lines = lines_of(std::string(text));
  if (lines.empty() || lines.front() != metrics_csv_header()) {
    throw Error(ErrorCode::kParse, "metrics csv: unexpected header");
  }
  std::vector<StepMetrics> out;
  for (std::size_t n = 1; n < lines.size(); ++n) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(lines[n]);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!lines[n].empty() && lines[n].back() == ',') cells.emplace_back();
    if (cells.size() != 10) throw Error(ErrorCode::kParse, "metrics csv: row " + std::to_string(n) + " has wrong width");
    StepMetrics m;
    m.step = to_unsigned("step", cells[0]);
    m.rollout_acc = to_double("rollout_acc", cells[1]);
    m.entropy = to_double("entropy", cells[2]);
    m.kl = to_double("kl", cells[3]);
    m.clip_frac = to_double("clip_frac", cells[4]);
    m.mean_reward = to_double("mean_reward", cells[5]);
    std::optional<double>* optional[] = {&m.eval_aon, &m.eval_csr, &m.eval_aon_greedy, &m.eval_csr_greedy};
    for (std::size_t k = 0; k < 4; ++k) {
      if (!cells[6 + k].empty()) *optional[k] = to_double("eval", cells[6 + k]);
    }
    out.push_back(m);
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace rtt::io
