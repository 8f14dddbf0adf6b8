#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rtt/advantage.hpp"
#include "rtt/attribution.hpp"
#include "rtt/policy.hpp"
#include "rtt/rubric.hpp"
#include "rtt/trainer.hpp"

namespace rtt::io {

// Instruction JSONL: {id, task_text, rubric: [{id, kind, params, hardness}]}.
// Params use kind-specific keys: prefix, suffix, word, statement,
// contradictions, min, max. Scope and polarity are derived on load.
std::string instruction_to_json(const Instruction& instruction);
Instruction instruction_from_json(std::string_view line);

std::vector<Instruction> read_instructions(const std::filesystem::path& path);
void write_instructions(const std::filesystem::path& path, const std::vector<Instruction>& instructions);
std::string instructions_jsonl(const std::vector<Instruction>& instructions);

// Response JSONL: {task_id, response_id, text [, eos]}.
struct ResponseRecord {
  std::string task_id;
  std::string response_id;
  Response response;
};

std::vector<ResponseRecord> read_responses(const std::filesystem::path& path);
std::string response_to_json(const ResponseRecord& record);

// Verification JSONL: one line per (response, constraint).
std::string verdict_to_json(const ResponseRecord& record, const Constraint& constraint,
                            const ConstraintVerdict& verdict);

// Labels JSONL: {task_id, response_id, constraint_id, annotation_type, label_runs}.
struct LabelRecord {
  std::string task_id;
  std::string response_id;
  std::string constraint_id;
  AnnotationType annotation_type = AnnotationType::kAllIrrelevant;
  std::vector<std::pair<std::size_t, std::size_t>> label_runs;

  friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

std::string label_to_json(const LabelRecord& record);
LabelRecord label_from_json(std::string_view line);

// Group JSON for the advantage command:
// {instruction_id, reward_mode, rewards: [..],
//  responses: [{response_id, rows: [[r_t ...] per constraint]}]}
RolloutGroup group_from_json(std::string_view text);
std::string group_to_json(const RolloutGroup& group);
std::string advantages_to_json(const RolloutGroup& group, const AdvantageBundle& bundle, Normalization normalization);

// Policy parameters as JSON with rows in ascending key order.
std::string policy_to_json(const PolicyParams& policy);
PolicyParams policy_from_json(std::string_view text);

/// Flat `key = value` document; `#` starts a comment, values may be quoted.
/// Duplicate keys are rejected (kParse).
using FlatConfig = std::map<std::string, std::string>;
FlatConfig parse_flat_config(std::string_view text);
FlatConfig read_flat_config(const std::filesystem::path& path);

/// Applies recognised trainer keys; returns the keys it did not consume.
FlatConfig apply_train_config(const FlatConfig& config, TrainConfig& out);
/// Canonical rendering of every trainer field, one `key = value` per line.
std::string train_config_to_flat(const TrainConfig& config);

/// Parsed metrics.csv (the format written by metrics_csv).
std::vector<StepMetrics> parse_metrics_csv(std::string_view text);

std::string read_file(const std::filesystem::path& path);
/// Writes atomically enough for single-writer run directories.
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace rtt::io
