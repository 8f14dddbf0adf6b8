#include "rtt/rubric.hpp"

#include <algorithm>
#include <set>

#include "rtt/error.hpp"
#include "rtt/verifiers.hpp"

namespace rtt {

namespace {

struct KindRow {
  ConstraintKind kind;
  std::string_view name;
  KindTaxonomy taxonomy;
};

// Global: tone, format and count constraints. Local positive: must-include.
// Local negative: must-exclude.
constexpr KindRow kKindTable[] = {
    {ConstraintKind::kAllCaps, "all-caps", {Scope::kGlobal, Polarity::kPositive, Hardness::kHard}},
    {ConstraintKind::kStartsWith, "starts-with", {Scope::kLocal, Polarity::kPositive, Hardness::kHard}},
    {ConstraintKind::kEndsWith, "ends-with", {Scope::kLocal, Polarity::kPositive, Hardness::kHard}},
    {ConstraintKind::kForbiddenWord, "forbidden-word", {Scope::kLocal, Polarity::kNegative, Hardness::kHard}},
    {ConstraintKind::kRequiredWord, "required-word", {Scope::kLocal, Polarity::kPositive, Hardness::kHard}},
    {ConstraintKind::kMaxLength, "max-length", {Scope::kGlobal, Polarity::kPositive, Hardness::kHard}},
    {ConstraintKind::kMinLength, "min-length", {Scope::kGlobal, Polarity::kPositive, Hardness::kHard}},
    {ConstraintKind::kWordCountRange, "word-count-range", {Scope::kGlobal, Polarity::kPositive, Hardness::kHard}},
    {ConstraintKind::kStatementPresent, "statement-present", {Scope::kLocal, Polarity::kPositive, Hardness::kSoft}},
};

const KindRow& row_of(ConstraintKind kind) {
  for (const auto& row : kKindTable) {
    if (row.kind == kind) return row;
  }
  throw Error(ErrorCode::kUnsupportedConstraint, "kind not in taxonomy table");
}

[[noreturn]] void invalid(const Constraint& c, const std::string& why) {
  throw Error(ErrorCode::kInvalidConstraint, "constraint '" + c.id + "': " + why);
}

}  // namespace

std::string_view kind_name(ConstraintKind kind) noexcept {
  for (const auto& row : kKindTable) {
    if (row.kind == kind) return row.name;
  }
  return "unknown";
}

ConstraintKind parse_kind(std::string_view name) {
  for (const auto& row : kKindTable) {
    if (row.name == name) return row.kind;
  }
  throw Error(ErrorCode::kUnsupportedConstraint, "unknown constraint kind '" + std::string(name) + "'");
}

std::string_view hardness_name(Hardness hardness) noexcept {
  return hardness == Hardness::kHard ? "hard" : "soft";
}

Hardness parse_hardness(std::string_view name) {
  if (name == "hard") return Hardness::kHard;
  if (name == "soft") return Hardness::kSoft;
  throw Error(ErrorCode::kInvalidConstraint, "unknown hardness '" + std::string(name) + "'");
}

std::string_view scope_name(Scope scope) noexcept {
  return scope == Scope::kGlobal ? "global" : "local";
}

std::string_view polarity_name(Polarity polarity) noexcept {
  return polarity == Polarity::kPositive ? "positive" : "negative";
}

KindTaxonomy taxonomy_of(ConstraintKind kind) noexcept {
  for (const auto& row : kKindTable) {
    if (row.kind == kind) return row.taxonomy;
  }
  return {Scope::kGlobal, Polarity::kPositive, Hardness::kHard};
}

Constraint make_constraint(std::string id, ConstraintKind kind, ConstraintParams params) {
  const KindTaxonomy tax = row_of(kind).taxonomy;
  Constraint c{std::move(id), kind, std::move(params), tax.hardness, tax.scope, tax.polarity};
  validate_constraint(c);
  return c;
}

void validate_constraint(const Constraint& c) {
  if (c.id.empty()) invalid(c, "empty id");
  const KindTaxonomy tax = row_of(c.kind).taxonomy;
  if (c.scope != tax.scope || c.polarity != tax.polarity) {
    invalid(c, "scope/polarity disagree with taxonomy for " + std::string(kind_name(c.kind)));
  }
  if (c.hardness != tax.hardness) {
    invalid(c, "hardness must be " + std::string(hardness_name(tax.hardness)) + " for " +
                   std::string(kind_name(c.kind)));
  }
  const auto& p = c.params;
  switch (c.kind) {
    case ConstraintKind::kAllCaps:
      break;
    case ConstraintKind::kStartsWith:
    case ConstraintKind::kEndsWith:
    case ConstraintKind::kForbiddenWord:
    case ConstraintKind::kRequiredWord:
      if (p.text.empty()) invalid(c, "missing text parameter");
      break;
    case ConstraintKind::kStatementPresent:
      if (fold_text(p.text).text.empty()) invalid(c, "statement folds to empty text");
      for (const auto& contra : p.contradictions) {
        if (fold_text(contra).text.empty()) invalid(c, "contradiction folds to empty text");
      }
      break;
    case ConstraintKind::kMaxLength:
      if (p.max < 1) invalid(c, "max-length needs max >= 1");
      break;
    case ConstraintKind::kMinLength:
      if (p.min < 1) invalid(c, "min-length needs min >= 1");
      break;
    case ConstraintKind::kWordCountRange:
      if (p.min < 0 || p.max < 1 || p.min > p.max) invalid(c, "word-count-range needs 0 <= min <= max, max >= 1");
      break;
  }
}

Instruction::Instruction(std::string id, std::string task_text, std::vector<Constraint> rubric)
    : id_(std::move(id)), task_text_(std::move(task_text)), rubric_(std::move(rubric)) {
  if (rubric_.empty()) {
    throw Error(ErrorCode::kPrecondition, "instruction '" + id_ + "' has an empty rubric");
  }
  std::set<std::string, std::less<>> seen;
  for (const auto& c : rubric_) {
    validate_constraint(c);
    if (!seen.insert(c.id).second) {
      throw Error(ErrorCode::kPrecondition, "duplicate constraint id '" + c.id + "' in '" + id_ + "'");
    }
  }
}

const Constraint* Instruction::find(std::string_view constraint_id) const noexcept {
  for (const auto& c : rubric_) {
    if (c.id == constraint_id) return &c;
  }
  return nullptr;
}

bool Instruction::contains(const Constraint& constraint) const noexcept {
  const Constraint* found = find(constraint.id);
  return found != nullptr && *found == constraint;
}

Response::Response(std::string text, std::vector<TokenId> tokens, std::vector<Span> byte_offsets,
                   std::vector<std::uint8_t> valid_mask)
    : text_(std::move(text)),
      tokens_(std::move(tokens)),
      offsets_(std::move(byte_offsets)),
      valid_(std::move(valid_mask)) {
  if (tokens_.size() != offsets_.size() || tokens_.size() != valid_.size()) {
    throw Error(ErrorCode::kPrecondition, "tokens, byte offsets and valid mask differ in length");
  }
  std::size_t cursor = 0;
  for (const auto& span : offsets_) {
    if (span.begin != cursor || span.end < span.begin) {
      throw Error(ErrorCode::kPrecondition, "byte offsets must be contiguous and sorted");
    }
    cursor = span.end;
  }
  if (cursor != text_.size()) {
    throw Error(ErrorCode::kPrecondition, "byte offsets do not cover the text");
  }
}

Response Response::from_text(std::string text, bool terminated_by_eos) {
  const std::size_t n = text.size();
  std::vector<TokenId> tokens;
  std::vector<Span> offsets;
  tokens.reserve(n + 1);
  offsets.reserve(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    tokens.push_back(static_cast<TokenId>(static_cast<unsigned char>(text[i])));
    offsets.push_back({i, i + 1});
  }
  if (terminated_by_eos) {
    tokens.push_back(kEosToken);
    offsets.push_back({n, n});
  }
  std::vector<std::uint8_t> valid(tokens.size(), 1);
  return Response(std::move(text), std::move(tokens), std::move(offsets), std::move(valid));
}

std::size_t Response::valid_count() const noexcept {
  return static_cast<std::size_t>(std::count(valid_.begin(), valid_.end(), std::uint8_t{1}));
}

bool Response::terminated_by_eos() const noexcept {
  return !tokens_.empty() && tokens_.back() == kEosToken;
}

ConstraintVerdict evaluate_constraint(const Instruction& instruction, const Response& response,
                                      const Constraint& constraint) {
  if (!instruction.contains(constraint)) {
    throw Error(ErrorCode::kPrecondition,
                "constraint '" + constraint.id + "' is not part of instruction '" + instruction.id() + "'");
  }
  return check_constraint(constraint, response);
}

VerificationResult verify_rubric(const Instruction& instruction, const Response& response) {
  VerificationResult result;
  result.reserve(instruction.rubric().size());
  for (const auto& c : instruction.rubric()) {
    result.push_back(evaluate_constraint(instruction, response, c));
  }
  return result;
}

int score_aon(std::span<const ConstraintVerdict> verdicts) {
  if (verdicts.empty()) throw Error(ErrorCode::kPrecondition, "AON over an empty rubric");
  for (const auto& v : verdicts) {
    if (!v.satisfied) return 0;
  }
  return 1;
}

double score_csr(std::span<const ConstraintVerdict> verdicts) {
  if (verdicts.empty()) throw Error(ErrorCode::kPrecondition, "CSR over an empty rubric");
  std::size_t satisfied = 0;
  for (const auto& v : verdicts) satisfied += v.satisfied ? 1 : 0;
  return static_cast<double>(satisfied) / static_cast<double>(verdicts.size());
}

int score_aon(const Instruction& instruction, const Response& response) {
  return score_aon(verify_rubric(instruction, response));
}

double score_csr(const Instruction& instruction, const Response& response) {
  return score_csr(verify_rubric(instruction, response));
}

}  // namespace rtt
