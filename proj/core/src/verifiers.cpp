#include "rtt/verifiers.hpp"

#include <algorithm>
#include <cctype>

#include "rtt/error.hpp"

namespace rtt {

namespace {

bool is_word_char(char c) noexcept { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

char lower(char c) noexcept {
  return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = lower(c);
  return out;
}

bool equal_ci(std::string_view text, std::size_t at, std::string_view lowered_needle) noexcept {
  if (at + lowered_needle.size() > text.size()) return false;
  for (std::size_t i = 0; i < lowered_needle.size(); ++i) {
    if (lower(text[at + i]) != lowered_needle[i]) return false;
  }
  return true;
}

// Case-insensitive occurrences delimited by non-word characters.
std::vector<Span> find_words(std::string_view text, std::string_view lowered_needle) {
  std::vector<Span> spans;
  const std::size_t n = lowered_needle.size();
  if (n == 0) return spans;
  std::size_t i = 0;
  while (i + n <= text.size()) {
    const bool left_ok = i == 0 || !is_word_char(text[i - 1]) || !is_word_char(lowered_needle.front());
    const bool right_ok =
        i + n == text.size() || !is_word_char(text[i + n]) || !is_word_char(lowered_needle.back());
    if (left_ok && right_ok && equal_ci(text, i, lowered_needle)) {
      spans.push_back({i, i + n});
      i += n;
    } else {
      ++i;
    }
  }
  return spans;
}

std::vector<Span> find_folded(const FoldedText& folded, std::string_view needle) {
  std::vector<Span> spans;
  const std::string& hay = folded.text;
  const std::size_t n = needle.size();
  if (n == 0) return spans;
  std::size_t i = 0;
  while (i + n <= hay.size()) {
    const bool left_ok = i == 0 || hay[i - 1] == ' ';
    const bool right_ok = i + n == hay.size() || hay[i + n] == ' ';
    if (left_ok && right_ok && hay.compare(i, n, needle) == 0) {
      spans.push_back({folded.origin[i], folded.origin[i + n - 1] + 1});
      i += n;
    } else {
      ++i;
    }
  }
  return spans;
}

std::vector<Span> merge_spans(std::vector<Span> spans) {
  std::sort(spans.begin(), spans.end(),
            [](const Span& a, const Span& b) { return a.begin != b.begin ? a.begin < b.begin : a.end < b.end; });
  std::vector<Span> merged;
  for (const auto& s : spans) {
    if (!merged.empty() && s.begin < merged.back().end) {
      merged.back().end = std::max(merged.back().end, s.end);
    } else {
      merged.push_back(s);
    }
  }
  return merged;
}

std::size_t character_count(const Response& response) noexcept {
  std::size_t count = 0;
  const auto& offsets = response.byte_offsets();
  const auto& valid = response.valid_mask();
  for (std::size_t t = 0; t < offsets.size(); ++t) {
    if (valid[t] != 0 && !offsets[t].empty()) ++count;
  }
  return count;
}

std::vector<Span> whole_text(const Response& response) {
  if (response.text().empty()) return {};
  return {Span{0, response.text().size()}};
}

JudgeDecision judge_statement(const RuleSpec& spec, const Response& response) {
  const FoldedText folded = fold_text(response.text());
  std::vector<Span> contradicting;
  for (const auto& contra : spec.contradictions) {
    auto found = find_folded(folded, contra);
    contradicting.insert(contradicting.end(), found.begin(), found.end());
  }
  if (!contradicting.empty()) return {false, merge_spans(std::move(contradicting))};
  auto spans = find_folded(folded, spec.needle);
  const bool satisfied = !spans.empty();
  return {satisfied, std::move(spans)};
}

bool decide(const RuleSpec& spec, const Response& response, const std::vector<Span>& located) {
  const std::string& text = response.text();
  switch (spec.kind) {
    case ConstraintKind::kAllCaps:
      return std::none_of(text.begin(), text.end(),
                          [](char c) { return std::islower(static_cast<unsigned char>(c)) != 0; });
    case ConstraintKind::kStartsWith:
    case ConstraintKind::kEndsWith:
    case ConstraintKind::kRequiredWord:
      return !located.empty();
    case ConstraintKind::kForbiddenWord:
      return located.empty();
    case ConstraintKind::kMaxLength:
      return static_cast<std::int64_t>(character_count(response)) <= spec.max;
    case ConstraintKind::kMinLength:
      return static_cast<std::int64_t>(character_count(response)) >= spec.min;
    case ConstraintKind::kWordCountRange: {
      const auto words = static_cast<std::int64_t>(count_words(text));
      return words >= spec.min && words <= spec.max;
    }
    case ConstraintKind::kStatementPresent:
      return judge_statement(spec, response).satisfied;
  }
  return false;
}

RuleOutcome builtin_verify(const RuleSpec& spec, const Response& response) {
  if (spec.kind == ConstraintKind::kStatementPresent) {
    JudgeDecision d = judge_statement(spec, response);
    return {d.satisfied, std::move(d.evidence_spans)};
  }
  std::vector<Span> located = locate_spans(spec, response);
  const bool satisfied = decide(spec, response, located);
  const bool negative = taxonomy_of(spec.kind).polarity == Polarity::kNegative;
  if (!negative && !satisfied) located.clear();
  return {satisfied, std::move(located)};
}

}  // namespace

FoldedText fold_text(std::string_view text) {
  FoldedText out;
  out.text.reserve(text.size());
  out.origin.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (is_word_char(c)) {
      out.text.push_back(lower(c));
      out.origin.push_back(i);
    } else if (!out.text.empty() && out.text.back() != ' ') {
      out.text.push_back(' ');
      out.origin.push_back(i);
    }
  }
  if (!out.text.empty() && out.text.back() == ' ') {
    out.text.pop_back();
    out.origin.pop_back();
  }
  return out;
}

std::size_t count_words(std::string_view text) noexcept {
  std::size_t words = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return words;
}

RuleSpec compile_rule(const Constraint& constraint) {
  validate_constraint(constraint);
  RuleSpec spec;
  spec.kind = constraint.kind;
  spec.min = constraint.params.min;
  spec.max = constraint.params.max;
  switch (constraint.kind) {
    case ConstraintKind::kForbiddenWord:
    case ConstraintKind::kRequiredWord:
      spec.needle = to_lower(constraint.params.text);
      break;
    case ConstraintKind::kStartsWith:
    case ConstraintKind::kEndsWith:
      spec.needle = constraint.params.text;
      break;
    case ConstraintKind::kStatementPresent:
      spec.needle = fold_text(constraint.params.text).text;
      for (const auto& contra : constraint.params.contradictions) {
        spec.contradictions.push_back(fold_text(contra).text);
      }
      break;
    default:
      break;
  }
  return spec;
}

std::vector<Span> locate_spans(const RuleSpec& spec, const Response& response) {
  const std::string& text = response.text();
  switch (spec.kind) {
    case ConstraintKind::kStartsWith:
      if (text.starts_with(spec.needle)) return {Span{0, spec.needle.size()}};
      return {};
    case ConstraintKind::kEndsWith:
      if (text.ends_with(spec.needle)) return {Span{text.size() - spec.needle.size(), text.size()}};
      return {};
    case ConstraintKind::kForbiddenWord:
    case ConstraintKind::kRequiredWord:
      return find_words(text, spec.needle);
    case ConstraintKind::kStatementPresent:
      return find_folded(fold_text(text), spec.needle);
    case ConstraintKind::kAllCaps:
    case ConstraintKind::kMaxLength:
    case ConstraintKind::kMinLength:
    case ConstraintKind::kWordCountRange:
      return whole_text(response);
  }
  return {};
}

RuleOutcome verify_rule(const RuleSpec& spec, const Response& response) {
  return builtin_verify(spec, response);
}

JudgeDecision judge_soft(const Constraint& constraint, const Response& response) {
  if (constraint.hardness != Hardness::kSoft) {
    throw Error(ErrorCode::kPrecondition, "judge_soft called with hard constraint '" + constraint.id + "'");
  }
  return judge_statement(compile_rule(constraint), response);
}

ConstraintVerdict check_constraint(const Constraint& constraint, const Response& response) {
  ConstraintVerdict verdict{constraint.id, false, {}};
  if (constraint.hardness == Hardness::kSoft) {
    JudgeDecision decision = judge_soft(constraint, response);
    verdict.satisfied = decision.satisfied;
    verdict.match_spans = std::move(decision.evidence_spans);
    return verdict;
  }
  const VerifierEntry& entry = VerifierRegistry::builtin().lookup(kind_name(constraint.kind));
  RuleOutcome outcome = entry.verify(compile_rule(constraint), response);
  verdict.satisfied = outcome.satisfied;
  verdict.match_spans = std::move(outcome.match_spans);
  return verdict;
}

VerifierRegistry VerifierRegistry::with_builtin_kinds() {
  VerifierRegistry registry;
  for (ConstraintKind kind : kAllConstraintKinds) {
    registry.register_kind(std::string(kind_name(kind)), VerifierEntry{&builtin_verify, &locate_spans});
  }
  return registry;
}

const VerifierRegistry& VerifierRegistry::builtin() {
  static const VerifierRegistry registry = with_builtin_kinds();
  return registry;
}

void VerifierRegistry::register_kind(std::string kind, VerifierEntry entry) {
  entries_.insert_or_assign(std::move(kind), std::move(entry));
}

bool VerifierRegistry::contains(std::string_view kind) const { return entries_.find(kind) != entries_.end(); }

const VerifierEntry& VerifierRegistry::lookup(std::string_view kind) const {
  auto it = entries_.find(kind);
  if (it == entries_.end()) {
    throw Error(ErrorCode::kUnsupportedConstraint, "no verifier registered for '" + std::string(kind) + "'");
  }
  return it->second;
}

}  // namespace rtt
