#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rtt/rubric.hpp"

namespace rtt {

/// Compiled matcher state for one constraint. Word needles are stored
/// lower-cased; statement needles and contradictions are stored folded.
struct RuleSpec {
  ConstraintKind kind = ConstraintKind::kAllCaps;
  std::string needle;
  std::vector<std::string> contradictions;
  std::int64_t min = 0;
  std::int64_t max = 0;
};

RuleSpec compile_rule(const Constraint& constraint);

struct RuleOutcome {
  bool satisfied = false;
  std::vector<Span> match_spans;
};

struct JudgeDecision {
  bool satisfied = false;
  std::vector<Span> evidence_spans;
};

/// All non-overlapping occurrences of the relevant text, leftmost first.
/// Global kinds report the whole text (when non-empty).
std::vector<Span> locate_spans(const RuleSpec& spec, const Response& response);

/// Judges one constraint in isolation (rule verifier or soft judge).
ConstraintVerdict check_constraint(const Constraint& constraint, const Response& response);

/// Positive kinds report the fulfilling spans when satisfied (none otherwise);
/// negative kinds report the violating spans.
RuleOutcome verify_rule(const RuleSpec& spec, const Response& response);

/// Deterministic stand-in for a semantic judge: folded-substring containment
/// of the statement, overridden by any registered contradiction.
JudgeDecision judge_soft(const Constraint& constraint, const Response& response);

/// Case- and punctuation-folded view of a text with a map back to bytes.
struct FoldedText {
  std::string text;
  std::vector<std::size_t> origin;
};

FoldedText fold_text(std::string_view text);

std::size_t count_words(std::string_view text) noexcept;

struct VerifierEntry {
  std::function<RuleOutcome(const RuleSpec&, const Response&)> verify;
  std::function<std::vector<Span>(const RuleSpec&, const Response&)> locate;
};

/// Verifier table keyed by kind string.
class VerifierRegistry {
 public:
  static VerifierRegistry with_builtin_kinds();
  static const VerifierRegistry& builtin();

  void register_kind(std::string kind, VerifierEntry entry);
  bool contains(std::string_view kind) const;
  /// Throws kUnsupportedConstraint for unknown kinds.
  const VerifierEntry& lookup(std::string_view kind) const;

 private:
  std::map<std::string, VerifierEntry, std::less<>> entries_;
};

}  // namespace rtt
