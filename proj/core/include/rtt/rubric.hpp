#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rtt {

enum class ConstraintKind {
  kAllCaps,
  kStartsWith,
  kEndsWith,
  kForbiddenWord,
  kRequiredWord,
  kMaxLength,
  kMinLength,
  kWordCountRange,
  kStatementPresent,
};

enum class Hardness { kHard, kSoft };
enum class Scope { kGlobal, kLocal };
enum class Polarity { kPositive, kNegative };

inline constexpr ConstraintKind kAllConstraintKinds[] = {
    ConstraintKind::kAllCaps,       ConstraintKind::kStartsWith,
    ConstraintKind::kEndsWith,      ConstraintKind::kForbiddenWord,
    ConstraintKind::kRequiredWord,  ConstraintKind::kMaxLength,
    ConstraintKind::kMinLength,     ConstraintKind::kWordCountRange,
    ConstraintKind::kStatementPresent,
};

std::string_view kind_name(ConstraintKind kind) noexcept;
/// Throws kUnsupportedConstraint for unknown names.
ConstraintKind parse_kind(std::string_view name);

std::string_view hardness_name(Hardness hardness) noexcept;
Hardness parse_hardness(std::string_view name);
std::string_view scope_name(Scope scope) noexcept;
std::string_view polarity_name(Polarity polarity) noexcept;

/// Row of the annotation taxonomy: every kind has exactly one classification.
struct KindTaxonomy {
  Scope scope;
  Polarity polarity;
  Hardness hardness;
};

KindTaxonomy taxonomy_of(ConstraintKind kind) noexcept;

/// Kind-specific parameters. `text` holds the word, prefix, suffix or
/// statement; `min`/`max` hold length and word-count bounds.
struct ConstraintParams {
  std::string text;
  std::vector<std::string> contradictions;
  std::int64_t min = 0;
  std::int64_t max = 0;

  friend bool operator==(const ConstraintParams&, const ConstraintParams&) = default;
};

struct Constraint {
  std::string id;
  ConstraintKind kind = ConstraintKind::kAllCaps;
  ConstraintParams params;
  Hardness hardness = Hardness::kHard;
  Scope scope = Scope::kGlobal;
  Polarity polarity = Polarity::kPositive;

  friend bool operator==(const Constraint&, const Constraint&) = default;
};

/// Builds a constraint with scope, polarity and hardness taken from the
/// taxonomy, then validates it.
Constraint make_constraint(std::string id, ConstraintKind kind, ConstraintParams params = {});

/// Throws kInvalidConstraint when the stored classification disagrees with
/// the taxonomy or required params are missing.
void validate_constraint(const Constraint& constraint);

class Instruction {
 public:
  /// Rejects empty rubrics and duplicate constraint ids (kPrecondition).
  Instruction(std::string id, std::string task_text, std::vector<Constraint> rubric);

  const std::string& id() const noexcept { return id_; }
  const std::string& task_text() const noexcept { return task_text_; }
  const std::vector<Constraint>& rubric() const noexcept { return rubric_; }

  const Constraint* find(std::string_view constraint_id) const noexcept;
  bool contains(const Constraint& constraint) const noexcept;

  friend bool operator==(const Instruction&, const Instruction&) = default;

 private:
  std::string id_;
  std::string task_text_;
  std::vector<Constraint> rubric_;
};

/// Half-open byte range [begin, end).
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool empty() const noexcept { return begin == end; }
  friend bool operator==(const Span&, const Span&) = default;
};

using TokenId = std::int32_t;

/// Character-level tokens are byte values; the end-of-sequence token sits
/// outside the byte range and owns an empty byte range at the end of text.
inline constexpr TokenId kEosToken = 256;

class Response {
 public:
  Response() = default;

  /// Validates the offset/mask invariants (kPrecondition on violation).
  Response(std::string text, std::vector<TokenId> tokens, std::vector<Span> byte_offsets,
           std::vector<std::uint8_t> valid_mask);

  /// One token per byte, all valid; optionally a trailing EOS token.
  static Response from_text(std::string text, bool terminated_by_eos = false);

  const std::string& text() const noexcept { return text_; }
  const std::vector<TokenId>& tokens() const noexcept { return tokens_; }
  const std::vector<Span>& byte_offsets() const noexcept { return offsets_; }
  const std::vector<std::uint8_t>& valid_mask() const noexcept { return valid_; }

  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t valid_count() const noexcept;
  bool terminated_by_eos() const noexcept;

  friend bool operator==(const Response&, const Response&) = default;

 private:
  std::string text_;
  std::vector<TokenId> tokens_;
  std::vector<Span> offsets_;
  std::vector<std::uint8_t> valid_;
};

struct ConstraintVerdict {
  std::string constraint_id;
  bool satisfied = false;
  std::vector<Span> match_spans;

  friend bool operator==(const ConstraintVerdict&, const ConstraintVerdict&) = default;
};

/// One verdict per rubric constraint, in rubric order.
using VerificationResult = std::vector<ConstraintVerdict>;

/// Hard constraints go to the rule verifier registry, soft ones to the
/// oracle judge.
ConstraintVerdict evaluate_constraint(const Instruction& instruction, const Response& response,
                                      const Constraint& constraint);

VerificationResult verify_rubric(const Instruction& instruction, const Response& response);

int score_aon(const Instruction& instruction, const Response& response);
double score_csr(const Instruction& instruction, const Response& response);

int score_aon(std::span<const ConstraintVerdict> verdicts);
double score_csr(std::span<const ConstraintVerdict> verdicts);

/// Maps the satisfaction indicator onto {-1, +1}.
constexpr double signed_score(bool satisfied) noexcept { return satisfied ? 1.0 : -1.0; }

}  // namespace rtt
