#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rtt/error.hpp"
#include "rtt/rubric.hpp"

namespace rtt {

enum class AnnotationType { kAllRelevant, kAllIrrelevant, kPartialRelevant };

std::string_view annotation_name(AnnotationType type) noexcept;
AnnotationType parse_annotation(std::string_view name);

/// Per-token relevance of one constraint; p_t in [0, 1], zero off the valid mask.
struct RelevanceMap {
  std::string constraint_id;
  std::vector<double> probs;
};

struct TokenLabels {
  std::string constraint_id;
  std::vector<std::uint8_t> labels;
  AnnotationType type = AnnotationType::kAllIrrelevant;

  friend bool operator==(const TokenLabels&, const TokenLabels&) = default;
};

std::pair<Scope, Polarity> classify_constraint(const Constraint& constraint) noexcept;

/// The five taxonomy outcomes:
///   global                        -> all_relevant
///   local positive, satisfied     -> partial_relevant (fulfilling spans)
///   local positive, unsatisfied   -> all_irrelevant
///   local negative, violated      -> partial_relevant (violating spans)
///   local negative, satisfied     -> all_irrelevant
AnnotationType annotation_type_for(Scope scope, Polarity polarity, bool satisfied) noexcept;

/// A token is marked iff its byte range intersects a span. Tokens outside
/// the valid mask are never marked. Throws kRange for out-of-bounds spans.
std::vector<std::uint8_t> spans_to_token_mask(std::span<const Span> spans, const Response& response);

TokenLabels annotate_labels(const Constraint& constraint, const Response& response,
                            const ConstraintVerdict& verdict);

RelevanceMap oracle_relevance(const Constraint& constraint, const Response& response,
                              const ConstraintVerdict& verdict);

/// Half-open [start, end) token runs of ones; sorted, non-adjacent.
std::vector<std::pair<std::size_t, std::size_t>> encode_label_runs(std::span<const std::uint8_t> labels);
std::vector<std::uint8_t> decode_label_runs(std::span<const std::pair<std::size_t, std::size_t>> runs,
                                            std::size_t length);

inline constexpr double kProbClamp = 1e-7;

/// Mean binary cross-entropy over valid tokens, probabilities clamped to
/// [kProbClamp, 1 - kProbClamp]. Throws kEmptyMask when no token is valid.
double bce_loss(std::span<const double> probs, std::span<const std::uint8_t> labels,
                std::span<const std::uint8_t> valid_mask);

struct BceResult {
  double loss = 0.0;
  std::vector<double> grad_logits;
};

/// Same loss written over logits (p = sigmoid(s)), with its exact gradient.
BceResult bce_loss_with_logits(std::span<const double> logits, std::span<const std::uint8_t> labels,
                               std::span<const std::uint8_t> valid_mask);

// ---------------------------------------------------------------------------
// Toy tagger: logistic regression over fixed token features.
// ---------------------------------------------------------------------------

/// Feature layout (all binary):
///   0 token lies inside a located match of the constraint parameter
///   1 constraint has global scope
///   2 constraint has negative polarity
///   3 letter, 4 upper-case letter, 5 whitespace, 6 other printable,
///   7 empty byte range (end of sequence)
///   8..11 relative position quartile
inline constexpr std::size_t kTaggerFeatureCount = 12;
inline constexpr std::string_view kTaggerFeatureSet = "char-class-match-v1";

using TaggerFeatures = std::array<double, kTaggerFeatureCount>;

struct TaggerParams {
  std::array<double, kTaggerFeatureCount> weights{};
  double bias = 0.0;
  std::string feature_extractor = std::string(kTaggerFeatureSet);
};

std::vector<TaggerFeatures> tagger_features(const Constraint& constraint, const Response& response);

struct TaggerExample {
  std::string prompt;
  Constraint constraint;
  Response response;
  TokenLabels labels;
};

struct TaggerTrainConfig {
  int epochs = 300;
  double learning_rate = 0.5;
};

struct TaggerFit {
  TaggerParams params;
  std::vector<double> loss_history;
};

/// Thrown when the training loss stops being finite; carries the last
/// parameters that produced a finite loss.
class TaggerDivergence : public Error {
 public:
  TaggerDivergence(const std::string& message, TaggerParams last_finite)
      : Error(ErrorCode::kDivergence, message), last_finite_(std::move(last_finite)) {}
  const TaggerParams& last_finite() const noexcept { return last_finite_; }

 private:
  TaggerParams last_finite_;
};

/// Full-batch gradient descent on the mean per-example BCE.
TaggerFit train_tagger(std::span<const TaggerExample> dataset, const TaggerTrainConfig& config = {});

RelevanceMap tagger_relevance(const TaggerParams& params, const Constraint& constraint, const Response& response);

struct F1Counts {
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;

  double f1() const noexcept;
};

/// Accumulates token-level confusion counts at threshold 0.5 over valid tokens.
void accumulate_f1(F1Counts& counts, std::span<const double> probs, std::span<const std::uint8_t> labels,
                   std::span<const std::uint8_t> valid_mask);

// ---------------------------------------------------------------------------
// Negative samples
// ---------------------------------------------------------------------------

enum class NegativeStrategy { kMinimalModification, kConstraintOmission };

/// minimal-modification applies one rule-specific edit that flips the
/// verdict; constraint-omission re-composes a response from the rubric with
/// the constraint withheld. Throws kCannotCorrupt when no edit applies.
Response generate_negative(const Instruction& instruction, const Response& response, const Constraint& constraint,
                           NegativeStrategy strategy, std::uint64_t seed);

}  // namespace rtt
