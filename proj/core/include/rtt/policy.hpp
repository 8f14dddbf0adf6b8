#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rtt/random.hpp"
#include "rtt/rubric.hpp"

namespace rtt {

// Vocabulary: 64 printable characters followed by end-of-sequence. The
// begin-of-sequence index only pads contexts and is never sampled.
inline constexpr int kVocabSize = 65;
inline constexpr int kEosIndex = 64;
inline constexpr int kBosIndex = 65;
inline constexpr int kMaxContextLength = 4;

std::string_view vocab_characters() noexcept;
/// Throws kVocab for tokens outside the vocabulary.
int vocab_index(TokenId token);
TokenId vocab_token(int index);

using FeatureId = std::uint32_t;
/// Always-active feature carrying the instruction-independent language prior.
inline constexpr FeatureId kBiasFeature = 0;

/// Bias feature followed by one feature per rubric constraint, derived from
/// its kind and parameters so equal constraints share parameters across
/// instructions.
std::vector<FeatureId> instruction_features(const Instruction& instruction);

using LogitRow = std::array<double, kVocabSize>;

/// Packs (feature, context) into a table key.
std::uint64_t policy_key(FeatureId feature, std::span<const int> context);
constexpr FeatureId key_feature(std::uint64_t key) noexcept { return static_cast<FeatureId>(key >> 32); }

/// Sparse map from table key to a logit-sized row.
class SparseRows {
 public:
  LogitRow& row(std::uint64_t key);
  const LogitRow* find(std::uint64_t key) const;
  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }

  /// this += scale * other. Keys are independent, so visiting order does not
  /// affect the result.
  void add_scaled(const SparseRows& other, double scale);
  bool all_finite() const;
  /// Drops every row owned by `feature`.
  void erase_feature(FeatureId feature);
  std::vector<std::uint64_t> sorted_keys() const;

  auto begin() const { return rows_.begin(); }
  auto end() const { return rows_.end(); }

  friend bool operator==(const SparseRows&, const SparseRows&) = default;

 private:
  std::unordered_map<std::uint64_t, LogitRow> rows_;
};

using PolicyGradient = SparseRows;

/// Table-based k-gram softmax policy. The logits at a position are the sum of
/// the rows of every active instruction feature at the current context (the
/// last k tokens, padded with BOS). Missing rows are zero.
class PolicyParams {
 public:
  explicit PolicyParams(int context_length = 2);

  int context_length() const noexcept { return context_length_; }

  void logits(std::span<const FeatureId> features, std::span<const int> context, LogitRow& out) const;

  /// Fills `context` (size context_length) for position t of `tokens`.
  void context_at(std::span<const int> tokens, std::size_t t, std::span<int> context) const;

  LogitRow& row(FeatureId feature, std::span<const int> context) { return table_.row(policy_key(feature, context)); }
  const SparseRows& table() const noexcept { return table_; }
  SparseRows& table() noexcept { return table_; }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  int context_length_;
  SparseRows table_;
};

/// log-softmax of a logit row.
void log_softmax(const LogitRow& logits, LogitRow& out) noexcept;

/// Add-`smoothing` trigram-style fit of the bias feature on a text corpus.
PolicyParams fit_prior_policy(std::span<const std::string> corpus, int context_length, double smoothing);

/// Vocabulary indices of a response (EOS included when present).
std::vector<int> policy_tokens(const Response& response);

struct LogProbResult {
  std::vector<double> log_probs;
  PolicyGradient gradient;
};

/// Exact per-token log-probabilities and the gradient of their sum.
LogProbResult log_prob_and_grad(const PolicyParams& policy, const Response& response, const Instruction& instruction);

/// gradient += sum_t weights[t] * d log pi(tokens[t]) / d theta, skipping zero weights.
void accumulate_log_prob_grad(const PolicyParams& policy, std::span<const FeatureId> features,
                              std::span<const int> tokens, std::span<const double> weights, PolicyGradient& gradient);

std::vector<double> token_log_probs(const PolicyParams& policy, std::span<const FeatureId> features,
                                    std::span<const int> tokens);

struct Rollout {
  Response response;
  std::vector<int> tokens;
  std::vector<double> old_log_probs;
};

/// Ancestral sample at temperature 1; stops at EOS or after max_len tokens.
Rollout sample_response(const PolicyParams& policy, std::span<const FeatureId> features, std::size_t max_len, Rng& rng);

/// Argmax decoding (lowest index wins ties).
Rollout greedy_response(const PolicyParams& policy, std::span<const FeatureId> features, std::size_t max_len);

/// Builds the response object for a token sequence (EOS maps to an empty span).
Response response_from_policy_tokens(std::span<const int> tokens);

}  // namespace rtt
