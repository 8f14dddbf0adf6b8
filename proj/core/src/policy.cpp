#include "rtt/policy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rtt/error.hpp"

namespace rtt {

namespace {

constexpr std::string_view kCharacters =
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ .,:;!?'-012";
static_assert(kCharacters.size() == kEosIndex);

constexpr std::array<int, 256> make_index_table() {
  std::array<int, 256> table{};
  for (auto& v : table) v = -1;
  for (std::size_t i = 0; i < kCharacters.size(); ++i) {
    table[static_cast<unsigned char>(kCharacters[i])] = static_cast<int>(i);
  }
  return table;
}

constexpr auto kIndexOf = make_index_table();

std::string constraint_signature(const Constraint& c) {
  std::string sig(kind_name(c.kind));
  sig += '|';
  sig += c.params.text;
  sig += '|' + std::to_string(c.params.min) + '|' + std::to_string(c.params.max);
  return sig;
}

}  // namespace

std::string_view vocab_characters() noexcept { return kCharacters; }

int vocab_index(TokenId token) {
  if (token == kEosToken) return kEosIndex;
  if (token >= 0 && token < 256 && kIndexOf[static_cast<std::size_t>(token)] >= 0) {
    return kIndexOf[static_cast<std::size_t>(token)];
  }
  throw Error(ErrorCode::kVocab, "token " + std::to_string(token) + " is not in the policy vocabulary");
}

TokenId vocab_token(int index) {
  if (index == kEosIndex) return kEosToken;
  if (index >= 0 && index < kEosIndex) return static_cast<TokenId>(static_cast<unsigned char>(kCharacters[index]));
  throw Error(ErrorCode::kVocab, "vocabulary index " + std::to_string(index) + " out of range");
}

std::vector<FeatureId> instruction_features(const Instruction& instruction) {
  std::vector<FeatureId> features{kBiasFeature};
  auto add = [&features](std::string_view text) {
    auto id = static_cast<FeatureId>(fnv1a64(text) & 0xffffffffULL);
    if (id == kBiasFeature) id = 1;
    if (std::find(features.begin(), features.end(), id) == features.end()) features.push_back(id);
  };
  for (const auto& c : instruction.rubric()) {
    add(kind_name(c.kind));
    add(constraint_signature(c));
  }
  return features;
}

std::uint64_t policy_key(FeatureId feature, std::span<const int> context) {
  std::uint64_t packed = 0;
  for (int c : context) packed = (packed << 7) | static_cast<std::uint64_t>(c & 0x7f);
  return (static_cast<std::uint64_t>(feature) << 32) | packed;
}

LogitRow& SparseRows::row(std::uint64_t key) {
  auto [it, inserted] = rows_.try_emplace(key);
  if (inserted) it->second.fill(0.0);
  return it->second;
}

const LogitRow* SparseRows::find(std::uint64_t key) const {
  auto it = rows_.find(key);
  return it == rows_.end() ? nullptr : &it->second;
}

void SparseRows::add_scaled(const SparseRows& other, double scale) {
  for (const auto& [key, src] : other.rows_) {
    LogitRow& dst = row(key);
    for (int v = 0; v < kVocabSize; ++v) dst[v] += scale * src[v];
  }
}

bool SparseRows::all_finite() const {
  for (const auto& [key, r] : rows_) {
    for (double v : r) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

void SparseRows::erase_feature(FeatureId feature) {
  std::erase_if(rows_, [feature](const auto& entry) { return key_feature(entry.first) == feature; });
}

std::vector<std::uint64_t> SparseRows::sorted_keys() const {
  std::vector<std::uint64_t> keys;
  keys.reserve(rows_.size());
  for (const auto& [key, r] : rows_) keys.push_back(key);
  std::sort(keys.begin(), keys.end());
  return keys;
}

PolicyParams::PolicyParams(int context_length) : context_length_(context_length) {
  if (context_length < 0 || context_length > kMaxContextLength) {
    throw Error(ErrorCode::kConfig, "context length must be in [0, " + std::to_string(kMaxContextLength) + "]");
  }
}

void PolicyParams::logits(std::span<const FeatureId> features, std::span<const int> context, LogitRow& out) const {
  out.fill(0.0);
  for (FeatureId f : features) {
    if (const LogitRow* r = table_.find(policy_key(f, context))) {
      for (int v = 0; v < kVocabSize; ++v) out[v] += (*r)[v];
    }
  }
}

void PolicyParams::context_at(std::span<const int> tokens, std::size_t t, std::span<int> context) const {
  const auto k = static_cast<std::size_t>(context_length_);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t back = k - j;
    context[j] = t >= back ? tokens[t - back] : kBosIndex;
  }
}

void log_softmax(const LogitRow& logits, LogitRow& out) noexcept {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (int v = 0; v < kVocabSize; ++v) z += std::exp(logits[v] - m);
  const double log_z = m + std::log(z);
  for (int v = 0; v < kVocabSize; ++v) out[v] = logits[v] - log_z;
}

PolicyParams fit_prior_policy(std::span<const std::string> corpus, int context_length, double smoothing) {
  PolicyParams policy(context_length);
  SparseRows counts;
  std::array<int, kMaxContextLength> ctx{};
  const std::span<int> context(ctx.data(), static_cast<std::size_t>(context_length));
  for (const auto& line : corpus) {
    std::vector<int> tokens;
    for (char c : line) tokens.push_back(vocab_index(static_cast<unsigned char>(c)));
    tokens.push_back(kEosIndex);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      policy.context_at(tokens, t, context);
      counts.row(policy_key(kBiasFeature, context))[tokens[t]] += 1.0;
    }
  }
  for (std::uint64_t key : counts.sorted_keys()) {
    const LogitRow& c = *counts.find(key);
    double total = 0.0;
    for (double v : c) total += v;
    LogitRow& row = policy.table().row(key);
    for (int v = 0; v < kVocabSize; ++v) {
      row[v] = std::log((c[v] + smoothing) / (total + smoothing * kVocabSize));
    }
  }
  return policy;
}

std::vector<int> policy_tokens(const Response& response) {
  std::vector<int> out;
  out.reserve(response.size());
  for (TokenId t : response.tokens()) out.push_back(vocab_index(t));
  return out;
}

std::vector<double> token_log_probs(const PolicyParams& policy, std::span<const FeatureId> features,
                                    std::span<const int> tokens) {
  std::vector<double> out(tokens.size());
  std::array<int, kMaxContextLength> ctx{};
  const std::span<int> context(ctx.data(), static_cast<std::size_t>(policy.context_length()));
  LogitRow logits;
  LogitRow logp;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    policy.context_at(tokens, t, context);
    policy.logits(features, context, logits);
    log_softmax(logits, logp);
    out[t] = logp[tokens[t]];
  }
  return out;
}

void accumulate_log_prob_grad(const PolicyParams& policy, std::span<const FeatureId> features,
                              std::span<const int> tokens, std::span<const double> weights, PolicyGradient& gradient) {
  if (weights.size() != tokens.size()) throw Error(ErrorCode::kDimension, "one weight per token is required");
  std::array<int, kMaxContextLength> ctx{};
  const std::span<int> context(ctx.data(), static_cast<std::size_t>(policy.context_length()));
  LogitRow logits;
  LogitRow logp;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const double w = weights[t];
    if (w == 0.0) continue;
    policy.context_at(tokens, t, context);
    policy.logits(features, context, logits);
    log_softmax(logits, logp);
    for (FeatureId f : features) {
      LogitRow& g = gradient.row(policy_key(f, context));
      for (int v = 0; v < kVocabSize; ++v) g[v] -= w * std::exp(logp[v]);
      g[tokens[t]] += w;
    }
  }
}

LogProbResult log_prob_and_grad(const PolicyParams& policy, const Response& response, const Instruction& instruction) {
  const auto features = instruction_features(instruction);
  const auto tokens = policy_tokens(response);
  LogProbResult result;
  result.log_probs = token_log_probs(policy, features, tokens);
  const std::vector<double> ones(tokens.size(), 1.0);
  accumulate_log_prob_grad(policy, features, tokens, ones, result.gradient);
  return result;
}

Response response_from_policy_tokens(std::span<const int> tokens) {
  std::string text;
  bool eos = false;
  for (int v : tokens) {
    if (v == kEosIndex) {
      eos = true;
      break;
    }
    text.push_back(static_cast<char>(vocab_token(v)));
  }
  return Response::from_text(std::move(text), eos);
}

namespace {

template <typename Pick>
Rollout decode(const PolicyParams& policy, std::span<const FeatureId> features, std::size_t max_len, Pick&& pick) {
  Rollout out;
  std::array<int, kMaxContextLength> ctx{};
  const std::span<int> context(ctx.data(), static_cast<std::size_t>(policy.context_length()));
  LogitRow logits;
  LogitRow logp;
  for (std::size_t t = 0; t < max_len; ++t) {
    policy.context_at(out.tokens, t, context);
    policy.logits(features, context, logits);
    log_softmax(logits, logp);
    const int v = pick(logp);
    out.tokens.push_back(v);
    out.old_log_probs.push_back(logp[v]);
    if (v == kEosIndex) break;
  }
  out.response = response_from_policy_tokens(out.tokens);
  return out;
}

}  // namespace

Rollout sample_response(const PolicyParams& policy, std::span<const FeatureId> features, std::size_t max_len, Rng& rng) {
  return decode(policy, features, max_len, [&rng](const LogitRow& logp) {
    const double u = rng.uniform();
    double cumulative = 0.0;
    for (int v = 0; v < kVocabSize; ++v) {
      cumulative += std::exp(logp[v]);
      if (u < cumulative) return v;
    }
    return kVocabSize - 1;
  });
}

Rollout greedy_response(const PolicyParams& policy, std::span<const FeatureId> features, std::size_t max_len) {
  return decode(policy, features, max_len, [](const LogitRow& logp) {
    return static_cast<int>(std::max_element(logp.begin(), logp.end()) - logp.begin());
  });
}

}  // namespace rtt
