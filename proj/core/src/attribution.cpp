#include "rtt/attribution.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "rtt/composer.hpp"
#include "rtt/random.hpp"
#include "rtt/verifiers.hpp"

namespace rtt {

namespace {

void require_same_length(std::size_t a, std::size_t b, std::size_t c) {
  if (a != b || a != c) throw Error(ErrorCode::kDimension, "probabilities, labels and mask differ in length");
}

double sigmoid(double s) noexcept {
  if (s >= 0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

// log(1 + exp(s)) without overflow.
double softplus(double s) noexcept { return s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s)); }

}  // namespace

std::string_view annotation_name(AnnotationType type) noexcept {
  switch (type) {
    case AnnotationType::kAllRelevant: return "all_relevant";
    case AnnotationType::kAllIrrelevant: return "all_irrelevant";
    case AnnotationType::kPartialRelevant: return "partial_relevant";
  }
  return "unknown";
}

AnnotationType parse_annotation(std::string_view name) {
  if (name == "all_relevant") return AnnotationType::kAllRelevant;
  if (name == "all_irrelevant") return AnnotationType::kAllIrrelevant;
  if (name == "partial_relevant") return AnnotationType::kPartialRelevant;
  throw Error(ErrorCode::kParse, "unknown annotation type '" + std::string(name) + "'");
}

std::pair<Scope, Polarity> classify_constraint(const Constraint& constraint) noexcept {
  const KindTaxonomy tax = taxonomy_of(constraint.kind);
  return {tax.scope, tax.polarity};
}

AnnotationType annotation_type_for(Scope scope, Polarity polarity, bool satisfied) noexcept {
  if (scope == Scope::kGlobal) return AnnotationType::kAllRelevant;
  if (polarity == Polarity::kPositive) {
    return satisfied ? AnnotationType::kPartialRelevant : AnnotationType::kAllIrrelevant;
  }
  return satisfied ? AnnotationType::kAllIrrelevant : AnnotationType::kPartialRelevant;
}

std::vector<std::uint8_t> spans_to_token_mask(std::span<const Span> spans, const Response& response) {
  const std::size_t len = response.text().size();
  for (const auto& s : spans) {
    if (s.begin > s.end || s.end > len) {
      throw Error(ErrorCode::kRange, "span [" + std::to_string(s.begin) + ", " + std::to_string(s.end) +
                                         ") outside text of length " + std::to_string(len));
    }
  }
  const auto& offsets = response.byte_offsets();
  const auto& valid = response.valid_mask();
  std::vector<std::uint8_t> mask(offsets.size(), 0);
  for (std::size_t t = 0; t < offsets.size(); ++t) {
    if (valid[t] == 0) continue;
    for (const auto& s : spans) {
      if (offsets[t].begin < s.end && s.begin < offsets[t].end) {
        mask[t] = 1;
        break;
      }
    }
  }
  return mask;
}

TokenLabels annotate_labels(const Constraint& constraint, const Response& response,
                            const ConstraintVerdict& verdict) {
  if (verdict.constraint_id != constraint.id) {
    throw Error(ErrorCode::kPrecondition,
                "verdict for '" + verdict.constraint_id + "' used to annotate '" + constraint.id + "'");
  }
  const auto [scope, polarity] = classify_constraint(constraint);
  TokenLabels out{constraint.id, {}, annotation_type_for(scope, polarity, verdict.satisfied)};
  switch (out.type) {
    case AnnotationType::kAllRelevant:
      out.labels = response.valid_mask();
      break;
    case AnnotationType::kAllIrrelevant:
      out.labels.assign(response.size(), 0);
      break;
    case AnnotationType::kPartialRelevant: {
      if (verdict.match_spans.empty()) {
        throw Error(ErrorCode::kAnnotationInconsistency,
                    "partial_relevant annotation for '" + constraint.id + "' has no spans");
      }
      out.labels = spans_to_token_mask(verdict.match_spans, response);
      if (std::none_of(out.labels.begin(), out.labels.end(), [](std::uint8_t l) { return l != 0; })) {
        throw Error(ErrorCode::kAnnotationInconsistency,
                    "partial_relevant spans for '" + constraint.id + "' cover no valid token");
      }
      break;
    }
  }
  return out;
}

RelevanceMap oracle_relevance(const Constraint& constraint, const Response& response,
                              const ConstraintVerdict& verdict) {
  const TokenLabels labels = annotate_labels(constraint, response, verdict);
  RelevanceMap map{constraint.id, std::vector<double>(labels.labels.size(), 0.0)};
  for (std::size_t t = 0; t < labels.labels.size(); ++t) map.probs[t] = labels.labels[t] != 0 ? 1.0 : 0.0;
  return map;
}

std::vector<std::pair<std::size_t, std::size_t>> encode_label_runs(std::span<const std::uint8_t> labels) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  std::size_t t = 0;
  while (t < labels.size()) {
    if (labels[t] == 0) {
      ++t;
      continue;
    }
    const std::size_t start = t;
    while (t < labels.size() && labels[t] != 0) ++t;
    runs.emplace_back(start, t);
  }
  return runs;
}

std::vector<std::uint8_t> decode_label_runs(std::span<const std::pair<std::size_t, std::size_t>> runs,
                                            std::size_t length) {
  std::vector<std::uint8_t> labels(length, 0);
  std::size_t previous_end = 0;
  bool first = true;
  for (const auto& [start, end] : runs) {
    if (start >= end || end > length || (!first && start <= previous_end)) {
      throw Error(ErrorCode::kParse, "label runs must be sorted, non-empty, non-adjacent and in range");
    }
    std::fill(labels.begin() + static_cast<std::ptrdiff_t>(start), labels.begin() + static_cast<std::ptrdiff_t>(end),
              std::uint8_t{1});
    previous_end = end;
    first = false;
  }
  return labels;
}

double bce_loss(std::span<const double> probs, std::span<const std::uint8_t> labels,
                std::span<const std::uint8_t> valid_mask) {
  require_same_length(probs.size(), labels.size(), valid_mask.size());
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < probs.size(); ++t) {
    if (valid_mask[t] == 0) continue;
    const double p = std::clamp(probs[t], kProbClamp, 1.0 - kProbClamp);
    sum += labels[t] != 0 ? std::log(p) : std::log(1.0 - p);
    ++count;
  }
  if (count == 0) throw Error(ErrorCode::kEmptyMask, "BCE over an empty valid set");
  return -sum / static_cast<double>(count);
}

BceResult bce_loss_with_logits(std::span<const double> logits, std::span<const std::uint8_t> labels,
                               std::span<const std::uint8_t> valid_mask) {
  require_same_length(logits.size(), labels.size(), valid_mask.size());
  BceResult result{0.0, std::vector<double>(logits.size(), 0.0)};
  std::size_t count = 0;
  for (std::size_t t = 0; t < logits.size(); ++t) count += valid_mask[t] != 0 ? 1 : 0;
  if (count == 0) throw Error(ErrorCode::kEmptyMask, "BCE over an empty valid set");
  const double inv = 1.0 / static_cast<double>(count);
  for (std::size_t t = 0; t < logits.size(); ++t) {
    if (valid_mask[t] == 0) continue;
    const double s = logits[t];
    const double l = labels[t] != 0 ? 1.0 : 0.0;
    // -[l log sigma(s) + (1 - l) log(1 - sigma(s))] = softplus(s) - l s
    result.loss += (softplus(s) - l * s) * inv;
    result.grad_logits[t] = (sigmoid(s) - l) * inv;
  }
  return result;
}

std::vector<TaggerFeatures> tagger_features(const Constraint& constraint, const Response& response) {
  const auto located = locate_spans(compile_rule(constraint), response);
  const auto in_match = spans_to_token_mask(located, response);
  const auto [scope, polarity] = classify_constraint(constraint);
  const std::string& text = response.text();
  const auto& offsets = response.byte_offsets();
  const std::size_t n = offsets.size();
  std::vector<TaggerFeatures> features(n);
  for (std::size_t t = 0; t < n; ++t) {
    TaggerFeatures& f = features[t];
    f.fill(0.0);
    f[0] = in_match[t] != 0 && scope == Scope::kLocal ? 1.0 : 0.0;
    f[1] = scope == Scope::kGlobal ? 1.0 : 0.0;
    f[2] = polarity == Polarity::kNegative ? 1.0 : 0.0;
    if (offsets[t].empty()) {
      f[7] = 1.0;
    } else {
      const auto c = static_cast<unsigned char>(text[offsets[t].begin]);
      if (std::isalpha(c) != 0) {
        f[3] = 1.0;
        f[4] = std::isupper(c) != 0 ? 1.0 : 0.0;
      } else if (std::isspace(c) != 0) {
        f[5] = 1.0;
      } else {
        f[6] = 1.0;
      }
    }
    f[8 + std::min<std::size_t>(3, (4 * t) / n)] = 1.0;
  }
  return features;
}

namespace {

double logit_of(const TaggerParams& params, const TaggerFeatures& x) noexcept {
  double s = params.bias;
  for (std::size_t k = 0; k < kTaggerFeatureCount; ++k) s += params.weights[k] * x[k];
  return s;
}

bool finite_params(const TaggerParams& p) {
  return std::isfinite(p.bias) && std::all_of(p.weights.begin(), p.weights.end(), [](double w) { return std::isfinite(w); });
}

}  // namespace

TaggerFit train_tagger(std::span<const TaggerExample> dataset, const TaggerTrainConfig& config) {
  if (dataset.empty()) throw Error(ErrorCode::kPrecondition, "tagger dataset is empty");
  struct Prepared {
    std::vector<TaggerFeatures> features;
    const TaggerExample* example;
  };
  std::vector<Prepared> prepared;
  prepared.reserve(dataset.size());
  for (const auto& ex : dataset) {
    if (ex.labels.labels.size() != ex.response.size()) {
      throw Error(ErrorCode::kDimension, "labels do not match response length");
    }
    if (ex.response.valid_count() == 0) continue;
    prepared.push_back({tagger_features(ex.constraint, ex.response), &ex});
  }
  if (prepared.empty()) throw Error(ErrorCode::kEmptyMask, "no example has a valid token");

  TaggerFit fit;
  TaggerParams last_finite = fit.params;
  const double inv_examples = 1.0 / static_cast<double>(prepared.size());
  std::vector<double> logits;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double loss = 0.0;
    std::array<double, kTaggerFeatureCount> grad_w{};
    double grad_b = 0.0;
    for (const auto& item : prepared) {
      logits.resize(item.features.size());
      for (std::size_t t = 0; t < item.features.size(); ++t) logits[t] = logit_of(fit.params, item.features[t]);
      const BceResult bce =
          bce_loss_with_logits(logits, item.example->labels.labels, item.example->response.valid_mask());
      loss += bce.loss * inv_examples;
      for (std::size_t t = 0; t < item.features.size(); ++t) {
        const double g = bce.grad_logits[t] * inv_examples;
        if (g == 0.0) continue;
        grad_b += g;
        for (std::size_t k = 0; k < kTaggerFeatureCount; ++k) grad_w[k] += g * item.features[t][k];
      }
    }
    if (!std::isfinite(loss)) {
      throw TaggerDivergence("tagger loss became non-finite at epoch " + std::to_string(epoch), last_finite);
    }
    last_finite = fit.params;
    fit.loss_history.push_back(loss);
    fit.params.bias -= config.learning_rate * grad_b;
    for (std::size_t k = 0; k < kTaggerFeatureCount; ++k) fit.params.weights[k] -= config.learning_rate * grad_w[k];
    if (!finite_params(fit.params)) {
      throw TaggerDivergence("tagger parameters became non-finite at epoch " + std::to_string(epoch), last_finite);
    }
  }
  return fit;
}

RelevanceMap tagger_relevance(const TaggerParams& params, const Constraint& constraint, const Response& response) {
  const auto features = tagger_features(constraint, response);
  const auto& valid = response.valid_mask();
  RelevanceMap map{constraint.id, std::vector<double>(features.size(), 0.0)};
  for (std::size_t t = 0; t < features.size(); ++t) {
    if (valid[t] != 0) map.probs[t] = sigmoid(logit_of(params, features[t]));
  }
  return map;
}

double F1Counts::f1() const noexcept {
  const double denom = 2.0 * static_cast<double>(true_positive) + static_cast<double>(false_positive) +
                       static_cast<double>(false_negative);
  return denom == 0.0 ? 1.0 : 2.0 * static_cast<double>(true_positive) / denom;
}

void accumulate_f1(F1Counts& counts, std::span<const double> probs, std::span<const std::uint8_t> labels,
                   std::span<const std::uint8_t> valid_mask) {
  require_same_length(probs.size(), labels.size(), valid_mask.size());
  for (std::size_t t = 0; t < probs.size(); ++t) {
    if (valid_mask[t] == 0) continue;
    const bool predicted = probs[t] >= 0.5;
    const bool actual = labels[t] != 0;
    if (predicted && actual) ++counts.true_positive;
    if (predicted && !actual) ++counts.false_positive;
    if (!predicted && actual) ++counts.false_negative;
  }
}

// ---------------------------------------------------------------------------

namespace {

struct Word {
  std::size_t begin;
  std::size_t end;
};

std::vector<Word> split_words(std::string_view text) {
  std::vector<Word> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i])) != 0) ++i;
    if (i >= text.size()) break;
    const std::size_t start = i;
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i])) == 0) ++i;
    words.push_back({start, i});
  }
  return words;
}

// Removes [begin, end) together with one adjacent space so the remaining
// text keeps single spacing.
std::string erase_with_space(const std::string& text, std::size_t begin, std::size_t end) {
  if (end < text.size() && text[end] == ' ') {
    ++end;
  } else if (begin > 0 && text[begin - 1] == ' ') {
    --begin;
  }
  return text.substr(0, begin) + text.substr(end);
}

std::string filler_padding(Rng& rng, std::size_t count) {
  const auto words = filler_words();
  std::string pad;
  while (pad.size() < count) {
    pad.push_back(' ');
    pad += words[rng.index(words.size())];
  }
  pad.resize(count);
  return pad;
}

std::string minimally_modify(const Constraint& c, const std::string& text, Rng& rng) {
  const auto& p = c.params;
  switch (c.kind) {
    case ConstraintKind::kAllCaps: {
      std::vector<Word> candidates;
      for (const auto& w : split_words(text)) {
        bool has_alpha = false;
        for (std::size_t i = w.begin; i < w.end; ++i) has_alpha |= std::isalpha(static_cast<unsigned char>(text[i])) != 0;
        if (has_alpha) candidates.push_back(w);
      }
      if (candidates.empty()) throw Error(ErrorCode::kCannotCorrupt, "no alphabetic word to lowercase");
      const Word w = candidates[rng.index(candidates.size())];
      std::string out = text;
      for (std::size_t i = w.begin; i < w.end; ++i) {
        out[i] = static_cast<char>(std::tolower(static_cast<unsigned char>(out[i])));
      }
      return out;
    }
    case ConstraintKind::kStartsWith: {
      std::string out = text.substr(p.text.size());
      if (!out.empty() && out.front() == ' ') out.erase(0, 1);
      return out;
    }
    case ConstraintKind::kEndsWith: {
      std::string out = text.substr(0, text.size() - p.text.size());
      if (!out.empty() && out.back() == ' ') out.pop_back();
      return out;
    }
    case ConstraintKind::kForbiddenWord: {
      const auto words = split_words(text);
      const std::size_t slot = rng.index(words.size() + 1);
      if (slot == words.size()) return text.empty() ? p.text : text + " " + p.text;
      return text.substr(0, words[slot].begin) + p.text + " " + text.substr(words[slot].begin);
    }
    case ConstraintKind::kRequiredWord: {
      auto spans = locate_spans(compile_rule(c), Response::from_text(text));
      std::string out = text;
      for (auto it = spans.rbegin(); it != spans.rend(); ++it) out = erase_with_space(out, it->begin, it->end);
      return out;
    }
    case ConstraintKind::kMaxLength: {
      const auto target = static_cast<std::size_t>(p.max) + 1;
      return text.size() >= target ? text : text + filler_padding(rng, target - text.size());
    }
    case ConstraintKind::kMinLength:
      return text.substr(0, static_cast<std::size_t>(p.min - 1));
    case ConstraintKind::kWordCountRange: {
      std::string out = text;
      const auto words = static_cast<std::int64_t>(count_words(text));
      const auto pool = filler_words();
      for (std::int64_t i = words; i <= p.max; ++i) {
        if (!out.empty()) out.push_back(' ');
        out += pool[rng.index(pool.size())];
      }
      return out;
    }
    case ConstraintKind::kStatementPresent: {
      const auto spans = locate_spans(compile_rule(c), Response::from_text(text));
      std::string out = text;
      for (auto it = spans.rbegin(); it != spans.rend(); ++it) {
        if (!p.contradictions.empty()) {
          out = out.substr(0, it->begin) + p.contradictions.front() + out.substr(it->end);
        } else {
          out = erase_with_space(out, it->begin, it->end);
        }
      }
      return out;
    }
  }
  throw Error(ErrorCode::kCannotCorrupt, "no edit for kind");
}

}  // namespace

Response generate_negative(const Instruction& instruction, const Response& response, const Constraint& constraint,
                           NegativeStrategy strategy, std::uint64_t seed) {
  if (!instruction.contains(constraint)) {
    throw Error(ErrorCode::kPrecondition, "constraint '" + constraint.id + "' not in instruction rubric");
  }
  if (strategy == NegativeStrategy::kConstraintOmission) {
    std::vector<Constraint> rest;
    for (const auto& c : instruction.rubric()) {
      if (c.id != constraint.id) rest.push_back(c);
    }
    Rng rng(derive_seed(seed, "constraint-omission"));
    auto text = compose_with_retries(rest, rng);
    if (!text) throw Error(ErrorCode::kCannotCorrupt, "composer failed for the reduced rubric");
    return Response::from_text(std::move(*text), response.terminated_by_eos());
  }

  if (!check_constraint(constraint, response).satisfied) {
    throw Error(ErrorCode::kPrecondition, "minimal modification needs a response satisfying '" + constraint.id + "'");
  }
  Rng rng(derive_seed(seed, "minimal-modification"));
  std::string edited = minimally_modify(constraint, response.text(), rng);
  Response out = Response::from_text(std::move(edited), response.terminated_by_eos());
  if (check_constraint(constraint, out).satisfied) {
    throw Error(ErrorCode::kCannotCorrupt, "edit did not flip '" + constraint.id + "'");
  }
  return out;
}

}  // namespace rtt
