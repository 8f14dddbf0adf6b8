#include "rtt/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "rtt/composer.hpp"
#include "rtt/error.hpp"
#include "rtt/verifiers.hpp"

namespace rtt {

void ClipConfig::validate() const {
  if (!(low > 0.0 && low < 1.0) || !(high > 0.0 && high < 1.0)) {
    throw Error(ErrorCode::kConfig, "clip bounds must lie in (0, 1)");
  }
}

SampledGroup sample_rollouts(const PolicyParams& policy, const Instruction& instruction, std::size_t group_size,
                             std::size_t max_len, std::uint64_t seed) {
  if (group_size < 2) throw Error(ErrorCode::kPrecondition, "group size must be at least 2");
  if (max_len < 1) throw Error(ErrorCode::kPrecondition, "max_len must be at least 1");
  SampledGroup group;
  group.instruction_id = instruction.id();
  group.features = instruction_features(instruction);
  group.rollouts.reserve(group_size);
  for (std::size_t g = 0; g < group_size; ++g) {
    Rng rng(derive_seed(seed, g));
    group.rollouts.push_back(sample_response(policy, group.features, max_len, rng));
  }
  return group;
}

SurrogateResult rtt_grpo_loss(const PolicyParams& policy, const SampledGroup& group, const AdvantageBundle& advantages,
                              const ClipConfig& clip) {
  clip.validate();
  if (advantages.sum.size() != group.rollouts.size()) {
    throw Error(ErrorCode::kDimension, "advantages do not match the rollout group");
  }
  SurrogateResult result;
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const Rollout& r = group.rollouts[i];
    if (advantages.sum[i].size() != r.tokens.size() || r.old_log_probs.size() != r.tokens.size()) {
      throw Error(ErrorCode::kDimension, "advantages or old log-probs do not match rollout length");
    }
    result.tokens += r.tokens.size();
  }
  if (result.tokens == 0) return result;
  const double inv_tokens = 1.0 / static_cast<double>(result.tokens);

  std::size_t clipped = 0;
  std::vector<double> weights;
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const Rollout& r = group.rollouts[i];
    const auto log_probs = token_log_probs(policy, group.features, r.tokens);
    weights.assign(r.tokens.size(), 0.0);
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      const double a = advantages.sum[i][t];
      const double ratio = std::exp(log_probs[t] - r.old_log_probs[t]);
      if (!std::isfinite(ratio)) throw Error(ErrorCode::kOverflow, "importance ratio is not finite");
      const double bounded = std::clamp(ratio, 1.0 - clip.low, 1.0 + clip.high);
      const bool clip_active = (a > 0.0 && ratio > 1.0 + clip.high) || (a < 0.0 && ratio < 1.0 - clip.low);
      result.objective += std::min(ratio * a, bounded * a);
      if (clip_active) {
        ++clipped;
      } else {
        weights[t] = a * ratio * inv_tokens;
      }
    }
    accumulate_log_prob_grad(policy, group.features, r.tokens, weights, result.gradient);
  }
  result.objective *= inv_tokens;
  result.clip_fraction = static_cast<double>(clipped) * inv_tokens;
  return result;
}

void apply_policy_step(PolicyParams& policy, const PolicyGradient& gradient, double learning_rate) {
  if (!std::isfinite(learning_rate)) throw Error(ErrorCode::kDivergence, "learning rate is not finite");
  for (const auto& [key, g] : gradient) {
    const LogitRow* current = policy.table().find(key);
    for (int v = 0; v < kVocabSize; ++v) {
      const double base = current != nullptr ? (*current)[v] : 0.0;
      if (!std::isfinite(base + learning_rate * g[v])) {
        throw Error(ErrorCode::kDivergence, "policy update produced a non-finite parameter");
      }
    }
  }
  for (const auto& [key, g] : gradient) {
    LogitRow& row = policy.table().row(key);
    for (int v = 0; v < kVocabSize; ++v) row[v] += learning_rate * g[v];
  }
}

PolicyParams policy_step(const PolicyParams& policy, const PolicyGradient& gradient, double learning_rate) {
  PolicyParams next = policy;
  apply_policy_step(next, gradient, learning_rate);
  return next;
}

double context_entropy(const PolicyParams& policy, std::span<const FeatureId> features, std::span<const int> context) {
  LogitRow logits;
  LogitRow logp;
  policy.logits(features, context, logits);
  log_softmax(logits, logp);
  double h = 0.0;
  for (int v = 0; v < kVocabSize; ++v) {
    const double p = std::exp(logp[v]);
    if (p > 0.0) h -= p * logp[v];
  }
  return h;
}

double context_kl(const PolicyParams& policy, const PolicyParams& reference, std::span<const FeatureId> features,
                  std::span<const int> context) {
  LogitRow logits;
  LogitRow logp;
  LogitRow logq;
  policy.logits(features, context, logits);
  log_softmax(logits, logp);
  reference.logits(features, context, logits);
  log_softmax(logits, logq);
  double kl = 0.0;
  for (int v = 0; v < kVocabSize; ++v) {
    const double p = std::exp(logp[v]);
    if (p > 0.0) kl += p * (logp[v] - logq[v]);
  }
  return std::max(kl, 0.0);
}

RolloutMetrics compute_metrics(const PolicyParams& policy, const PolicyParams& reference,
                               std::span<const SampledGroup> groups, std::span<const std::vector<int>> aon_scores) {
  if (aon_scores.size() != groups.size()) throw Error(ErrorCode::kDimension, "one AON list per group is required");
  RolloutMetrics m;
  std::size_t positions = 0;
  std::size_t rollouts = 0;
  std::size_t passed = 0;
  std::array<int, kMaxContextLength> ctx{};
  const std::span<int> context(ctx.data(), static_cast<std::size_t>(policy.context_length()));
  for (std::size_t b = 0; b < groups.size(); ++b) {
    const auto& group = groups[b];
    if (aon_scores[b].size() != group.rollouts.size()) {
      throw Error(ErrorCode::kDimension, "one AON score per rollout is required");
    }
    for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
      const auto& tokens = group.rollouts[i].tokens;
      for (std::size_t t = 0; t < tokens.size(); ++t) {
        policy.context_at(tokens, t, context);
        m.entropy += context_entropy(policy, group.features, context);
        m.kl += context_kl(policy, reference, group.features, context);
        ++positions;
      }
      ++rollouts;
      passed += aon_scores[b][i] != 0 ? 1 : 0;
    }
  }
  if (positions > 0) {
    m.entropy /= static_cast<double>(positions);
    m.kl /= static_cast<double>(positions);
  }
  if (rollouts > 0) m.rollout_accuracy = static_cast<double>(passed) / static_cast<double>(rollouts);
  return m;
}

std::string_view weighting_name(Weighting w) noexcept {
  switch (w) {
    case Weighting::kOracle: return "oracle";
    case Weighting::kUniform: return "uniform";
    case Weighting::kRandom: return "random";
    case Weighting::kTagger: return "tagger";
  }
  return "unknown";
}

Weighting parse_weighting(std::string_view name) {
  if (name == "oracle") return Weighting::kOracle;
  if (name == "uniform") return Weighting::kUniform;
  if (name == "random") return Weighting::kRandom;
  if (name == "tagger") return Weighting::kTagger;
  throw Error(ErrorCode::kConfig, "weighting must be oracle, uniform, random or tagger; got '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::kConfig, why); };
  if (group_size < 2) fail("group_size must be at least 2");
  if (max_len < 1) fail("max_len must be at least 1");
  if (steps < 1) fail("steps must be at least 1");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (mini_epochs < 1) fail("mini_epochs must be at least 1");
  if (eval_every < 1) fail("eval_every must be at least 1");
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) fail("learning_rate must be finite and non-negative");
  if (!std::isfinite(alpha) || !std::isfinite(beta)) fail("alpha and beta must be finite");
  if (!std::isfinite(kl_coef) || kl_coef < 0.0) fail("kl_coef must be finite and non-negative");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) fail("holdout_fraction must lie in [0, 1)");
  if (context_length < 0 || context_length > kMaxContextLength) fail("context_length out of range");
  if (!(prior_smoothing > 0.0)) fail("prior_smoothing must be positive");
  clip.validate();
}

SuiteSplit split_suite(std::span<const Instruction> suite, double holdout_fraction) {
  const auto held = static_cast<std::size_t>(std::lround(static_cast<double>(suite.size()) * holdout_fraction));
  SuiteSplit split;
  const std::size_t cut = suite.size() - std::min(held, suite.size());
  split.train.assign(suite.begin(), suite.begin() + static_cast<std::ptrdiff_t>(cut));
  split.eval.assign(suite.begin() + static_cast<std::ptrdiff_t>(cut), suite.end());
  return split;
}

TaggerParams fit_suite_tagger(std::span<const Instruction> instructions, std::uint64_t seed) {
  std::vector<TaggerExample> dataset;
  auto add = [&dataset](const Instruction& instr, const Constraint& c, const Response& response) {
    const ConstraintVerdict verdict = check_constraint(c, response);
    dataset.push_back({instr.task_text(), c, response, annotate_labels(c, response, verdict)});
  };
  for (std::size_t i = 0; i < instructions.size(); ++i) {
    const Instruction& instr = instructions[i];
    Rng rng(derive_seed(seed, "tagger-witness", i));
    auto witness_text = compose_with_retries(instr.rubric(), rng);
    if (!witness_text) continue;
    const Response witness = Response::from_text(*witness_text, true);
    for (std::size_t k = 0; k < instr.rubric().size(); ++k) {
      const Constraint& c = instr.rubric()[k];
      add(instr, c, witness);
      const std::uint64_t neg_seed = derive_seed(seed, "tagger-negative", i * 64 + k);
      for (auto strategy : {NegativeStrategy::kMinimalModification, NegativeStrategy::kConstraintOmission}) {
        try {
          add(instr, c, generate_negative(instr, witness, c, strategy, neg_seed));
        } catch (const Error&) {
          // no applicable corruption for this pair
        }
      }
    }
  }
  if (dataset.empty()) throw Error(ErrorCode::kPrecondition, "no tagger training data could be composed");
  return train_tagger(dataset).params;
}

namespace {

struct Scores {
  int aon;
  double csr;
};

Scores score(const Instruction& instruction, const Response& response) {
  const auto verdicts = verify_rubric(instruction, response);
  return {score_aon(verdicts), score_csr(verdicts)};
}

}  // namespace

EvalScores evaluate_policy(const PolicyParams& policy, std::span<const Instruction> instructions, std::size_t samples,
                           std::size_t max_len, std::uint64_t seed) {
  EvalScores out;
  if (instructions.empty()) return out;
  for (std::size_t i = 0; i < instructions.size(); ++i) {
    const auto features = instruction_features(instructions[i]);
    Rng rng(derive_seed(seed, i));
    double aon = 0.0;
    double csr = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
      const Scores sc = score(instructions[i], sample_response(policy, features, max_len, rng).response);
      aon += sc.aon;
      csr += sc.csr;
    }
    if (samples > 0) {
      out.aon += aon / static_cast<double>(samples);
      out.csr += csr / static_cast<double>(samples);
    }
    const Scores greedy = score(instructions[i], greedy_response(policy, features, max_len).response);
    out.aon_greedy += greedy.aon;
    out.csr_greedy += greedy.csr;
  }
  const auto n = static_cast<double>(instructions.size());
  out.aon /= n;
  out.csr /= n;
  out.aon_greedy /= n;
  out.csr_greedy /= n;
  return out;
}

namespace {

RelevanceMap relevance_for(Weighting weighting, const Constraint& c, const Response& response,
                           const ConstraintVerdict& verdict, const TaggerParams* tagger, Rng& rng) {
  switch (weighting) {
    case Weighting::kOracle:
      return oracle_relevance(c, response, verdict);
    case Weighting::kUniform: {
      RelevanceMap map{c.id, std::vector<double>(response.size(), 0.0)};
      for (std::size_t t = 0; t < response.size(); ++t) map.probs[t] = response.valid_mask()[t] != 0 ? 1.0 : 0.0;
      return map;
    }
    case Weighting::kRandom: {
      RelevanceMap map{c.id, std::vector<double>(response.size(), 0.0)};
      for (std::size_t t = 0; t < response.size(); ++t) {
        const double w = rng.uniform();
        map.probs[t] = response.valid_mask()[t] != 0 ? w : 0.0;
      }
      return map;
    }
    case Weighting::kTagger:
      return tagger_relevance(*tagger, c, response);
  }
  throw Error(ErrorCode::kConfig, "unknown weighting");
}

// d/dz of KL(softmax(z) || q) is p * (log p - log q - KL).
void add_kl_penalty(const PolicyParams& policy, const PolicyParams& reference, const SampledGroup& group, double coef,
                    PolicyGradient& gradient) {
  std::size_t tokens = 0;
  for (const auto& r : group.rollouts) tokens += r.tokens.size();
  if (tokens == 0) return;
  const double scale = -coef / static_cast<double>(tokens);
  std::array<int, kMaxContextLength> ctx{};
  const std::span<int> context(ctx.data(), static_cast<std::size_t>(policy.context_length()));
  LogitRow logits;
  LogitRow logp;
  LogitRow logq;
  for (const auto& r : group.rollouts) {
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      policy.context_at(r.tokens, t, context);
      policy.logits(group.features, context, logits);
      log_softmax(logits, logp);
      reference.logits(group.features, context, logits);
      log_softmax(logits, logq);
      double kl = 0.0;
      for (int v = 0; v < kVocabSize; ++v) kl += std::exp(logp[v]) * (logp[v] - logq[v]);
      for (FeatureId f : group.features) {
        LogitRow& g = gradient.row(policy_key(f, context));
        for (int v = 0; v < kVocabSize; ++v) g[v] += scale * std::exp(logp[v]) * (logp[v] - logq[v] - kl);
      }
    }
  }
}

class BatchOrder {
 public:
  BatchOrder(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

  std::size_t at(std::size_t position) {
    const std::size_t epoch = position / n_;
    if (epoch != epoch_ || order_.empty()) {
      order_.resize(n_);
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      Rng rng(derive_seed(seed_, "batch-order", epoch));
      for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng.index(i)]);
      epoch_ = epoch;
    }
    return order_[position % n_];
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace

TrainResult train(const TrainConfig& config, std::span<const Instruction> suite) {
  config.validate();
  const SuiteSplit split = split_suite(suite, config.holdout_fraction);
  if (split.train.empty()) throw Error(ErrorCode::kConfig, "task suite leaves no training instructions");

  const auto corpus = prior_corpus(derive_seed(config.seed, "prior"), config.prior_sentences);
  PolicyParams policy = fit_prior_policy(corpus, config.context_length, config.prior_smoothing);
  const PolicyParams reference = policy;

  std::optional<TaggerParams> tagger;
  if (config.token_level && config.weighting == Weighting::kTagger) {
    tagger = fit_suite_tagger(split.train, derive_seed(config.seed, "tagger"));
  }

  TrainResult result{{}, policy};
  BatchOrder order(split.train.size(), config.seed);
  const std::size_t batch = config.batch_size;

  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<SampledGroup> groups;
    std::vector<AdvantageBundle> bundles;
    std::vector<std::vector<int>> aon_scores;
    double reward_sum = 0.0;
    std::size_t reward_count = 0;

    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t position = step * batch + b;
      const Instruction& instr = split.train[order.at(position)];
      SampledGroup group = sample_rollouts(policy, instr, config.group_size, config.max_len,
                                           derive_seed(config.seed, "rollout", position));
      std::vector<VerificationResult> verdicts;
      std::vector<double> rewards;
      std::vector<int> aons;
      std::vector<std::size_t> lengths;
      for (const auto& r : group.rollouts) {
        verdicts.push_back(verify_rubric(instr, r.response));
        aons.push_back(score_aon(verdicts.back()));
        rewards.push_back(config.reward_mode == RewardMode::kAon ? static_cast<double>(aons.back())
                                                                 : score_csr(verdicts.back()));
        lengths.push_back(r.tokens.size());
        reward_sum += rewards.back();
        ++reward_count;
      }

      if (config.token_level) {
        Rng weight_rng(derive_seed(config.seed, "weighting", position));
        RolloutGroup rg;
        rg.instruction_id = instr.id();
        rg.reward_mode = config.reward_mode;
        rg.rewards = rewards;
        for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
          const Response& response = group.rollouts[i].response;
          std::vector<RelevanceMap> maps;
          for (std::size_t k = 0; k < instr.rubric().size(); ++k) {
            maps.push_back(relevance_for(config.weighting, instr.rubric()[k], response, verdicts[i][k],
                                         tagger ? &*tagger : nullptr, weight_rng));
          }
          rg.token_rewards.push_back(make_token_reward_matrix(std::to_string(i), verdicts[i], maps));
        }
        bundles.push_back(compute_advantages(rg, config.normalization, config.alpha, config.beta));
      } else {
        bundles.push_back(response_only_advantages(rewards, lengths, config.alpha));
      }
      groups.push_back(std::move(group));
      aon_scores.push_back(std::move(aons));
    }

    const RolloutMetrics rm = compute_metrics(policy, reference, groups, aon_scores);
    StepMetrics metrics;
    metrics.step = step;
    metrics.rollout_acc = rm.rollout_accuracy;
    metrics.entropy = rm.entropy;
    metrics.kl = rm.kl;
    metrics.mean_reward = reward_sum / static_cast<double>(reward_count);

    double clip_sum = 0.0;
    for (std::size_t epoch = 0; epoch < config.mini_epochs; ++epoch) {
      PolicyGradient gradient;
      for (std::size_t b = 0; b < batch; ++b) {
        const SurrogateResult loss = rtt_grpo_loss(policy, groups[b], bundles[b], config.clip);
        gradient.add_scaled(loss.gradient, 1.0 / static_cast<double>(batch));
        clip_sum += loss.clip_fraction;
        if (config.kl_coef > 0.0) {
          PolicyGradient kl_grad;
          add_kl_penalty(policy, reference, groups[b], config.kl_coef, kl_grad);
          gradient.add_scaled(kl_grad, 1.0 / static_cast<double>(batch));
        }
      }
      if (!config.update_prior) gradient.erase_feature(kBiasFeature);
      try {
        apply_policy_step(policy, gradient, config.learning_rate);
      } catch (const Error& e) {
        result.history.push_back(metrics);
        result.policy = policy;
        throw TrainingDiverged("step " + std::to_string(step) + ": " + e.what(), std::move(result));
      }
    }
    metrics.clip_frac = clip_sum / static_cast<double>(config.mini_epochs * batch);

    const bool eval_now = !split.eval.empty() && ((step + 1) % config.eval_every == 0 || step + 1 == config.steps);
    if (eval_now) {
      const EvalScores ev = evaluate_policy(policy, split.eval, config.eval_samples, config.max_len,
                                            derive_seed(config.seed, "eval", step));
      metrics.eval_aon = ev.aon;
      metrics.eval_csr = ev.csr;
      metrics.eval_aon_greedy = ev.aon_greedy;
      metrics.eval_csr_greedy = ev.csr_greedy;
    }
    result.history.push_back(metrics);
  }
  result.policy = std::move(policy);
  return result;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return ec == std::errc() ? std::string(buf, end) : std::string("nan");
}

std::string format_optional(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

std::string metrics_csv_header() {
  return "step,rollout_acc,entropy,kl,clip_frac,mean_reward,eval_aon,eval_csr,eval_aon_greedy,eval_csr_greedy";
}

std::string metrics_csv_row(const StepMetrics& m) {
  std::string row = std::to_string(m.step);
  for (double v : {m.rollout_acc, m.entropy, m.kl, m.clip_frac, m.mean_reward}) row += "," + format_double(v);
  for (const auto& v : {m.eval_aon, m.eval_csr, m.eval_aon_greedy, m.eval_csr_greedy}) row += "," + format_optional(v);
  return row;
}

std::string metrics_csv(std::span<const StepMetrics> history) {
  std::string out = metrics_csv_header() + "\n";
  for (const auto& m : history) out += metrics_csv_row(m) + "\n";
  return out;
}

}  // namespace rtt
