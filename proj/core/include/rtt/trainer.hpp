#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rtt/advantage.hpp"
#include "rtt/attribution.hpp"
#include "rtt/policy.hpp"

namespace rtt {

/// Asymmetric clip range [1 - low, 1 + high] on the importance ratio.
struct ClipConfig {
  double low = 0.2;
  double high = 0.2;

  void validate() const;
};

struct SampledGroup {
  std::string instruction_id;
  std::vector<FeatureId> features;
  std::vector<Rollout> rollouts;
};

/// G independent ancestral samples; rollout g draws from its own stream
/// derived from `seed`, so the result is a pure function of its inputs.
SampledGroup sample_rollouts(const PolicyParams& policy, const Instruction& instruction, std::size_t group_size,
                             std::size_t max_len, std::uint64_t seed);

struct SurrogateResult {
  double objective = 0.0;
  PolicyGradient gradient;
  double clip_fraction = 0.0;
  std::size_t tokens = 0;
};

/// Token-mean clipped surrogate over one group:
///   (1 / sum_i |o_i|) sum_i sum_t min(w A, clip(w, 1 - low, 1 + high) A)
/// with w = exp(log pi - log pi_old). The gradient ascends the objective.
/// Throws kOverflow when a ratio is not finite.
SurrogateResult rtt_grpo_loss(const PolicyParams& policy, const SampledGroup& group, const AdvantageBundle& advantages,
                              const ClipConfig& clip);

/// theta + learning_rate * gradient; throws kDivergence on a non-finite result.
PolicyParams policy_step(const PolicyParams& policy, const PolicyGradient& gradient, double learning_rate);
void apply_policy_step(PolicyParams& policy, const PolicyGradient& gradient, double learning_rate);

struct RolloutMetrics {
  double entropy = 0.0;
  double kl = 0.0;
  double rollout_accuracy = 0.0;
};

/// Per-token mean entropy of the policy and KL(policy || reference) at the
/// visited contexts, plus the AON pass rate of the rollouts.
RolloutMetrics compute_metrics(const PolicyParams& policy, const PolicyParams& reference,
                               std::span<const SampledGroup> groups, std::span<const std::vector<int>> aon_scores);

/// Entropy and KL at a single context (exposed for tests).
double context_entropy(const PolicyParams& policy, std::span<const FeatureId> features, std::span<const int> context);
double context_kl(const PolicyParams& policy, const PolicyParams& reference, std::span<const FeatureId> features,
                  std::span<const int> context);

enum class Weighting { kOracle, kUniform, kRandom, kTagger };

std::string_view weighting_name(Weighting w) noexcept;
Weighting parse_weighting(std::string_view name);

struct TrainConfig {
  RewardMode reward_mode = RewardMode::kCsr;
  /// false selects the response-level GRPO path (no relevance, no token advantages).
  bool token_level = true;
  Weighting weighting = Weighting::kOracle;
  Normalization normalization = Normalization::kIntra;
  double alpha = 1.0;
  double beta = 0.5;
  std::size_t group_size = 8;
  std::size_t max_len = 32;
  std::size_t steps = 300;
  std::size_t batch_size = 4;
  std::size_t mini_epochs = 1;
  double learning_rate = 20.0;
  ClipConfig clip;
  /// KL(pi || pi_ref) penalty weight; zero keeps the objective penalty-free.
  double kl_coef = 0.0;
  int context_length = 2;
  /// When false the bias (language prior) rows stay fixed and only the
  /// constraint-feature rows are optimized.
  bool update_prior = false;
  std::size_t eval_samples = 16;
  std::size_t eval_every = 1;
  double holdout_fraction = 0.25;
  std::size_t prior_sentences = 4000;
  double prior_smoothing = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

struct StepMetrics {
  std::size_t step = 0;
  double rollout_acc = 0.0;
  double entropy = 0.0;
  double kl = 0.0;
  double clip_frac = 0.0;
  double mean_reward = 0.0;
  std::optional<double> eval_aon;
  std::optional<double> eval_csr;
  std::optional<double> eval_aon_greedy;
  std::optional<double> eval_csr_greedy;

  friend bool operator==(const StepMetrics&, const StepMetrics&) = default;
};

struct TrainResult {
  std::vector<StepMetrics> history;
  PolicyParams policy;
};

/// Raised when an update produces non-finite parameters; holds the history
/// up to the failing step and the last finite policy.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& message, TrainResult partial)
      : Error(ErrorCode::kDivergence, message), partial_(std::move(partial)) {}
  const TrainResult& partial() const noexcept { return partial_; }

 private:
  TrainResult partial_;
};

struct SuiteSplit {
  std::vector<Instruction> train;
  std::vector<Instruction> eval;
};

/// The trailing round(n * fraction) instructions are held out.
SuiteSplit split_suite(std::span<const Instruction> suite, double holdout_fraction);

/// Tagger fitted on composed witnesses and their negatives for the given
/// instructions (the `tagger` weighting strategy).
TaggerParams fit_suite_tagger(std::span<const Instruction> instructions, std::uint64_t seed);

/// Held-out evaluation: mean AON/CSR over `samples` ancestral draws per
/// instruction, and over one greedy decode per instruction.
struct EvalScores {
  double aon = 0.0;
  double csr = 0.0;
  double aon_greedy = 0.0;
  double csr_greedy = 0.0;
};

EvalScores evaluate_policy(const PolicyParams& policy, std::span<const Instruction> instructions, std::size_t samples,
                           std::size_t max_len, std::uint64_t seed);

/// Sample, verify, attribute, compute advantages, optimize; deterministic for
/// a fixed config.
TrainResult train(const TrainConfig& config, std::span<const Instruction> suite);

std::string metrics_csv_header();
std::string metrics_csv_row(const StepMetrics& m);
std::string metrics_csv(std::span<const StepMetrics> history);

}  // namespace rtt
