#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rtt/io.hpp"
#include "rtt/trainer.hpp"

namespace rtt {

// ---------------------------------------------------------------------------
// Task suites
// ---------------------------------------------------------------------------

struct KindWeight {
  ConstraintKind kind;
  double weight;
};

struct TaskSuiteSpec {
  std::size_t instructions = 20;
  std::size_t min_constraints = 3;
  std::size_t max_constraints = 3;
  std::vector<KindWeight> mixture = default_mixture();
  /// Witness texts must fit in this many characters (leaves room for EOS
  /// within the rollout budget).
  std::size_t max_witness_chars = 31;
  /// Draw parameters from only the first n entries of each pool (0 = all).
  std::size_t pool_limit = 0;
  int attempts = 200;
  std::uint64_t seed = 1;

  static std::vector<KindWeight> default_mixture();
  /// Kinds the toy policy can reach by sampling from its prior (no
  /// starts-with or statement-present).
  static std::vector<KindWeight> trainable_mixture();
  void validate() const;
};

/// "default", "trainable", or a list such as "all-caps:1,ends-with:0.5".
std::vector<KindWeight> parse_mixture(std::string_view text);
std::string mixture_to_string(const std::vector<KindWeight>& mixture);

/// Consumes suite_instructions, suite_min_constraints, suite_max_constraints,
/// suite_mixture, suite_pool_limit and suite_seed; returns the other keys.
io::FlatConfig apply_suite_config(const io::FlatConfig& config, TaskSuiteSpec& out);

struct GeneratedTask {
  Instruction instruction;
  std::string witness;
};

/// Draws rubrics from the mixture (at most one constraint per kind, no
/// word shared between a forbidden-word and any other parameter), then
/// composes and verifies a witness. Throws kUnsatisfiableSpec when an
/// instruction cannot be completed within `attempts` draws.
std::vector<GeneratedTask> generate_task_suite(const TaskSuiteSpec& spec);

std::vector<Instruction> suite_instructions(const std::vector<GeneratedTask>& tasks);

/// Stable content hash of a suite (hex), used to tie runs to their data.
std::string suite_hash(const std::vector<Instruction>& suite);

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

enum class Method { kRlAon, kRlCsr, kRttAon, kRttCsr };

std::string_view method_name(Method method) noexcept;
Method parse_method(std::string_view name);

struct ExperimentSpec {
  std::string name;
  Method method = Method::kRttCsr;
  Normalization normalization = Normalization::kIntra;
  Weighting weighting = Weighting::kOracle;
  double alpha = 1.0;
  double beta = 0.5;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::size_t steps = 300;
  std::string eval_suite_id;
  /// Remaining trainer settings; method, weighting, normalization, alpha,
  /// beta, steps and seed above take precedence.
  TrainConfig base;

  /// rl-* methods require beta = 0, rtt-* require beta > 0 (kConfig).
  void validate() const;
  TrainConfig train_config(std::uint64_t seed) const;
};

/// One spec per beta; beta = 0 maps to the matching rl-* method.
std::vector<ExperimentSpec> expand_beta_sweep(const ExperimentSpec& base, const std::vector<double>& betas);
/// One spec per weighting strategy.
std::vector<ExperimentSpec> expand_weighting_grid(const ExperimentSpec& base, const std::vector<Weighting>& weightings);

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool completed = false;
  std::string failure;
  std::vector<StepMetrics> history;
};

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

struct ExperimentSummary {
  std::size_t completed = 0;
  std::vector<std::uint64_t> incomplete_seeds;
  MeanStd final_eval_aon;
  MeanStd final_eval_csr;
  MeanStd final_eval_aon_greedy;
  MeanStd final_eval_csr_greedy;
};

struct ExperimentResult {
  std::filesystem::path directory;
  std::vector<SeedOutcome> seeds;
  ExperimentSummary summary;
};

/// Canonical manifest (JSON) and its hash; the run directory is
/// `<root>/<name>-<hash prefix>`.
std::string experiment_manifest(const ExperimentSpec& spec, const std::vector<Instruction>& suite);

/// Trains one policy per seed and archives manifest.json,
/// seed_<s>/metrics.csv, seed_<s>/final_policy.json, summary.json and
/// summary.csv. A diverging seed is recorded and the run continues.
ExperimentResult run_experiment(const ExperimentSpec& spec, const std::vector<Instruction>& suite,
                                const std::filesystem::path& root);

ExperimentSummary summarize(const std::vector<SeedOutcome>& seeds);

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

struct RunRecord {
  std::filesystem::path directory;
  std::string name;
  std::string suite_hash;
  std::size_t steps = 0;
  std::vector<SeedOutcome> seeds;
};

RunRecord load_run(const std::filesystem::path& directory);

struct FinalDelta {
  std::string metric;
  std::vector<double> per_seed;
  double mean = 0.0;
  std::size_t wins = 0;
  std::size_t losses = 0;
  std::size_t ties = 0;
};

struct RunComparison {
  std::string baseline;
  std::string candidate;
  std::vector<FinalDelta> deltas;
};

struct ComparisonReport {
  std::vector<std::string> runs;
  std::vector<std::uint64_t> seeds;
  /// step,seed,run,<metrics...> rows aligned across runs.
  std::string aligned_csv;
  /// Deltas of every later run against the first (candidate - baseline).
  std::vector<RunComparison> comparisons;

  std::string deltas_csv() const;
  std::string table() const;
};

/// Requires >= 2 runs over the same suite, seeds and step count
/// (kIncomparableRuns otherwise).
ComparisonReport compare_runs(const std::vector<RunRecord>& runs);
ComparisonReport compare_runs(const std::vector<std::filesystem::path>& run_dirs);

// ---------------------------------------------------------------------------
// Decomposition check
// ---------------------------------------------------------------------------

struct BiasCheckReport {
  std::size_t trials = 0;
  double max_weighted_mean_residual = 0.0;
  double max_leave_one_out_residual = 0.0;
  double max_variance_residual = 0.0;
  /// Length-bias probe: one length-4 response among long ones.
  double short_weight = 0.0;
  double mean_shift_ratio = 0.0;
  bool intra_unchanged_under_perturbation = false;
};

/// Random groups (G in [2, 16], mixed lengths) checked against the mean and
/// variance decompositions, plus the short-response probe with G - 1
/// responses of `long_length` tokens.
BiasCheckReport bias_check(std::size_t trials, std::uint64_t seed, std::size_t group_size = 8,
                           std::size_t long_length = 4096);

std::string bias_check_json(const BiasCheckReport& report);

}  // namespace rtt
