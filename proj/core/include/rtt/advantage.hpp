#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rtt/attribution.hpp"

namespace rtt {

/// Standard deviations below this make a normalization unit degenerate; a
/// degenerate unit contributes zero advantage.
inline constexpr double kSigmaFloor = 1e-8;

enum class RewardMode { kAon, kCsr };
enum class Normalization { kIntra, kInter };

std::string_view reward_mode_name(RewardMode mode) noexcept;
RewardMode parse_reward_mode(std::string_view name);
std::string_view normalization_name(Normalization n) noexcept;
Normalization parse_normalization(std::string_view name);

/// Elementwise signed * p_t.
std::vector<double> token_rewards(double signed_score, std::span<const double> relevance);

/// Rows are constraints, columns are the response's tokens.
struct TokenRewardMatrix {
  std::string response_id;
  std::vector<double> signs;
  std::vector<std::vector<double>> rows;

  std::size_t length() const noexcept { return rows.empty() ? 0 : rows.front().size(); }
  std::size_t constraint_count() const noexcept { return rows.size(); }
};

/// Builds r_{c_k}^{(t)} = signed_score(satisfied_k) * p_{c_k}^{(t)}; throws
/// kDimension when the relevance maps disagree in length.
TokenRewardMatrix make_token_reward_matrix(std::string response_id, std::span<const ConstraintVerdict> verdicts,
                                           std::span<const RelevanceMap> relevance);

struct RolloutGroup {
  std::string instruction_id;
  RewardMode reward_mode = RewardMode::kAon;
  std::vector<double> rewards;
  std::vector<TokenRewardMatrix> token_rewards;

  std::size_t size() const noexcept { return rewards.size(); }
};

/// Standardizes one row over its own tokens; zeros when degenerate.
std::vector<double> standardize_row(std::span<const double> row, double sigma_floor = kSigmaFloor);

/// Per-constraint standardization within the response, averaged uniformly
/// over constraints.
std::vector<double> intra_sample_advantage(const TokenRewardMatrix& matrix, double sigma_floor = kSigmaFloor);

/// Per-constraint standardization over all tokens of all responses jointly,
/// averaged over constraints. Result is indexed [response][token].
std::vector<std::vector<double>> inter_sample_advantage(const RolloutGroup& group,
                                                        double sigma_floor = kSigmaFloor);

/// Group-relative scalar advantage (population std); zeros for degenerate groups.
std::vector<double> response_advantage(std::span<const double> rewards, double sigma_floor = kSigmaFloor);

/// alpha * a_res + beta * a_tok elementwise.
std::vector<double> combined_advantage(std::span<const double> a_res, std::span<const double> a_tok, double alpha,
                                       double beta);

struct AdvantageBundle {
  double alpha = 1.0;
  double beta = 0.5;
  std::vector<std::vector<double>> res;
  std::vector<std::vector<double>> tok;
  std::vector<std::vector<double>> sum;
};

AdvantageBundle compute_advantages(const RolloutGroup& group, Normalization normalization, double alpha, double beta,
                                   double sigma_floor = kSigmaFloor);

/// Response-level path only: sum = alpha * res, tok = 0. `lengths` gives the
/// token count of each response.
AdvantageBundle response_only_advantages(std::span<const double> rewards, std::span<const std::size_t> lengths,
                                         double alpha, double sigma_floor = kSigmaFloor);

/// Joint and per-response statistics of one constraint's token rewards
/// across a group, including leave-one-out statistics for every response.
struct GroupStats {
  std::size_t total_tokens = 0;
  double mean = 0.0;
  double variance = 0.0;
  std::vector<std::size_t> lengths;
  std::vector<double> weights;
  std::vector<double> response_means;
  std::vector<double> response_variances;
  std::vector<double> loo_means;
  std::vector<double> loo_variances;
};

/// Every statistic is computed directly from the raw rewards (two-pass),
/// never from the decomposition it is later checked against.
GroupStats compute_group_stats(std::span<const std::vector<double>> rows);

struct MeanDecompositionResiduals {
  double weighted_mean = 0.0;
  std::vector<double> leave_one_out;
};

MeanDecompositionResiduals verify_mean_decomposition(const GroupStats& stats);

double verify_variance_decomposition(const GroupStats& stats, std::size_t j);

}  // namespace rtt
