#include "rtt/advantage.hpp"

#include <cmath>

#include "rtt/error.hpp"
#include "rtt/running_stats.hpp"

namespace rtt {

std::string_view reward_mode_name(RewardMode mode) noexcept { return mode == RewardMode::kAon ? "aon" : "csr"; }

RewardMode parse_reward_mode(std::string_view name) {
  if (name == "aon") return RewardMode::kAon;
  if (name == "csr") return RewardMode::kCsr;
  throw Error(ErrorCode::kConfig, "reward mode must be aon or csr, got '" + std::string(name) + "'");
}

std::string_view normalization_name(Normalization n) noexcept { return n == Normalization::kIntra ? "intra" : "inter"; }

Normalization parse_normalization(std::string_view name) {
  if (name == "intra") return Normalization::kIntra;
  if (name == "inter") return Normalization::kInter;
  throw Error(ErrorCode::kConfig, "normalization must be intra or inter, got '" + std::string(name) + "'");
}

std::vector<double> token_rewards(double signed_score, std::span<const double> relevance) {
  std::vector<double> out(relevance.size());
  for (std::size_t t = 0; t < relevance.size(); ++t) out[t] = signed_score * relevance[t];
  return out;
}

TokenRewardMatrix make_token_reward_matrix(std::string response_id, std::span<const ConstraintVerdict> verdicts,
                                           std::span<const RelevanceMap> relevance) {
  if (verdicts.size() != relevance.size()) {
    throw Error(ErrorCode::kDimension, "one relevance map per constraint verdict is required");
  }
  TokenRewardMatrix m;
  m.response_id = std::move(response_id);
  for (std::size_t k = 0; k < verdicts.size(); ++k) {
    if (k > 0 && relevance[k].probs.size() != relevance[0].probs.size()) {
      throw Error(ErrorCode::kDimension, "relevance maps differ in length");
    }
    const double sign = signed_score(verdicts[k].satisfied);
    m.signs.push_back(sign);
    m.rows.push_back(token_rewards(sign, relevance[k].probs));
  }
  return m;
}

std::vector<double> standardize_row(std::span<const double> row, double sigma_floor) {
  RunningStats stats;
  stats.push(row);
  std::vector<double> out(row.size(), 0.0);
  const double sigma = stats.stddev();
  if (!(sigma >= sigma_floor)) return out;
  const double mu = stats.mean();
  for (std::size_t t = 0; t < row.size(); ++t) out[t] = (row[t] - mu) / sigma;
  return out;
}

std::vector<double> intra_sample_advantage(const TokenRewardMatrix& matrix, double sigma_floor) {
  if (matrix.rows.empty()) throw Error(ErrorCode::kPrecondition, "token reward matrix has no constraints");
  const std::size_t length = matrix.length();
  if (length == 0) throw Error(ErrorCode::kPrecondition, "intra-sample normalization needs T >= 1");
  std::vector<double> acc(length, 0.0);
  for (const auto& row : matrix.rows) {
    if (row.size() != length) throw Error(ErrorCode::kDimension, "ragged token reward matrix");
    const auto a = standardize_row(row, sigma_floor);
    for (std::size_t t = 0; t < length; ++t) acc[t] += a[t];
  }
  const auto k = static_cast<double>(matrix.rows.size());
  for (auto& v : acc) v /= k;
  return acc;
}

std::vector<std::vector<double>> inter_sample_advantage(const RolloutGroup& group, double sigma_floor) {
  const auto& mats = group.token_rewards;
  if (mats.size() < 2) throw Error(ErrorCode::kPrecondition, "inter-sample normalization needs G >= 2");
  const std::size_t constraints = mats.front().constraint_count();
  if (constraints == 0) throw Error(ErrorCode::kPrecondition, "token reward matrix has no constraints");
  std::vector<std::vector<double>> acc(mats.size());
  for (std::size_t i = 0; i < mats.size(); ++i) {
    if (mats[i].constraint_count() != constraints) {
      throw Error(ErrorCode::kDimension, "responses disagree on the number of constraints");
    }
    if (mats[i].length() == 0) throw Error(ErrorCode::kPrecondition, "response lengths must be positive");
    acc[i].assign(mats[i].length(), 0.0);
  }
  for (std::size_t k = 0; k < constraints; ++k) {
    // Fixed reduction order: responses in group order, tokens in sequence order.
    RunningStats stats;
    for (const auto& m : mats) stats.push(m.rows[k]);
    const double sigma = stats.stddev();
    if (!(sigma >= sigma_floor)) continue;
    const double mu = stats.mean();
    for (std::size_t i = 0; i < mats.size(); ++i) {
      const auto& row = mats[i].rows[k];
      for (std::size_t t = 0; t < row.size(); ++t) acc[i][t] += (row[t] - mu) / sigma;
    }
  }
  const auto kk = static_cast<double>(constraints);
  for (auto& response : acc) {
    for (auto& v : response) v /= kk;
  }
  return acc;
}

std::vector<double> response_advantage(std::span<const double> rewards, double sigma_floor) {
  if (rewards.size() < 2) throw Error(ErrorCode::kPrecondition, "response advantage needs G >= 2");
  RunningStats stats;
  stats.push(rewards);
  std::vector<double> out(rewards.size(), 0.0);
  const double sigma = stats.stddev();
  if (!(sigma >= sigma_floor)) return out;
  const double mu = stats.mean();
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mu) / sigma;
  return out;
}

std::vector<double> combined_advantage(std::span<const double> a_res, std::span<const double> a_tok, double alpha,
                                       double beta) {
  if (a_res.size() != a_tok.size()) {
    throw Error(ErrorCode::kDimension, "response- and token-level advantages differ in length");
  }
  std::vector<double> out(a_res.size());
  for (std::size_t t = 0; t < a_res.size(); ++t) out[t] = alpha * a_res[t] + beta * a_tok[t];
  return out;
}

AdvantageBundle compute_advantages(const RolloutGroup& group, Normalization normalization, double alpha, double beta,
                                   double sigma_floor) {
  if (group.rewards.size() != group.token_rewards.size()) {
    throw Error(ErrorCode::kDimension, "one token reward matrix per response is required");
  }
  AdvantageBundle bundle;
  bundle.alpha = alpha;
  bundle.beta = beta;
  const auto scalar = response_advantage(group.rewards, sigma_floor);
  if (normalization == Normalization::kInter) {
    bundle.tok = inter_sample_advantage(group, sigma_floor);
  } else {
    for (const auto& m : group.token_rewards) bundle.tok.push_back(intra_sample_advantage(m, sigma_floor));
  }
  for (std::size_t i = 0; i < group.size(); ++i) {
    bundle.res.emplace_back(bundle.tok[i].size(), scalar[i]);
    bundle.sum.push_back(combined_advantage(bundle.res[i], bundle.tok[i], alpha, beta));
  }
  return bundle;
}

AdvantageBundle response_only_advantages(std::span<const double> rewards, std::span<const std::size_t> lengths,
                                         double alpha, double sigma_floor) {
  if (rewards.size() != lengths.size()) throw Error(ErrorCode::kDimension, "one length per reward is required");
  AdvantageBundle bundle;
  bundle.alpha = alpha;
  bundle.beta = 0.0;
  const auto scalar = response_advantage(rewards, sigma_floor);
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    bundle.res.emplace_back(lengths[i], scalar[i]);
    bundle.tok.emplace_back(lengths[i], 0.0);
    bundle.sum.emplace_back(lengths[i], alpha * scalar[i]);
  }
  return bundle;
}

namespace {

struct Moments {
  double mean;
  double variance;
};

// Two-pass population moments over a set of rows, skipping row `skip`.
Moments moments(std::span<const std::vector<double>> rows, std::size_t skip) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i == skip) continue;
    for (double v : rows[i]) sum += v;
    n += rows[i].size();
  }
  if (n == 0) return {0.0, 0.0};
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i == skip) continue;
    for (double v : rows[i]) ss += (v - mean) * (v - mean);
  }
  return {mean, ss / static_cast<double>(n)};
}

}  // namespace

GroupStats compute_group_stats(std::span<const std::vector<double>> rows) {
  if (rows.empty()) throw Error(ErrorCode::kPrecondition, "group statistics need at least one response");
  GroupStats s;
  for (const auto& row : rows) {
    if (row.empty()) throw Error(ErrorCode::kPrecondition, "response lengths must be positive");
    s.lengths.push_back(row.size());
    s.total_tokens += row.size();
  }
  const Moments all = moments(rows, rows.size());
  s.mean = all.mean;
  s.variance = all.variance;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    s.weights.push_back(static_cast<double>(rows[i].size()) / static_cast<double>(s.total_tokens));
    const Moments own = moments(rows.subspan(i, 1), 1);
    s.response_means.push_back(own.mean);
    s.response_variances.push_back(own.variance);
    const Moments loo = moments(rows, i);
    s.loo_means.push_back(loo.mean);
    s.loo_variances.push_back(loo.variance);
  }
  return s;
}

MeanDecompositionResiduals verify_mean_decomposition(const GroupStats& stats) {
  MeanDecompositionResiduals out;
  double weighted = 0.0;
  for (std::size_t i = 0; i < stats.weights.size(); ++i) weighted += stats.weights[i] * stats.response_means[i];
  out.weighted_mean = stats.mean - weighted;
  for (std::size_t j = 0; j < stats.weights.size(); ++j) {
    const double w = stats.weights[j];
    const double loo = stats.loo_means[j];
    out.leave_one_out.push_back(stats.mean - (loo + w * (stats.response_means[j] - loo)));
  }
  return out;
}

double verify_variance_decomposition(const GroupStats& stats, std::size_t j) {
  if (j >= stats.weights.size()) throw Error(ErrorCode::kRange, "response index out of range");
  const double w = stats.weights[j];
  const double gap = stats.response_means[j] - stats.loo_means[j];
  const double rhs = w * stats.response_variances[j] + (1.0 - w) * stats.loo_variances[j] + w * (1.0 - w) * gap * gap;
  return stats.variance - rhs;
}

}  // namespace rtt
