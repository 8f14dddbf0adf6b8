#include <cmath>

#include "doctest.h"
#include "rtt/advantage.hpp"
#include "rtt/error.hpp"
#include "support.hpp"

using namespace rtt;

namespace {

TokenRewardMatrix matrix(std::string id, std::vector<std::vector<double>> rows) {
  TokenRewardMatrix m;
  m.response_id = std::move(id);
  for (const auto& row : rows) {
    double sign = 1.0;
    for (double x : row) {
      if (x < 0.0) sign = -1.0;
    }
    m.signs.push_back(sign);
  }
  m.rows = std::move(rows);
  return m;
}

TokenRewardMatrix random_matrix(Rng& rng, std::size_t length, std::size_t constraints) {
  std::vector<std::vector<double>> rows(constraints, std::vector<double>(length));
  for (auto& row : rows) {
    const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
    const bool binary = rng.bernoulli(0.5);
    for (auto& x : row) x = sign * (binary ? (rng.bernoulli(0.3) ? 1.0 : 0.0) : rng.uniform());
  }
  return matrix("r", std::move(rows));
}

RolloutGroup random_group(Rng& rng, std::size_t g, std::size_t constraints, std::size_t max_len) {
  RolloutGroup group;
  group.instruction_id = "t";
  group.reward_mode = RewardMode::kCsr;
  for (std::size_t i = 0; i < g; ++i) {
    group.token_rewards.push_back(random_matrix(rng, 1 + rng.index(max_len), constraints));
    group.rewards.push_back(static_cast<double>(rng.index(4)) / 3.0);
  }
  return group;
}

// Flatten every response's row k, standardize jointly, then split back.
std::vector<std::vector<double>> flattened_inter(const RolloutGroup& group) {
  const std::size_t constraints = group.token_rewards.front().constraint_count();
  std::vector<std::vector<double>> out;
  for (const auto& m : group.token_rewards) out.emplace_back(m.length(), 0.0);
  for (std::size_t k = 0; k < constraints; ++k) {
    std::vector<double> flat;
    for (const auto& m : group.token_rewards) flat.insert(flat.end(), m.rows[k].begin(), m.rows[k].end());
    const auto mo = test::moments(flat);
    if (mo.stddev < kSigmaFloor) continue;
    for (std::size_t i = 0; i < group.size(); ++i) {
      for (std::size_t t = 0; t < out[i].size(); ++t) {
        out[i][t] += (group.token_rewards[i].rows[k][t] - mo.mean) / mo.stddev / static_cast<double>(constraints);
      }
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("advantage") {
  TEST_CASE("token_rewards examples") {
    CHECK(token_rewards(1.0, std::vector<double>{1, 1, 0, 0}) == std::vector<double>{1, 1, 0, 0});
    const auto neg = token_rewards(-1.0, std::vector<double>{0, 0, 1, 0});
    CHECK(neg[2] == -1.0);
    for (std::size_t t : {0u, 1u, 3u}) CHECK(neg[t] == 0.0);
    for (double s : {1.0, -1.0}) {
      for (double x : token_rewards(s, std::vector<double>(5, 0.0))) CHECK(x == 0.0);
    }
  }

  TEST_CASE("make_token_reward_matrix") {
    const std::vector<ConstraintVerdict> verdicts{{"a", true, {}}, {"b", false, {}}};
    const std::vector<RelevanceMap> rel{{"a", {1.0, 0.5, 0.0}}, {"b", {0.0, 1.0, 0.25}}};
    const auto m = make_token_reward_matrix("r", verdicts, rel);
    CHECK(m.signs == std::vector<double>{1.0, -1.0});
    CHECK(m.rows[0] == std::vector<double>{1.0, 0.5, 0.0});
    CHECK(m.rows[1][1] == -1.0);
    CHECK(m.rows[1][2] == -0.25);
    const std::vector<RelevanceMap> ragged{{"a", {1.0}}, {"b", {0.0, 1.0}}};
    CHECK_THROWS_AS(make_token_reward_matrix("r", verdicts, ragged), Error);
  }

  TEST_CASE("intra-sample examples") {
    CHECK(intra_sample_advantage(matrix("r", {{1, 1, 0, 0}})) == std::vector<double>{1, 1, -1, -1});
    for (double x : intra_sample_advantage(matrix("r", {{1, 1, 1}}))) CHECK(x == 0.0);
    for (double x : intra_sample_advantage(matrix("r", {{0, 0, 0}}))) CHECK(x == 0.0);

    const std::vector<double> a{0.3, -0.1, 0.9, 0.0};
    const std::vector<double> b{-1.0, -0.5, 0.0, -0.25};
    const auto both = intra_sample_advantage(matrix("r", {a, b}));
    const auto sa = standardize_row(a);
    const auto sb = standardize_row(b);
    for (std::size_t t = 0; t < 4; ++t) CHECK(both[t] == doctest::Approx((sa[t] + sb[t]) / 2.0).epsilon(1e-15));
  }

  TEST_CASE("intra-sample rows are standardized") {
    Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 2 + rng.index(200);
      std::vector<double> row(n);
      for (auto& x : row) x = rng.uniform() * 2.0 - 1.0;
      const auto a = standardize_row(row);
      const auto mo = test::moments(a);
      CHECK(std::abs(mo.mean) < 1e-9);
      CHECK(std::abs(mo.stddev - 1.0) < 1e-6);
      const auto ref = test::moments(row);
      for (std::size_t t = 0; t < n; ++t) CHECK(a[t] == doctest::Approx((row[t] - ref.mean) / ref.stddev).epsilon(1e-12));
    }
  }

  TEST_CASE("intra-sample scale invariance and sign antisymmetry") {
    Rng rng(42);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 2 + rng.index(60);
      std::vector<double> p(n);
      for (auto& x : p) x = rng.uniform();
      const double c = 0.05 + rng.uniform() * 0.95;
      std::vector<double> scaled(n);
      for (std::size_t t = 0; t < n; ++t) scaled[t] = c * p[t];
      const auto a = standardize_row(token_rewards(1.0, p));
      const auto b = standardize_row(token_rewards(1.0, scaled));
      for (std::size_t t = 0; t < n; ++t) CHECK(b[t] == doctest::Approx(a[t]).epsilon(1e-9));
      const auto neg = standardize_row(token_rewards(-1.0, p));
      for (std::size_t t = 0; t < n; ++t) CHECK(neg[t] == -a[t]);
    }
  }

  TEST_CASE("intra-sample is decoupled from other responses, inter-sample is not") {
    Rng rng(43);
    int inter_changed = 0;
    for (int trial = 0; trial < 100; ++trial) {
      auto group = random_group(rng, 4, 2, 20);
      const auto intra_before = intra_sample_advantage(group.token_rewards[0]);
      const auto inter_before = inter_sample_advantage(group)[0];
      group.token_rewards[1] = random_matrix(rng, 1 + rng.index(40), 2);
      CHECK(intra_sample_advantage(group.token_rewards[0]) == intra_before);
      if (inter_sample_advantage(group)[0] != inter_before) ++inter_changed;
    }
    CHECK(inter_changed > 90);
  }

  TEST_CASE("inter-sample examples") {
    RolloutGroup same;
    same.rewards = {1.0, 1.0};
    same.token_rewards = {matrix("a", {{1, 0, 1}}), matrix("b", {{1, 0, 1}})};
    const auto flat = inter_sample_advantage(same);
    CHECK(flat[0] == flat[1]);

    RolloutGroup ex;
    ex.rewards = {1.0, 0.0};
    ex.token_rewards = {matrix("a", {{1, 1}}), matrix("b", {{0, 0, 0, 0, 0, 0}})};
    const auto a = inter_sample_advantage(ex);
    const double sigma = std::sqrt(0.1875);
    for (double x : a[0]) CHECK(x == doctest::Approx(0.75 / sigma).epsilon(1e-12));
    for (double x : a[1]) CHECK(x == doctest::Approx(-0.25 / sigma).epsilon(1e-12));
    CHECK(a[0][0] == doctest::Approx(1.7320508).epsilon(1e-7));
    CHECK(a[1][0] == doctest::Approx(-0.5773503).epsilon(1e-7));
  }

  TEST_CASE("inter-sample on identical rows is neutral") {
    RolloutGroup g;
    g.rewards = {0.5, 0.5, 0.5};
    g.token_rewards = {matrix("a", {{1, 1}}), matrix("b", {{1, 1, 1}}), matrix("c", {{1}})};
    for (const auto& row : inter_sample_advantage(g)) {
      for (double x : row) CHECK(x == 0.0);
    }
  }

  TEST_CASE("inter-sample equals the flatten-then-standardize oracle") {
    Rng rng(44);
    for (int trial = 0; trial < 300; ++trial) {
      const auto group = random_group(rng, 2 + rng.index(6), 1 + rng.index(4), 16);
      const auto got = inter_sample_advantage(group);
      const auto want = flattened_inter(group);
      for (std::size_t i = 0; i < got.size(); ++i) {
        REQUIRE(got[i].size() == want[i].size());
        for (std::size_t t = 0; t < got[i].size(); ++t) CHECK(std::abs(got[i][t] - want[i][t]) < 1e-12);
      }
    }
  }

  TEST_CASE("response advantage examples") {
    CHECK(response_advantage(std::vector<double>{1, 0}) == std::vector<double>{1, -1});
    CHECK(response_advantage(std::vector<double>{0.5, 0.5, 0.5}) == std::vector<double>{0, 0, 0});
    const auto csr = response_advantage(std::vector<double>{1.0, 0.5, 0.5, 0.0});
    CHECK(csr[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(csr[1] == 0.0);
    CHECK(csr[2] == 0.0);
    CHECK(csr[3] == doctest::Approx(-std::sqrt(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(response_advantage(std::vector<double>{1.0}), Error);
  }

  TEST_CASE("combined advantage examples") {
    const std::vector<double> res{1.0, 1.0};
    const std::vector<double> tok{1.0, -1.0};
    CHECK(combined_advantage(res, tok, 1.0, 0.5) == std::vector<double>{1.5, 0.5});
    CHECK(combined_advantage(res, tok, 1.0, 0.0) == res);
    CHECK(combined_advantage(res, tok, 0.0, 1.0) == tok);
    CHECK_THROWS_AS(combined_advantage(res, std::vector<double>{1.0}, 1.0, 0.5), Error);
  }

  TEST_CASE("bundle satisfies the linear combination bit for bit") {
    Rng rng(45);
    for (int trial = 0; trial < 200; ++trial) {
      const auto group = random_group(rng, 2 + rng.index(7), 1 + rng.index(3), 24);
      const double alpha = rng.uniform() * 2.0;
      const double beta = rng.uniform();
      for (auto norm : {Normalization::kIntra, Normalization::kInter}) {
        const auto b = compute_advantages(group, norm, alpha, beta);
        const auto r = response_advantage(group.rewards);
        for (std::size_t i = 0; i < group.size(); ++i) {
          REQUIRE(b.sum[i].size() == group.token_rewards[i].length());
          for (std::size_t t = 0; t < b.sum[i].size(); ++t) {
            CHECK(b.res[i][t] == r[i]);
            CHECK(b.sum[i][t] - (alpha * b.res[i][t] + beta * b.tok[i][t]) == 0.0);
            CHECK(std::isfinite(b.sum[i][t]));
          }
        }
        if (norm == Normalization::kIntra) {
          for (std::size_t i = 0; i < group.size(); ++i) CHECK(b.tok[i] == intra_sample_advantage(group.token_rewards[i]));
        } else {
          CHECK(b.tok == inter_sample_advantage(group));
        }
      }
    }
  }

  TEST_CASE("response-only advantages") {
    const std::vector<double> rewards{1.0, 0.0, 0.5};
    const std::vector<std::size_t> lengths{2, 3, 1};
    const auto b = response_only_advantages(rewards, lengths, 1.0);
    const auto r = response_advantage(rewards);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(b.sum[i] == std::vector<double>(lengths[i], r[i]));
      CHECK(b.tok[i] == std::vector<double>(lengths[i], 0.0));
    }
  }

  TEST_CASE("group statistics and decomposition identities") {
    SUBCASE("single response") {
      const std::vector<std::vector<double>> rows{{0.2, -0.4, 1.0}};
      const auto s = compute_group_stats(rows);
      CHECK(s.weights == std::vector<double>{1.0});
      CHECK(s.mean == s.response_means[0]);
    }
    SUBCASE("identical responses") {
      const std::vector<std::vector<double>> rows{{0.5, 0.5}, {0.5, 0.5, 0.5}};
      const auto s = compute_group_stats(rows);
      CHECK(s.variance == 0.0);
      CHECK(verify_variance_decomposition(s, 0) == 0.0);
      CHECK(verify_variance_decomposition(s, 1) == 0.0);
    }
    SUBCASE("two responses against the mixture formula and brute force") {
      Rng rng(46);
      for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::vector<double>> rows(2);
        for (auto& row : rows) {
          row.resize(1 + rng.index(30));
          for (auto& x : row) x = rng.uniform() * 2.0 - 1.0;
        }
        const auto s = compute_group_stats(rows);
        std::vector<double> flat = rows[0];
        flat.insert(flat.end(), rows[1].begin(), rows[1].end());
        const auto all = test::moments(flat);
        const auto m0 = test::moments(rows[0]);
        const auto m1 = test::moments(rows[1]);
        const double w0 = static_cast<double>(rows[0].size()) / static_cast<double>(flat.size());
        const double w1 = 1.0 - w0;
        const double d = m0.mean - m1.mean;
        const double mixture = w0 * m0.stddev * m0.stddev + w1 * m1.stddev * m1.stddev + w0 * w1 * d * d;
        CHECK(std::abs(s.variance - all.stddev * all.stddev) < 1e-12);
        CHECK(std::abs(s.variance - mixture) < 1e-12);
        CHECK(std::abs(verify_variance_decomposition(s, 0)) < 1e-12);
      }
    }
    SUBCASE("weights sum to one and totals match") {
      Rng rng(47);
      for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::vector<double>> rows(2 + rng.index(10));
        std::size_t total = 0;
        for (auto& row : rows) {
          row.resize(1 + rng.index(50));
          total += row.size();
          for (auto& x : row) x = rng.uniform();
        }
        const auto s = compute_group_stats(rows);
        CHECK(s.total_tokens == total);
        double wsum = 0.0;
        for (double w : s.weights) wsum += w;
        CHECK(std::abs(wsum - 1.0) < 1e-12);
        const auto res = verify_mean_decomposition(s);
        CHECK(std::abs(res.weighted_mean) < 1e-10);
        for (double r : res.leave_one_out) CHECK(std::abs(r) < 1e-10);
        for (std::size_t j = 0; j < rows.size(); ++j) CHECK(std::abs(verify_variance_decomposition(s, j)) < 1e-10);
      }
    }
    SUBCASE("short response weight vanishes as others grow") {
      Rng rng(48);
      double last_weight = 1.0;
      for (std::size_t len : {16u, 256u, 4096u}) {
        std::vector<std::vector<double>> rows{{1.0, 1.0, 1.0, 1.0}};
        for (int i = 0; i < 7; ++i) {
          std::vector<double> row(len);
          for (auto& x : row) x = rng.uniform() - 0.5;
          rows.push_back(row);
        }
        const auto s = compute_group_stats(rows);
        const double w = s.weights[0];
        CHECK(w < last_weight);
        last_weight = w;
        const double lhs = std::abs(s.mean - s.loo_means[0]);
        const double rhs = w * std::abs(s.response_means[0] - s.loo_means[0]);
        CHECK(std::abs(lhs - rhs) < 1e-12);
      }
      CHECK(last_weight == doctest::Approx(4.0 / (4.0 + 7.0 * 4096.0)));
    }
  }
}
