#include <benchmark/benchmark.h>

#include <vector>

#include "rtt/advantage.hpp"
#include "rtt/random.hpp"

namespace {

rtt::TokenRewardMatrix random_matrix(rtt::Rng& rng, std::size_t constraints, std::size_t length) {
  rtt::TokenRewardMatrix m;
  m.response_id = "bench";
  for (std::size_t k = 0; k < constraints; ++k) {
    const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
    std::vector<double> row(length);
    for (auto& x : row) x = rng.bernoulli(0.3) ? sign : 0.0;
    m.signs.push_back(sign);
    m.rows.push_back(std::move(row));
  }
  return m;
}

rtt::RolloutGroup random_group(std::size_t g, std::size_t length) {
  rtt::Rng rng(7);
  rtt::RolloutGroup group;
  group.instruction_id = "bench";
  for (std::size_t i = 0; i < g; ++i) {
    group.rewards.push_back(rng.uniform());
    group.token_rewards.push_back(random_matrix(rng, 4, length));
  }
  return group;
}

void BM_IntraSample(benchmark::State& state) {
  rtt::Rng rng(1);
  const auto m = random_matrix(rng, static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(rtt::intra_sample_advantage(m));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(1));
}
BENCHMARK(BM_IntraSample)->Args({1, 64})->Args({4, 512})->Args({8, 4096});

void BM_InterSample(benchmark::State& state) {
  const auto group = random_group(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(rtt::inter_sample_advantage(group));
}
BENCHMARK(BM_InterSample)->Args({8, 64})->Args({8, 512})->Args({16, 4096});

void BM_ComputeAdvantages(benchmark::State& state) {
  const auto group = random_group(8, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(rtt::compute_advantages(group, rtt::Normalization::kIntra, 1.0, 0.5));
  }
}
BENCHMARK(BM_ComputeAdvantages)->Arg(64)->Arg(512);

void BM_GroupStats(benchmark::State& state) {
  rtt::Rng rng(3);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < state.range(0); ++i) {
    std::vector<double> row(static_cast<std::size_t>(rng.range(1, 1024)));
    for (auto& x : row) x = rng.uniform();
    rows.push_back(std::move(row));
  }
  for (auto _ : state) benchmark::DoNotOptimize(rtt::compute_group_stats(rows));
}
BENCHMARK(BM_GroupStats)->Arg(8)->Arg(16);

}  // namespace
