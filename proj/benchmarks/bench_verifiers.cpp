#include <benchmark/benchmark.h>

#include <string>

#include "rtt/harness.hpp"
#include "rtt/rubric.hpp"
#include "rtt/verifiers.hpp"

namespace {

void BM_VerifyRubric(benchmark::State& state) {
  rtt::TaskSuiteSpec spec;
  spec.instructions = 32;
  spec.min_constraints = 1;
  spec.max_constraints = 5;
  spec.seed = 1;
  const auto tasks = rtt::generate_task_suite(spec);
  std::vector<rtt::Response> witnesses;
  for (const auto& t : tasks) witnesses.push_back(rtt::Response::from_text(t.witness, true));
  for (auto _ : state) {
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      benchmark::DoNotOptimize(rtt::verify_rubric(tasks[i].instruction, witnesses[i]));
    }
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(tasks.size()));
}
BENCHMARK(BM_VerifyRubric);

void BM_LocateForbiddenWord(benchmark::State& state) {
  rtt::ConstraintParams p;
  p.text = "ride";
  const auto c = rtt::make_constraint("fw", rtt::ConstraintKind::kForbiddenWord, p);
  const auto rule = rtt::compile_rule(c);
  std::string text;
  while (text.size() < static_cast<std::size_t>(state.range(0))) text += "the rider took a ride home, ";
  const auto r = rtt::Response::from_text(text, true);
  for (auto _ : state) benchmark::DoNotOptimize(rtt::locate_spans(rule, r));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(text.size()));
}
BENCHMARK(BM_LocateForbiddenWord)->Arg(256)->Arg(4096);

}  // namespace
BENCHMARK_MAIN();
