#include <filesystem>
#include <set>

#include "doctest.h"
#include "rtt/error.hpp"
#include "rtt/harness.hpp"
#include "rtt/io.hpp"
#include "support.hpp"

using namespace rtt;
namespace fs = std::filesystem;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an rtt::Error");
  return ErrorCode::kPrecondition;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::current_path() / "harness_scratch" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<Instruction> trainable_suite(std::size_t n) {
  TaskSuiteSpec spec;
  spec.instructions = n;
  spec.mixture = TaskSuiteSpec::trainable_mixture();
  spec.pool_limit = 2;
  return suite_instructions(generate_task_suite(spec));
}

ExperimentSpec tiny_experiment(std::string name) {
  ExperimentSpec s;
  s.name = std::move(name);
  s.seeds = {1, 2};
  s.steps = 4;
  s.base.batch_size = 2;
  s.base.group_size = 4;
  s.base.eval_samples = 2;
  s.base.eval_every = 2;
  s.base.prior_sentences = 300;
  return s;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("suite generation counts and witnesses") {
    TaskSuiteSpec spec;
    const auto tasks = generate_task_suite(spec);
    REQUIRE(tasks.size() == 20);
    std::size_t constraints = 0;
    std::set<std::string> ids;
    for (const auto& t : tasks) {
      constraints += t.instruction.rubric().size();
      ids.insert(t.instruction.id());
      CHECK(score_aon(t.instruction, Response::from_text(t.witness, true)) == 1);
      CHECK(t.witness.size() <= spec.max_witness_chars);
    }
    CHECK(constraints == 60);
    CHECK(ids.size() == 20);
    const auto jsonl = io::instructions_jsonl(suite_instructions(tasks));
    std::size_t records = 0;
    for (const auto& instr : suite_instructions(tasks)) records += instr.rubric().size();
    CHECK(records == 60);
    CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 20);
  }

  TEST_CASE("suite generation is deterministic and seed-sensitive") {
    TaskSuiteSpec spec;
    const auto a = io::instructions_jsonl(suite_instructions(generate_task_suite(spec)));
    CHECK(a == io::instructions_jsonl(suite_instructions(generate_task_suite(spec))));
    spec.seed = 2;
    CHECK(a != io::instructions_jsonl(suite_instructions(generate_task_suite(spec))));
  }

  TEST_CASE("restricted mixture always yields passing witnesses") {
    TaskSuiteSpec spec;
    spec.instructions = 30;
    spec.min_constraints = 1;
    spec.max_constraints = 2;
    spec.mixture = parse_mixture("all-caps:1,required-word:1");
    for (const auto& t : generate_task_suite(spec)) {
      for (const auto& c : t.instruction.rubric()) {
        CHECK((c.kind == ConstraintKind::kAllCaps || c.kind == ConstraintKind::kRequiredWord));
      }
      CHECK(score_aon(t.instruction, Response::from_text(t.witness, true)) == 1);
    }
  }

  TEST_CASE("no word is both forbidden and otherwise required") {
    TaskSuiteSpec spec;
    spec.instructions = 60;
    spec.min_constraints = 5;
    spec.max_constraints = 5;
    spec.seed = 4;
    for (const auto& t : generate_task_suite(spec)) {
      std::string forbidden;
      for (const auto& c : t.instruction.rubric()) {
        if (c.kind == ConstraintKind::kForbiddenWord) forbidden = c.params.text;
      }
      if (forbidden.empty()) continue;
      for (const auto& c : t.instruction.rubric()) {
        if (c.kind == ConstraintKind::kRequiredWord) CHECK(c.params.text != forbidden);
      }
    }
  }

  TEST_CASE("suite spec errors") {
    TaskSuiteSpec spec;
    spec.max_witness_chars = 1;
    spec.attempts = 5;
    CHECK(code_of([&] { (void)generate_task_suite(spec); }) == ErrorCode::kUnsatisfiableSpec);
    TaskSuiteSpec narrow;
    narrow.mixture = parse_mixture("all-caps:1");
    CHECK(code_of([&] { (void)generate_task_suite(narrow); }) == ErrorCode::kConfig);
    CHECK(code_of([] { (void)parse_mixture("all-caps"); }) == ErrorCode::kConfig);
    CHECK(code_of([] { (void)parse_mixture("sparkles:1"); }) == ErrorCode::kUnsupportedConstraint);
    CHECK(parse_mixture(mixture_to_string(TaskSuiteSpec::default_mixture())).size() ==
          TaskSuiteSpec::default_mixture().size());
  }

  TEST_CASE("experiment spec rules") {
    auto s = tiny_experiment("ok");
    CHECK_NOTHROW(s.validate());
    s.method = Method::kRlCsr;
    CHECK(code_of([&] { s.validate(); }) == ErrorCode::kConfig);
    s.beta = 0.0;
    CHECK_NOTHROW(s.validate());
    CHECK_FALSE(s.train_config(3).token_level);
    CHECK(s.train_config(3).seed == 3);
    s.method = Method::kRttAon;
    CHECK(code_of([&] { s.validate(); }) == ErrorCode::kConfig);
    s = tiny_experiment("bad/name");
    CHECK(code_of([&] { s.validate(); }) == ErrorCode::kConfig);
    s = tiny_experiment("dup");
    s.seeds = {1, 1};
    CHECK(code_of([&] { s.validate(); }) == ErrorCode::kConfig);
    for (auto m : {Method::kRlAon, Method::kRlCsr, Method::kRttAon, Method::kRttCsr}) {
      CHECK(parse_method(method_name(m)) == m);
    }
  }

  TEST_CASE("sweeps expand to one spec per point") {
    const auto base = tiny_experiment("sweep");
    const auto betas = expand_beta_sweep(base, {0.0, 0.25, 0.5, 0.75, 1.0});
    REQUIRE(betas.size() == 5);
    CHECK(betas[0].method == Method::kRlCsr);
    for (std::size_t i = 1; i < 5; ++i) CHECK(betas[i].method == Method::kRttCsr);
    std::set<std::string> names;
    for (const auto& s : betas) {
      CHECK_NOTHROW(s.validate());
      names.insert(s.name);
    }
    CHECK(names.size() == 5);
    const auto grid =
        expand_weighting_grid(base, {Weighting::kRandom, Weighting::kUniform, Weighting::kTagger, Weighting::kOracle});
    REQUIRE(grid.size() == 4);
    CHECK(grid[2].weighting == Weighting::kTagger);
  }

  TEST_CASE("experiments archive deterministic, content-addressed runs") {
    const auto suite = trainable_suite(8);
    const auto root_a = scratch("exp_a");
    const auto root_b = scratch("exp_b");
    const auto spec = tiny_experiment("rtt");
    const auto a = run_experiment(spec, suite, root_a);
    const auto b = run_experiment(spec, suite, root_b);
    CHECK(a.directory.filename() == b.directory.filename());
    CHECK(a.summary.completed == 2);
    for (const char* file : {"manifest.json", "suite.jsonl", "summary.json", "summary.csv", "seed_1/metrics.csv",
                             "seed_2/final_policy.json"}) {
      CHECK(io::read_file(a.directory / file) == io::read_file(b.directory / file));
    }
    auto other = spec;
    other.beta = 0.25;
    CHECK(run_experiment(other, suite, root_a).directory != a.directory);
  }

  TEST_CASE("comparison of runs") {
    const auto suite = trainable_suite(8);
    const auto root = scratch("compare");
    auto rl = tiny_experiment("rl");
    rl.method = Method::kRlCsr;
    rl.beta = 0.0;
    auto uniform = tiny_experiment("uniform");
    uniform.weighting = Weighting::kUniform;
    const auto oracle = tiny_experiment("oracle");
    const auto d_rl = run_experiment(rl, suite, root).directory;
    const auto d_uniform = run_experiment(uniform, suite, root).directory;
    const auto d_oracle = run_experiment(oracle, suite, root).directory;

    SUBCASE("identical runs give zero deltas") {
      const auto report = compare_runs(std::vector<fs::path>{d_rl, d_rl});
      for (const auto& d : report.comparisons[0].deltas) {
        CHECK(d.mean == 0.0);
        CHECK(d.ties == 2);
      }
    }
    SUBCASE("uniform weighting matches the rl baseline exactly") {
      const auto report = compare_runs(std::vector<fs::path>{d_rl, d_uniform});
      for (const auto& d : report.comparisons[0].deltas) {
        for (double x : d.per_seed) CHECK(x == 0.0);
      }
      const auto a = load_run(d_rl);
      const auto b = load_run(d_uniform);
      for (std::size_t i = 0; i < a.seeds.size(); ++i) CHECK(a.seeds[i].history == b.seeds[i].history);
    }
    SUBCASE("swapping runs negates deltas") {
      const auto ab = compare_runs(std::vector<fs::path>{d_rl, d_oracle});
      const auto ba = compare_runs(std::vector<fs::path>{d_oracle, d_rl});
      REQUIRE(ab.comparisons[0].deltas.size() == ba.comparisons[0].deltas.size());
      for (std::size_t k = 0; k < ab.comparisons[0].deltas.size(); ++k) {
        const auto& x = ab.comparisons[0].deltas[k];
        const auto& y = ba.comparisons[0].deltas[k];
        CHECK(x.metric == y.metric);
        CHECK(x.mean == -y.mean);
        CHECK(x.wins == y.losses);
        for (std::size_t s = 0; s < x.per_seed.size(); ++s) CHECK(x.per_seed[s] == -y.per_seed[s]);
      }
      CHECK(ab.table().find("final_eval_aon") != std::string::npos);
      CHECK(ab.deltas_csv().rfind("baseline,candidate,metric", 0) == 0);
      CHECK(ab.aligned_csv.find(",rl-") != std::string::npos);
    }
    SUBCASE("mismatched suites are incomparable") {
      const auto other_root = scratch("compare_other");
      const auto d_other = run_experiment(rl, trainable_suite(9), other_root).directory;
      CHECK(code_of([&] { (void)compare_runs(std::vector<fs::path>{d_rl, d_other}); }) ==
            ErrorCode::kIncomparableRuns);
      auto fewer = rl;
      fewer.seeds = {1};
      const auto d_fewer = run_experiment(fewer, suite, other_root).directory;
      CHECK(code_of([&] { (void)compare_runs(std::vector<fs::path>{d_rl, d_fewer}); }) ==
            ErrorCode::kIncomparableRuns);
      CHECK(code_of([&] { (void)compare_runs(std::vector<fs::path>{d_rl}); }) == ErrorCode::kIncomparableRuns);
    }
  }

  TEST_CASE("bias check report") {
    const auto r = bias_check(200, 3);
    CHECK(r.trials == 200);
    CHECK(r.max_weighted_mean_residual < 1e-10);
    CHECK(r.max_leave_one_out_residual < 1e-10);
    CHECK(r.max_variance_residual < 1e-10);
    CHECK(r.short_weight == doctest::Approx(4.0 / (4.0 + 7.0 * 4096.0)));
    CHECK(r.mean_shift_ratio <= 1e-3);
    CHECK(r.intra_unchanged_under_perturbation);
    CHECK(bias_check_json(r) == bias_check_json(bias_check(200, 3)));
  }
}
