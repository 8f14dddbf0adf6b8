#include <cmath>
#include <set>

#include "doctest.h"
#include "rtt/attribution.hpp"
#include "rtt/composer.hpp"
#include "rtt/error.hpp"
#include "rtt/verifiers.hpp"
#include "support.hpp"

using namespace rtt;
using rtt::test::bounds;
using rtt::test::plain;
using rtt::test::text_param;

namespace {

TokenLabels labels_for(const Constraint& c, const Response& r) {
  return annotate_labels(c, r, check_constraint(c, r));
}

std::vector<std::uint8_t> ones(std::size_t n) { return std::vector<std::uint8_t>(n, 1); }

// Per-token intersection test written directly from byte ranges.
std::vector<std::uint8_t> brute_force_mask(const std::vector<Span>& spans, const Response& r) {
  std::vector<std::uint8_t> out(r.size(), 0);
  for (std::size_t t = 0; t < r.size(); ++t) {
    if (r.valid_mask()[t] == 0) continue;
    const auto tok = r.byte_offsets()[t];
    for (const auto& s : spans) {
      for (std::size_t b = tok.begin; b < tok.end; ++b) {
        if (b >= s.begin && b < s.end) out[t] = 1;
      }
    }
  }
  return out;
}

double naive_bce(const std::vector<double>& p, const std::vector<std::uint8_t>& l) {
  double sum = 0.0;
  for (std::size_t t = 0; t < p.size(); ++t) {
    const double q = std::clamp(p[t], kProbClamp, 1.0 - kProbClamp);
    sum += l[t] ? std::log(q) : std::log(1.0 - q);
  }
  return -sum / static_cast<double>(p.size());
}

}  // namespace

TEST_SUITE("attribution") {
  TEST_CASE("classify_constraint examples") {
    CHECK(classify_constraint(plain("c", ConstraintKind::kAllCaps)) == std::pair{Scope::kGlobal, Polarity::kPositive});
    CHECK(classify_constraint(text_param("c", ConstraintKind::kForbiddenWord, "x")) ==
          std::pair{Scope::kLocal, Polarity::kNegative});
    CHECK(classify_constraint(text_param("c", ConstraintKind::kStartsWith, "x")) ==
          std::pair{Scope::kLocal, Polarity::kPositive});
  }

  TEST_CASE("taxonomy is total and matches the five cases") {
    using A = AnnotationType;
    CHECK(annotation_type_for(Scope::kGlobal, Polarity::kPositive, true) == A::kAllRelevant);
    CHECK(annotation_type_for(Scope::kGlobal, Polarity::kPositive, false) == A::kAllRelevant);
    CHECK(annotation_type_for(Scope::kGlobal, Polarity::kNegative, true) == A::kAllRelevant);
    CHECK(annotation_type_for(Scope::kGlobal, Polarity::kNegative, false) == A::kAllRelevant);
    CHECK(annotation_type_for(Scope::kLocal, Polarity::kPositive, true) == A::kPartialRelevant);
    CHECK(annotation_type_for(Scope::kLocal, Polarity::kPositive, false) == A::kAllIrrelevant);
    CHECK(annotation_type_for(Scope::kLocal, Polarity::kNegative, false) == A::kPartialRelevant);
    CHECK(annotation_type_for(Scope::kLocal, Polarity::kNegative, true) == A::kAllIrrelevant);
    for (auto t : {A::kAllRelevant, A::kAllIrrelevant, A::kPartialRelevant}) {
      CHECK(parse_annotation(annotation_name(t)) == t);
    }
  }

  TEST_CASE("annotate_labels examples") {
    const auto caps = plain("c", ConstraintKind::kAllCaps);
    for (const char* text : {"ALL CAPS HERE", "not caps"}) {
      const auto r = Response::from_text(text, true);
      const auto l = labels_for(caps, r);
      CHECK(l.type == AnnotationType::kAllRelevant);
      CHECK(l.labels == ones(r.size()));
    }

    const auto fw = text_param("c", ConstraintKind::kForbiddenWord, "ride");
    const auto compliant = labels_for(fw, Response::from_text("walk home"));
    CHECK(compliant.type == AnnotationType::kAllIrrelevant);
    CHECK(compliant.labels == std::vector<std::uint8_t>(9, 0));

    const auto sw = text_param("c", ConstraintKind::kStartsWith, "My Answer:");
    const auto collapsed = labels_for(sw, Response::from_text("Answer: 42"));
    CHECK(collapsed.type == AnnotationType::kAllIrrelevant);
    CHECK(collapsed.labels == std::vector<std::uint8_t>(10, 0));

    const auto violated = labels_for(fw, Response::from_text("a fun ride home"));
    CHECK(violated.type == AnnotationType::kPartialRelevant);
    CHECK(encode_label_runs(violated.labels) == std::vector<std::pair<std::size_t, std::size_t>>{{6, 10}});

    const auto rw = text_param("c", ConstraintKind::kRequiredWord, "sun");
    try {
      (void)annotate_labels(rw, Response::from_text("sun"), ConstraintVerdict{"c", true, {}});
      FAIL("expected an annotation inconsistency");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kAnnotationInconsistency);
    }
  }

  TEST_CASE("spans_to_token_mask examples") {
    const auto r = Response::from_text("0123456789");
    const std::vector<Span> s{{2, 5}};
    CHECK(spans_to_token_mask(s, r) == std::vector<std::uint8_t>{0, 0, 1, 1, 1, 0, 0, 0, 0, 0});
    CHECK(spans_to_token_mask({}, r) == std::vector<std::uint8_t>(10, 0));
    const std::vector<Span> overlapping{{1, 4}, {3, 6}};
    const std::vector<Span> uni{{1, 6}};
    CHECK(spans_to_token_mask(overlapping, r) == spans_to_token_mask(uni, r));
    const std::vector<Span> out_of_bounds{{8, 11}};
    try {
      (void)spans_to_token_mask(out_of_bounds, r);
      FAIL("expected a range error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kRange);
    }
  }

  TEST_CASE("token mask matches the brute-force intersection oracle") {
    Rng rng(21);
    for (int trial = 0; trial < 500; ++trial) {
      const std::size_t n = 1 + rng.index(24);
      std::string text(n, 'x');
      // Multi-byte tokens and invalid positions exercise the general mapping.
      std::vector<TokenId> tokens;
      std::vector<Span> offsets;
      std::vector<std::uint8_t> valid;
      std::size_t at = 0;
      while (at < n) {
        const std::size_t w = std::min<std::size_t>(n - at, 1 + rng.index(3));
        tokens.push_back('x');
        offsets.push_back({at, at + w});
        valid.push_back(rng.bernoulli(0.8) ? 1 : 0);
        at += w;
      }
      const Response r(text, tokens, offsets, valid);
      std::vector<Span> spans;
      const std::size_t k = rng.index(4);
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t b = rng.index(n);
        spans.push_back({b, b + 1 + rng.index(n - b)});
      }
      CHECK(spans_to_token_mask(spans, r) == brute_force_mask(spans, r));
    }
  }

  TEST_CASE("oracle relevance equals the labels bit for bit") {
    const std::vector<Constraint> all = {
        plain("a", ConstraintKind::kAllCaps), text_param("b", ConstraintKind::kForbiddenWord, "ride"),
        text_param("c", ConstraintKind::kRequiredWord, "sun"), bounds("d", ConstraintKind::kMaxLength, 0, 10),
        test::statement("e", "the sky is blue", {"the sky is red"})};
    Rng rng(22);
    for (int trial = 0; trial < 300; ++trial) {
      const auto r = Response::from_text(test::random_text(rng, 7), rng.bernoulli(0.5));
      for (const auto& c : all) {
        const auto v = check_constraint(c, r);
        const auto l = annotate_labels(c, r, v);
        const auto p = oracle_relevance(c, r, v);
        REQUIRE(p.probs.size() == l.labels.size());
        for (std::size_t t = 0; t < l.labels.size(); ++t) CHECK(p.probs[t] == static_cast<double>(l.labels[t]));
        if (l.type == AnnotationType::kAllRelevant) {
          for (std::size_t t = 0; t < r.size(); ++t) CHECK(l.labels[t] == r.valid_mask()[t]);
        } else if (l.type == AnnotationType::kPartialRelevant) {
          CHECK(std::count(l.labels.begin(), l.labels.end(), 1) > 0);
        } else {
          CHECK(std::count(l.labels.begin(), l.labels.end(), 1) == 0);
        }
      }
    }
  }

  TEST_CASE("oracle relevance examples") {
    const auto fw = text_param("c", ConstraintKind::kForbiddenWord, "ride");
    const auto r = Response::from_text("go ride", true);
    const auto p = oracle_relevance(fw, r, check_constraint(fw, r));
    CHECK(p.probs == std::vector<double>{0, 0, 0, 1, 1, 1, 1, 0});

    const auto max = bounds("c", ConstraintKind::kMaxLength, 0, 3);
    const auto q = oracle_relevance(max, r, check_constraint(max, r));
    CHECK(q.probs == std::vector<double>(8, 1.0));

    const auto rw = text_param("c", ConstraintKind::kRequiredWord, "sun");
    const auto z = oracle_relevance(rw, r, check_constraint(rw, r));
    CHECK(z.probs == std::vector<double>(8, 0.0));
  }

  TEST_CASE("label run encoding round-trips") {
    Rng rng(23);
    for (int trial = 0; trial < 300; ++trial) {
      std::vector<std::uint8_t> labels(rng.index(40));
      for (auto& l : labels) l = rng.bernoulli(0.4) ? 1 : 0;
      const auto runs = encode_label_runs(labels);
      for (std::size_t i = 0; i < runs.size(); ++i) {
        CHECK(runs[i].first < runs[i].second);
        if (i > 0) CHECK(runs[i - 1].second < runs[i].first);
      }
      CHECK(decode_label_runs(runs, labels.size()) == labels);
    }
  }

  TEST_CASE("bce examples") {
    CHECK(bce_loss(std::vector<double>{1.0, 0.0, 1.0}, std::vector<std::uint8_t>{1, 0, 1}, ones(3)) <= 1e-6);
    CHECK(bce_loss(std::vector<double>(5, 0.5), std::vector<std::uint8_t>{1, 0, 1, 1, 0}, ones(5)) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce_loss(std::vector<double>{0.9, 0.1}, std::vector<std::uint8_t>{1, 0}, ones(2)) ==
          doctest::Approx(0.10536051565782628).epsilon(1e-12));
    try {
      (void)bce_loss(std::vector<double>{0.5}, std::vector<std::uint8_t>{1}, std::vector<std::uint8_t>{0});
      FAIL("expected an empty-mask error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kEmptyMask);
    }
  }

  TEST_CASE("bce properties") {
    Rng rng(24);
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t n = 1 + rng.index(16);
      std::vector<double> p(n);
      std::vector<std::uint8_t> l(n);
      std::vector<std::uint8_t> mask(n);
      for (std::size_t t = 0; t < n; ++t) {
        p[t] = rng.uniform();
        l[t] = rng.bernoulli(0.5) ? 1 : 0;
        mask[t] = rng.bernoulli(0.8) ? 1 : 0;
      }
      mask[rng.index(n)] = 1;
      const double loss = bce_loss(p, l, mask);
      CHECK(loss >= 0.0);
      std::vector<double> p_flip(n);
      std::vector<std::uint8_t> l_flip(n);
      for (std::size_t t = 0; t < n; ++t) {
        p_flip[t] = 1.0 - p[t];
        l_flip[t] = 1 - l[t];
      }
      CHECK(bce_loss(p_flip, l_flip, mask) == doctest::Approx(loss).epsilon(1e-12));

      std::vector<double> pv;
      std::vector<std::uint8_t> lv;
      for (std::size_t t = 0; t < n; ++t) {
        if (mask[t] != 0) {
          pv.push_back(p[t]);
          lv.push_back(l[t]);
        }
      }
      CHECK(loss == doctest::Approx(naive_bce(pv, lv)).epsilon(1e-12));
    }
  }

  TEST_CASE("bce logit gradient matches central differences") {
    Rng rng(25);
    const double h = 1e-5;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 1 + rng.index(12);
      std::vector<double> s(n);
      std::vector<std::uint8_t> l(n);
      std::vector<std::uint8_t> mask(n, 1);
      for (std::size_t t = 0; t < n; ++t) {
        s[t] = rng.uniform() * 6.0 - 3.0;
        l[t] = rng.bernoulli(0.5) ? 1 : 0;
        if (rng.bernoulli(0.2)) mask[t] = 0;
      }
      mask[0] = 1;
      const auto res = bce_loss_with_logits(s, l, mask);
      const std::size_t k = rng.index(n);
      auto plus = s;
      auto minus = s;
      plus[k] += h;
      minus[k] -= h;
      const double fd =
          (bce_loss_with_logits(plus, l, mask).loss - bce_loss_with_logits(minus, l, mask).loss) / (2.0 * h);
      if (mask[k] == 0) {
        CHECK(res.grad_logits[k] == 0.0);
        CHECK(std::abs(fd) < 1e-9);
      } else {
        CHECK(test::rel_err(res.grad_logits[k], fd) < 1e-5);
      }
    }
  }

  TEST_CASE("tagger learns a separable labelling") {
    const std::vector<Constraint> pool = {text_param("a", ConstraintKind::kForbiddenWord, "ride"),
                                          text_param("b", ConstraintKind::kRequiredWord, "sun"),
                                          plain("c", ConstraintKind::kAllCaps)};
    auto make = [&](std::uint64_t seed, int count) {
      Rng rng(seed);
      std::vector<TaggerExample> data;
      for (int i = 0; i < count; ++i) {
        const auto& c = pool[rng.index(pool.size())];
        const auto r = Response::from_text(test::random_text(rng, 6), true);
        data.push_back({"prompt", c, r, labels_for(c, r)});
      }
      return data;
    };
    const auto train = make(31, 300);
    const auto held_out = make(32, 200);
    const auto fit = train_tagger(train);
    for (std::size_t e = 1; e < fit.loss_history.size(); ++e) {
      CHECK(fit.loss_history[e] <= fit.loss_history[e - 1] + 1e-12);
    }
    F1Counts counts;
    for (const auto& ex : held_out) {
      const auto p = tagger_relevance(fit.params, ex.constraint, ex.response);
      accumulate_f1(counts, p.probs, ex.labels.labels, ex.response.valid_mask());
    }
    CHECK(counts.f1() > 0.95);
  }

  TEST_CASE("tagger on all-zero labels predicts below one half") {
    const auto c = text_param("a", ConstraintKind::kRequiredWord, "sun");
    Rng rng(33);
    std::vector<TaggerExample> data;
    for (int i = 0; i < 50; ++i) {
      const auto r = Response::from_text(test::random_text(rng, 5));
      data.push_back({"p", c, r, TokenLabels{"a", std::vector<std::uint8_t>(r.size(), 0), AnnotationType::kAllIrrelevant}});
    }
    const auto fit = train_tagger(data);
    for (const auto& ex : data) {
      for (double p : tagger_relevance(fit.params, c, ex.response).probs) CHECK(p < 0.5);
    }
  }

  TEST_CASE("minimal modification examples") {
    const auto caps = plain("c", ConstraintKind::kAllCaps);
    const auto r = Response::from_text("ABC DEF");
    const auto neg = generate_negative(test::single(caps), r, caps, NegativeStrategy::kMinimalModification, 1);
    CHECK_FALSE(check_constraint(caps, neg).satisfied);
    CHECK((neg.text() == "abc DEF" || neg.text() == "ABC def"));

    const auto rw = text_param("c", ConstraintKind::kRequiredWord, "budget");
    const auto orig = Response::from_text("the budget is tight");
    const auto cut = generate_negative(test::single(rw), orig, rw, NegativeStrategy::kMinimalModification, 1);
    CHECK_FALSE(check_constraint(rw, cut).satisfied);
    CHECK(cut.text() == "the is tight");

    const auto none = Response::from_text("123 !!");
    try {
      (void)generate_negative(test::single(caps), none, caps, NegativeStrategy::kMinimalModification, 1);
      FAIL("expected cannot-corrupt");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kCannotCorrupt);
    }
  }

  TEST_CASE("minimal modification flips every kind and is deterministic") {
    const Instruction instr("t", "task",
                            {plain("a", ConstraintKind::kAllCaps), text_param("b", ConstraintKind::kStartsWith, "GO:"),
                             text_param("c", ConstraintKind::kEndsWith, "!"),
                             text_param("d", ConstraintKind::kForbiddenWord, "the"),
                             text_param("e", ConstraintKind::kRequiredWord, "sun"),
                             bounds("f", ConstraintKind::kMaxLength, 0, 24),
                             bounds("g", ConstraintKind::kMinLength, 6, 0),
                             bounds("h", ConstraintKind::kWordCountRange, 2, 5),
                             test::statement("i", "water is wet", {"water is dry"})});
    const auto witness = Response::from_text("GO: SUN WATER IS WET!");
    REQUIRE(score_aon(instr, witness) == 1);
    for (const auto& c : instr.rubric()) {
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto a = generate_negative(instr, witness, c, NegativeStrategy::kMinimalModification, seed);
        CHECK_FALSE(check_constraint(c, a).satisfied);
        CHECK(a == generate_negative(instr, witness, c, NegativeStrategy::kMinimalModification, seed));
      }
    }
  }

  TEST_CASE("constraint omission drops a starts-with prefix") {
    const auto sw = text_param("s", ConstraintKind::kStartsWith, "GO:");
    const Instruction instr("t", "task", {sw, text_param("r", ConstraintKind::kRequiredWord, "sun")});
    const auto witness = Response::from_text("GO: sun");
    int lacking = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto r = generate_negative(instr, witness, sw, NegativeStrategy::kConstraintOmission, seed);
      if (!check_constraint(sw, r).satisfied) ++lacking;
    }
    CHECK(lacking > 90);
  }
}
