#include "rtt/composer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "rtt/verifiers.hpp"

namespace rtt {

namespace {

constexpr std::string_view kFillerWords[] = {
    "the", "a",   "and", "is",  "to",  "we",  "go",  "sun",  "cat",  "dog",  "red",
    "sea", "tea", "fun", "day", "sky", "big", "old", "new",  "run",  "hot",  "car",
    "map", "bus", "box", "pen", "cup", "ride", "home", "walk", "blue", "wet", "water",
};

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

struct Plan {
  std::string prefix;
  std::string suffix;
  std::set<std::string> forbidden;
  std::vector<std::string> chunks;
  bool caps = false;
  std::int64_t max_chars = INT64_MAX;
  std::int64_t min_chars = 0;
  std::int64_t min_words = 0;
  std::int64_t max_words = INT64_MAX;
};

Plan plan_for(std::span<const Constraint> constraints) {
  Plan plan;
  for (const auto& c : constraints) {
    const auto& p = c.params;
    switch (c.kind) {
      case ConstraintKind::kAllCaps: plan.caps = true; break;
      case ConstraintKind::kStartsWith: plan.prefix = p.text; break;
      case ConstraintKind::kEndsWith: plan.suffix = p.text; break;
      case ConstraintKind::kForbiddenWord: plan.forbidden.insert(lower(p.text)); break;
      case ConstraintKind::kRequiredWord: plan.chunks.push_back(lower(p.text)); break;
      case ConstraintKind::kStatementPresent: plan.chunks.push_back(lower(p.text)); break;
      case ConstraintKind::kMaxLength: plan.max_chars = std::min(plan.max_chars, p.max); break;
      case ConstraintKind::kMinLength: plan.min_chars = std::max(plan.min_chars, p.min); break;
      case ConstraintKind::kWordCountRange:
        plan.min_words = std::max(plan.min_words, p.min);
        plan.max_words = std::min(plan.max_words, p.max);
        break;
    }
  }
  return plan;
}

std::string render(const Plan& plan, const std::vector<std::string>& chunks) {
  std::string body;
  for (const auto& chunk : chunks) {
    if (!body.empty()) body.push_back(' ');
    body += chunk;
  }
  if (plan.caps) body = upper(std::move(body));
  std::string text = plan.prefix;
  if (!text.empty() && !body.empty()) text.push_back(' ');
  text += body;
  if (!plan.suffix.empty()) {
    const bool word_start = std::isalnum(static_cast<unsigned char>(plan.suffix.front())) != 0;
    if (word_start && !text.empty()) text.push_back(' ');
    text += plan.suffix;
  }
  return text;
}

}  // namespace

std::span<const std::string_view> filler_words() noexcept { return kFillerWords; }

std::optional<std::string> compose_response(std::span<const Constraint> constraints, Rng& rng) {
  const Plan plan = plan_for(constraints);
  std::vector<std::string_view> pool;
  for (auto w : kFillerWords) {
    if (!plan.forbidden.contains(std::string(w))) pool.push_back(w);
  }

  std::vector<std::string> chunks = plan.chunks;
  const auto extra = rng.range(0, 3);
  for (std::int64_t i = 0; i < extra && !pool.empty(); ++i) {
    chunks.emplace_back(pool[rng.index(pool.size())]);
  }
  for (std::size_t i = chunks.size(); i > 1; --i) {
    std::swap(chunks[i - 1], chunks[rng.index(i)]);
  }

  std::string text = render(plan, chunks);
  for (int grow = 0; grow < 16 && !pool.empty(); ++grow) {
    const auto words = static_cast<std::int64_t>(count_words(text));
    const auto chars = static_cast<std::int64_t>(text.size());
    if (words >= plan.min_words && chars >= plan.min_chars) break;
    chunks.emplace_back(pool[rng.index(pool.size())]);
    text = render(plan, chunks);
  }

  const Response response = Response::from_text(text);
  for (const auto& c : constraints) {
    if (!check_constraint(c, response).satisfied) return std::nullopt;
  }
  return text;
}

std::optional<std::string> compose_with_retries(std::span<const Constraint> constraints, Rng& rng,
                                                int attempts) {
  for (int i = 0; i < attempts; ++i) {
    if (auto text = compose_response(constraints, rng)) return text;
  }
  return std::nullopt;
}

std::vector<std::string> prior_corpus(std::uint64_t seed, std::size_t sentences) {
  Rng rng(derive_seed(seed, "prior-corpus"));
  std::vector<std::string> corpus;
  corpus.reserve(sentences);
  for (std::size_t s = 0; s < sentences; ++s) {
    std::string line;
    if (rng.bernoulli(0.3)) {
      line = std::string(kFillerWords[rng.index(std::size(kFillerWords))]);
      line.front() = static_cast<char>(std::toupper(static_cast<unsigned char>(line.front())));
      if (rng.bernoulli(0.5)) line = upper(std::move(line));
      line += ":";
    }
    const auto words = rng.range(1, 5);
    for (std::int64_t w = 0; w < words; ++w) {
      if (!line.empty()) line.push_back(' ');
      line += kFillerWords[rng.index(std::size(kFillerWords))];
    }
    const double ending = rng.uniform();
    if (ending < 0.3) {
      line += ".";
    } else if (ending < 0.4) {
      line += "!";
    } else if (ending < 0.45) {
      line += "?";
    }
    if (rng.bernoulli(0.25)) line = upper(std::move(line));
    corpus.push_back(std::move(line));
  }
  return corpus;
}

}  // namespace rtt
