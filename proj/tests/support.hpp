#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rtt/random.hpp"
#include "rtt/rubric.hpp"

namespace rtt::test {

inline Constraint plain(std::string id, ConstraintKind kind) { return make_constraint(std::move(id), kind); }

inline Constraint text_param(std::string id, ConstraintKind kind, std::string text) {
  ConstraintParams p;
  p.text = std::move(text);
  return make_constraint(std::move(id), kind, p);
}

inline Constraint bounds(std::string id, ConstraintKind kind, std::int64_t min, std::int64_t max) {
  ConstraintParams p;
  p.min = min;
  p.max = max;
  return make_constraint(std::move(id), kind, p);
}

inline Constraint statement(std::string id, std::string text, std::vector<std::string> contradictions = {}) {
  ConstraintParams p;
  p.text = std::move(text);
  p.contradictions = std::move(contradictions);
  return make_constraint(std::move(id), ConstraintKind::kStatementPresent, p);
}

inline Instruction single(const Constraint& c) { return Instruction("t", "task", {c}); }

// Two-pass population mean and standard deviation in long double.
struct Moments {
  double mean = 0.0;
  double stddev = 0.0;
};

inline Moments moments(const std::vector<double>& xs) {
  long double sum = 0.0L;
  for (double x : xs) sum += x;
  const long double mean = sum / static_cast<long double>(xs.size());
  long double ss = 0.0L;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {static_cast<double>(mean), static_cast<double>(std::sqrt(ss / static_cast<long double>(xs.size())))};
}

inline double rel_err(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

// Random text over a small alphabet of words so that matches are frequent.
inline std::string random_text(Rng& rng, std::size_t max_words) {
  static const char* const kWords[] = {"ride", "Ride", "RIDE", "rider", "sun", "SUN", "the", "a",   "cat",
                                       "tea",  "sky",  "is",   "blue",  "red", "go",  "!",   "GO:", "x1"};
  static const char* const kSeps[] = {" ", " ", ", ", ". ", "!"};
  const std::size_t n = rng.index(max_words + 1);
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) out += kSeps[rng.index(std::size(kSeps))];
    out += kWords[rng.index(std::size(kWords))];
  }
  return out;
}

}  // namespace rtt::test
