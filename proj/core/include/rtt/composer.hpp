#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rtt/random.hpp"
#include "rtt/rubric.hpp"

namespace rtt {

/// Lower-case filler vocabulary shared by the response composer, the task
/// generator and the prior corpus of the toy policy.
std::span<const std::string_view> filler_words() noexcept;

/// Builds a plain-text response intended to satisfy every constraint in
/// `constraints`. Returns nullopt when the random draw did not produce a
/// satisfying text; callers retry with the same generator.
std::optional<std::string> compose_response(std::span<const Constraint> constraints, Rng& rng);

/// Like compose_response but retries up to `attempts` times.
std::optional<std::string> compose_with_retries(std::span<const Constraint> constraints, Rng& rng,
                                                int attempts = 64);

/// Random sentences over the filler vocabulary, mixed case, used to fit the
/// initial policy.
std::vector<std::string> prior_corpus(std::uint64_t seed, std::size_t sentences);

}  // namespace rtt
