#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tandem {

using Rng = std::mt19937_64;

// Independent generator for a named purpose, e.g. stream(seed, "shuffle", epoch).
// Same (seed, name, index) always yields the same sequence.
Rng stream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

}  // namespace tandem
