#pragma once

#include <cstdint>

// First path component of derived seeds, one per consumer.
namespace cpdefer::seed_tag {
inline constexpr std::uint64_t kSplit = 1;
inline constexpr std::uint64_t kTune = 2;
inline constexpr std::uint64_t kShots = 3;
inline constexpr std::uint64_t kTask = 4;
inline constexpr std::uint64_t kAlphaFree = ~std::uint64_t{0};
}  // namespace cpdefer::seed_tag
