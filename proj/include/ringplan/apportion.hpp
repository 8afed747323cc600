#pragma once

#include <cstdint>
#include <vector>

namespace ringplan {

/// Largest-remainder split of `total` proportional to `weights`. Leftover
/// units go to the largest remainders; ties prefer the larger weight, then
/// the larger index. Integer weights are split exactly.
std::vector<int> apportion(const std::vector<std::int64_t>& weights, int total);
std::vector<int> apportion(const std::vector<double>& weights, int total);

/// Raises every entry to at least `floor_value`, taking the deficit from the
/// currently largest entries (lowest index on ties).
void clamp_minimum(std::vector<int>& parts, int floor_value);

}  // namespace ringplan
