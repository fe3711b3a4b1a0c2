#pragma once

#include <span>
#include <vector>

#include "cpd/geometry.hpp"

namespace cpd {

struct StaticConfig {
  double sample_exponent = 0.8;  // sample size n^c for the randomized grid algorithm
  std::size_t cutoff = 64;       // switch to brute force at or below this size
  std::uint64_t seed = 1;
};

// Exact quadratic scan; doubles as the verification oracle and the coarsened
// base case of the other algorithms. Ties resolve to the lexicographically
// smallest id pair.
PairResult brute_force(std::span<const Point> points);

// Median split on dimension 0 with a slab merge sorted on dimension 1.
PairResult divide_conquer(std::span<const Point> points, const StaticConfig& cfg = {});

// Randomized: recursive closest pair of an n^c sample fixes the grid side.
PairResult rabin(std::span<const Point> points, const StaticConfig& cfg = {});

// Sparse-partition construction rounds without heaps; final grid at the
// smallest pivot distance.
PairResult sieve(std::span<const Point> points, const StaticConfig& cfg = {});

// Randomized incremental insertion in doubling batches.
PairResult incremental(std::span<const Point> points, const StaticConfig& cfg = {});

}  // namespace cpd
