#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cpd/geometry.hpp"

namespace cpd {

struct Dataset {
  enum class Provenance { kGenerated, kLoaded };

  std::string name;
  int dim = 0;
  std::vector<Point> points;
  Provenance provenance = Provenance::kGenerated;
};

// n i.i.d. uniform points in [0, sqrt(n)]^k; exact duplicates are re-drawn.
Dataset generate_uniform(std::size_t n, int k, std::uint64_t seed);

// Variable-density clusters: a random walker emits points with small
// Gaussian steps and restarts at a uniform location with probability 0.01
// per step. Step scale defaults are approximations of the usual seed-spreader
// settings.
Dataset generate_varden(std::size_t n, int k, std::uint64_t seed);

// Text format: one point per line, coordinates separated by whitespace or
// commas; blank lines and lines starting with '#' are ignored; the dimension
// is inferred from the first data line; ids follow line order.
Dataset load_points(const std::string& path);

// Round-trips exactly at 17 significant digits.
void save_points(const Dataset& ds, const std::string& path);

}  // namespace cpd
