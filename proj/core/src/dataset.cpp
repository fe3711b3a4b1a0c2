#include "cpd/dataset.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstring>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cpd/detail/flat_map.hpp"
#include "cpd/error.hpp"
#include "cpd/rng.hpp"

namespace cpd {

namespace {

constexpr std::uint64_t kStreamUniform = 7001;
constexpr std::uint64_t kStreamWalkStep = 7002;
constexpr std::uint64_t kStreamWalkRestart = 7003;
constexpr std::uint64_t kStreamWalkJump = 7004;

std::uint64_t coord_key(const std::vector<double>& c) {
  std::uint64_t h = 0x2545f4914f6cdd1dull;
  for (double x : c) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof(bits));
    h ^= bits + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  }
  if (h == detail::FlatMap::kEmpty) h = 0;
  return h;
}

void check_gen_args(std::size_t n, int k) {
  if (n < 2) throw UsageError("generator needs n >= 2");
  if (k < 1) throw UsageError("generator needs k >= 1");
}

}  // namespace

Dataset generate_uniform(std::size_t n, int k, std::uint64_t seed) {
  check_gen_args(n, k);
  CounterRng rng(seed);
  const double side = std::sqrt(static_cast<double>(n));
  Dataset ds;
  ds.dim = k;
  ds.name = std::to_string(k) + "D-Uniform-" + std::to_string(n);
  ds.points.reserve(n);
  detail::FlatMap seen;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> c(k);
    for (std::uint64_t attempt = 0;; ++attempt) {
      for (int j = 0; j < k; ++j) {
        std::uint64_t ctr = (attempt * n + i) * static_cast<std::uint64_t>(k) + j;
        c[j] = side * rng.uniform(kStreamUniform, ctr);
      }
      if (seen.insert(coord_key(c), i)) break;
    }
    ds.points.push_back(Point{static_cast<PointId>(i), c});
  }
  return ds;
}

Dataset generate_varden(std::size_t n, int k, std::uint64_t seed) {
  check_gen_args(n, k);
  CounterRng rng(seed);
  const double side = std::sqrt(static_cast<double>(n));
  const double base_sigma = 0.25 * side * std::pow(static_cast<double>(n), -1.0 / k);
  const double restart_p = 0.01;
  Dataset ds;
  ds.dim = k;
  ds.name = std::to_string(k) + "D-Varden-" + std::to_string(n);
  ds.points.reserve(n);
  detail::FlatMap seen;
  std::vector<double> walker(k);
  for (int j = 0; j < k; ++j) walker[j] = side * rng.uniform(kStreamWalkJump, j);
  // Each restart draws a fresh local step scale, log-uniform over three decades,
  // which is what makes the cluster densities vary.
  double sigma = base_sigma * std::pow(10.0, 3.0 * rng.uniform(kStreamWalkStep, 0) - 1.5);
  std::uint64_t ctr = k;
  for (std::size_t i = 0; i < n; ++i) {
    for (;;) {
      if (i > 0 && rng.coin(kStreamWalkRestart, ctr, restart_p)) {
        for (int j = 0; j < k; ++j) {
          walker[j] = side * rng.uniform(kStreamWalkJump, ctr * k + j);
        }
        sigma = base_sigma * std::pow(10.0, 3.0 * rng.uniform(kStreamWalkStep, ctr) - 1.5);
      } else if (i > 0) {
        for (int j = 0; j < k; ++j) {
          walker[j] += sigma * rng.gaussian(kStreamWalkStep, ctr * k + j);
          walker[j] = std::clamp(walker[j], 0.0, side);
        }
      }
      ++ctr;
      if (seen.insert(coord_key(walker), i)) break;
    }
    ds.points.push_back(Point{static_cast<PointId>(i), walker});
  }
  return ds;
}

Dataset load_points(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  Dataset ds;
  ds.provenance = Dataset::Provenance::kLoaded;
  ds.name = path;
  std::string line;
  std::size_t line_no = 0;
  PointId next_id = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    for (char& ch : line) {
      if (ch == ',') ch = ' ';
    }
    std::istringstream fields(line);
    std::vector<double> c;
    std::string tok;
    while (fields >> tok) {
      char* end = nullptr;
      double v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0') {
        throw UsageError(path + ":" + std::to_string(line_no) + ": non-numeric field '" +
                         tok + "'");
      }
      c.push_back(v);
    }
    if (ds.dim == 0) {
      ds.dim = static_cast<int>(c.size());
      if (ds.dim == 0) {
        throw UsageError(path + ":" + std::to_string(line_no) + ": empty data line");
      }
    }
    if (static_cast<int>(c.size()) != ds.dim) {
      throw UsageError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(ds.dim) + " fields, got " + std::to_string(c.size()));
    }
    ds.points.push_back(Point{next_id++, std::move(c)});
  }
  if (ds.points.size() < 2) {
    throw UsageError(path + ": needs at least 2 points, got " +
                     std::to_string(ds.points.size()));
  }
  return ds;
}

void save_points(const Dataset& ds, const std::string& path) {
  std::FILE* out = std::fopen(path.c_str(), "w");
  if (!out) throw UsageError("cannot write " + path);
  for (const Point& p : ds.points) {
    for (std::size_t j = 0; j < p.coords.size(); ++j) {
      std::fprintf(out, j + 1 == p.coords.size() ? "%.17g\n" : "%.17g ", p.coords[j]);
    }
  }
  std::fclose(out);
}

}  // namespace cpd
