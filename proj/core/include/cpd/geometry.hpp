#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "cpd/detail/flat_map.hpp"
#include "cpd/error.hpp"

namespace cpd {

using PointId = std::int64_t;
using Slot = std::uint32_t;
inline constexpr Slot kNoSlot = ~Slot(0);
inline constexpr double kInf = std::numeric_limits<double>::infinity();

// A k-dimensional point with a stable non-negative integer identity.
struct Point {
  PointId id = 0;
  std::vector<double> coords;
};

// Integer grid cell: cell[j] = floor(coords[j] / side), origin at 0.
struct GridKey {
  std::vector<std::int64_t> cell;
  bool operator==(const GridKey&) const = default;
};

// A closest pair: ids ordered a < b, dist = distance(a, b).
struct PairResult {
  PointId a = -1;
  PointId b = -1;
  double dist = kInf;
  bool operator==(const PairResult&) const = default;
};

double distance(const Point& p, const Point& q);
GridKey grid_key(const Point& p, double side);

// The 3^k cells differing from key by -1/0/+1 per coordinate (including key
// itself), in lexicographic offset order.
std::vector<GridKey> neighborhood_keys(const GridKey& key);

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

// Candidate pair ordered by (squared distance, lo, hi); lo/hi are the
// normalized ids. Equal real distances tie-break to the lexicographically
// smallest id pair, which is the rule every algorithm in this project uses.
struct Candidate {
  double sqdist = kInf;
  PointId lo = std::numeric_limits<PointId>::max();
  PointId hi = std::numeric_limits<PointId>::max();

  bool valid() const { return sqdist < kInf; }

  bool operator<(const Candidate& o) const {
    if (sqdist != o.sqdist) return sqdist < o.sqdist;
    if (lo != o.lo) return lo < o.lo;
    return hi < o.hi;
  }
};

inline Candidate make_candidate(PointId x, PointId y, double sqdist) {
  return x < y ? Candidate{sqdist, x, y} : Candidate{sqdist, y, x};
}

inline PairResult to_pair_result(const Candidate& c) {
  return PairResult{c.lo, c.hi, std::sqrt(c.sqdist)};
}

// Slot-addressed point storage shared by the grids, trees, and levels of one
// structure. Slots stay stable while a point is present; freed slots are
// recycled.
class PointPool {
 public:
  explicit PointPool(int dim);

  Slot insert(PointId id, std::span<const double> coords);
  void erase(Slot s);

  int dim() const { return dim_; }
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return ids_.size(); }

  std::span<const double> coords(Slot s) const {
    return {&coords_[std::size_t(s) * dim_], static_cast<std::size_t>(dim_)};
  }
  PointId id(Slot s) const { return ids_[s]; }
  bool live(Slot s) const { return s < live_.size() && live_[s] != 0; }

  Slot find(PointId id) const {
    const std::uint64_t* v = id_to_slot_.find(static_cast<std::uint64_t>(id));
    return v ? static_cast<Slot>(*v) : kNoSlot;
  }

  Point point(Slot s) const {
    auto c = coords(s);
    return Point{ids_[s], {c.begin(), c.end()}};
  }

  double sq_dist_slots(Slot a, Slot b) const { return sq_dist(coords(a), coords(b)); }

  Candidate candidate(Slot a, Slot b) const {
    return make_candidate(ids_[a], ids_[b], sq_dist_slots(a, b));
  }

  template <class F>
  void for_each_slot(F&& f) const {
    for (Slot s = 0; s < live_.size(); ++s) {
      if (live_[s]) f(s);
    }
  }

 private:
  int dim_;
  std::vector<double> coords_;
  std::vector<PointId> ids_;
  std::vector<std::uint8_t> live_;
  std::vector<Slot> free_;
  std::size_t size_ = 0;
  detail::FlatMap id_to_slot_;
};

}  // namespace cpd
