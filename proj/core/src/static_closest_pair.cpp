#include "cpd/static_closest_pair.hpp"

#include <algorithm>
#include <cassert>
#include <cstring>
#include <cmath>
#include <stdexcept>

#include "cpd/grid.hpp"
#include "cpd/rng.hpp"
#include "cpd/scheduler.hpp"

namespace cpd {

namespace {

constexpr std::uint64_t kStreamShuffle = 101;
constexpr std::uint64_t kStreamSample = 102;
constexpr std::uint64_t kStreamPivot = 103;

void check_input(std::span<const Point> points, const StaticConfig& cfg) {
  if (points.size() < 2) throw QueryError("closest pair needs at least 2 points");
  if (!(cfg.sample_exponent > 0.0 && cfg.sample_exponent < 1.0)) {
    throw UsageError("sample exponent must lie in (0, 1)");
  }
  if (cfg.cutoff < 2) throw UsageError("base-case cutoff must be >= 2");
}

// Local slot-indexed storage; rejects duplicate ids and duplicate coordinates
// (a zero pair distance breaks every grid side in this family).
struct Workspace {
  PointPool pool;
  std::vector<Slot> slots;

  explicit Workspace(std::span<const Point> points)
      : pool(points.empty() ? 1 : static_cast<int>(points[0].coords.size())) {
    detail::FlatMap coord_seen;
    slots.reserve(points.size());
    for (const Point& p : points) {
      std::uint64_t h = 0x9e3779b97f4a7c15ull;
      for (double c : p.coords) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(c));
        std::memcpy(&bits, &c, sizeof(bits));
        h ^= bits + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
      }
      if (h == detail::FlatMap::kEmpty) h = 0;
      const std::uint64_t* prev = coord_seen.find(h);
      if (prev) {
        Slot other = static_cast<Slot>(*prev);
        if (std::equal(p.coords.begin(), p.coords.end(), pool.coords(other).begin())) {
          throw UsageError("duplicate coordinates for ids " + std::to_string(pool.id(other)) +
                           " and " + std::to_string(p.id));
        }
      }
      Slot s = pool.insert(p.id, p.coords);
      coord_seen.set(h, s);
      slots.push_back(s);
    }
  }
};

Candidate brute_slots(const PointPool& pool, std::span<const Slot> slots) {
  const std::size_t n = slots.size();
  return Scheduler::get().parallel_reduce(
      0, n, Candidate{},
      [&](std::size_t i) {
        Candidate best;
        for (std::size_t j = i + 1; j < n; ++j) {
          Candidate c = pool.candidate(slots[i], slots[j]);
          if (c < best) best = c;
        }
        return best;
      },
      [](Candidate a, Candidate b) { return a < b ? a : b; }, 16);
}

// ---------------------------------------------------------------------------
// Divide and conquer
// ---------------------------------------------------------------------------

struct DcContext {
  const PointPool& pool;
  std::size_t cutoff;
  int sort_dim;  // slab order; dimension 1, or 0 for one-dimensional data
};

Candidate dc_rec(DcContext& ctx, std::span<Slot> idx) {
  const PointPool& pool = ctx.pool;
  if (idx.size() <= ctx.cutoff) return brute_slots(pool, idx);
  std::size_t mid = idx.size() / 2;
  std::nth_element(idx.begin(), idx.begin() + mid, idx.end(), [&](Slot a, Slot b) {
    double ca = pool.coords(a)[0], cb = pool.coords(b)[0];
    if (ca != cb) return ca < cb;
    return pool.id(a) < pool.id(b);
  });
  const double plane = pool.coords(idx[mid])[0];
  Candidate best;
  auto left = idx.subspan(0, mid);
  auto right = idx.subspan(mid);
  if (idx.size() > 2048) {
    Candidate cl, cr;
    Scheduler::get().fork_join([&] { cl = dc_rec(ctx, left); },
                               [&] { cr = dc_rec(ctx, right); });
    best = std::min(cl, cr);
  } else {
    best = std::min(dc_rec(ctx, left), dc_rec(ctx, right));
  }
  // Central slab: everything within the current best distance of the plane,
  // sorted on demand along the secondary dimension.
  double delta = std::sqrt(best.sqdist);
  std::vector<Slot> slab;
  for (Slot s : idx) {
    if (std::abs(pool.coords(s)[0] - plane) <= delta) slab.push_back(s);
  }
  const int d = ctx.sort_dim;
  std::sort(slab.begin(), slab.end(), [&](Slot a, Slot b) {
    double ca = pool.coords(a)[d], cb = pool.coords(b)[d];
    if (ca != cb) return ca < cb;
    return pool.id(a) < pool.id(b);
  });
  for (std::size_t i = 0; i < slab.size(); ++i) {
    for (std::size_t j = i + 1; j < slab.size(); ++j) {
      if (pool.coords(slab[j])[d] - pool.coords(slab[i])[d] > delta) break;
      Candidate c = pool.candidate(slab[i], slab[j]);
      if (c < best) best = c;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Rabin
// ---------------------------------------------------------------------------

Candidate rabin_rec(const PointPool& pool, std::vector<Slot>& slots, const StaticConfig& cfg,
                    const CounterRng& rng, std::uint64_t depth) {
  const std::size_t n = slots.size();
  if (n <= cfg.cutoff) return brute_slots(pool, slots);
  auto sample_size =
      static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(n), cfg.sample_exponent)));
  sample_size = std::clamp<std::size_t>(sample_size, 2, n - 1);
  // Without replacement: partial Fisher-Yates over the working array.
  for (std::size_t i = 0; i < sample_size; ++i) {
    std::size_t j = i + rng.index(kStreamSample + depth, i, n - i);
    std::swap(slots[i], slots[j]);
  }
  std::vector<Slot> sample(slots.begin(), slots.begin() + sample_size);
  Candidate of_sample = rabin_rec(pool, sample, cfg, rng, depth + 1);
  const double side = std::sqrt(of_sample.sqdist);

  GridDict grid = GridDict::build(pool, slots, side);
  Candidate best = Scheduler::get().parallel_reduce(
      std::size_t(0), n, Candidate{},
      [&](std::size_t i) {
        return grid.nearest_in_neighborhood(pool.coords(slots[i]), slots[i]);
      },
      [](Candidate a, Candidate b) { return a < b ? a : b; });
  // The sample's pair is box-adjacent at this side, so the scan rediscovers
  // it; the sample distance always upper-bounds the true closest pair.
  if (!(best.sqdist <= of_sample.sqdist)) {
    throw std::logic_error("rabin: grid side fell below the closest pair");
  }
  return best;
}

// ---------------------------------------------------------------------------
// Sieve
// ---------------------------------------------------------------------------

Candidate sieve_impl(const PointPool& pool, std::vector<Slot> work, const StaticConfig& cfg,
                     std::span<const Slot> all) {
  const int k = pool.dim();
  CounterRng rng(cfg.seed);
  double smallest_pivot_dist = kInf;
  std::uint64_t round = 0;
  std::vector<Slot> survivors;
  while (work.size() > 1) {
    Slot pivot = work[rng.index(kStreamPivot, round, work.size())];
    Candidate near = Scheduler::get().parallel_reduce(
        std::size_t(0), work.size(), Candidate{},
        [&](std::size_t i) {
          if (work[i] == pivot) return Candidate{};
          return pool.candidate(pivot, work[i]);
        },
        [](Candidate a, Candidate b) { return a < b ? a : b; });
    const double pivot_dist = std::sqrt(near.sqdist);
    smallest_pivot_dist = std::min(smallest_pivot_dist, pivot_dist);
    const double side = pivot_dist / (6.0 * k);
    GridDict grid = GridDict::build(pool, work, side);
    survivors.clear();
    std::vector<std::uint8_t> sparse(work.size());
    Scheduler::get().parallel_for(0, work.size(), [&](std::size_t i) {
      sparse[i] = grid.is_sparse(pool.coords(work[i]), work[i]) ? 1 : 0;
    });
    for (std::size_t i = 0; i < work.size(); ++i) {
      if (!sparse[i]) survivors.push_back(work[i]);
    }
    work.swap(survivors);
    ++round;
  }
  // Every pivot distance is a realized pair distance, so the smallest one
  // bounds the closest pair from above and its grid catches that pair.
  GridDict grid = GridDict::build(pool, all, smallest_pivot_dist);
  return Scheduler::get().parallel_reduce(
      std::size_t(0), all.size(), Candidate{},
      [&](std::size_t i) {
        return grid.nearest_in_neighborhood(pool.coords(all[i]), all[i]);
      },
      [](Candidate a, Candidate b) { return a < b ? a : b; });
}

// ---------------------------------------------------------------------------
// Incremental
// ---------------------------------------------------------------------------

Candidate incremental_impl(const PointPool& pool, std::vector<Slot> perm,
                           const StaticConfig& cfg) {
  const std::size_t n = perm.size();
  CounterRng rng(cfg.seed);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    std::size_t j = i + rng.index(kStreamShuffle, i, n - i);
    std::swap(perm[i], perm[j]);
  }
  std::vector<std::size_t> rank(pool.capacity(), 0);
  for (std::size_t i = 0; i < n; ++i) rank[perm[i]] = i;

  Candidate cur = pool.candidate(perm[0], perm[1]);
  GridDict grid(pool, std::sqrt(cur.sqdist));
  grid.insert_batch(std::span<const Slot>(perm.data(), 2));
  std::size_t prefix = 2;

  while (prefix < n) {
    std::size_t batch = std::min(prefix, n - prefix);
    std::size_t batch_begin = prefix;
    std::size_t batch_end = prefix + batch;
    for (;;) {
      grid.insert_batch(std::span<const Slot>(perm.data() + batch_begin,
                                              batch_end - batch_begin));
      // Earliest inserted point that forms a pair beating the current best
      // against any earlier-ranked point.
      std::size_t violator = Scheduler::get().parallel_reduce(
          batch_begin, batch_end, n,
          [&](std::size_t i) -> std::size_t {
            Slot q = perm[i];
            bool hit = grid.scan_neighborhood(pool.coords(q), q, [&](Slot s) {
              if (rank[s] >= i) return false;
              return pool.candidate(q, s) < cur;
            });
            return hit ? i : n;
          },
          [](std::size_t a, std::size_t b) { return std::min(a, b); });
      if (violator == n) break;
      Slot q = perm[violator];
      Candidate best = cur;
      grid.scan_neighborhood(pool.coords(q), q, [&](Slot s) {
        if (rank[s] < violator) {
          Candidate c = pool.candidate(q, s);
          if (c < best) best = c;
        }
        return false;
      });
      cur = best;
      grid = GridDict::build(pool,
                             std::span<const Slot>(perm.data(), violator + 1),
                             std::sqrt(cur.sqdist));
      batch_begin = violator + 1;
    }
    prefix = batch_end;
  }
  return cur;
}

}  // namespace

PairResult brute_force(std::span<const Point> points) {
  if (points.size() < 2) throw QueryError("closest pair needs at least 2 points");
  Workspace ws(points);
  return to_pair_result(brute_slots(ws.pool, ws.slots));
}

PairResult divide_conquer(std::span<const Point> points, const StaticConfig& cfg) {
  check_input(points, cfg);
  Workspace ws(points);
  DcContext ctx{ws.pool, cfg.cutoff, ws.pool.dim() > 1 ? 1 : 0};
  return to_pair_result(dc_rec(ctx, ws.slots));
}

PairResult rabin(std::span<const Point> points, const StaticConfig& cfg) {
  check_input(points, cfg);
  Workspace ws(points);
  CounterRng rng(cfg.seed);
  return to_pair_result(rabin_rec(ws.pool, ws.slots, cfg, rng, 0));
}

PairResult sieve(std::span<const Point> points, const StaticConfig& cfg) {
  check_input(points, cfg);
  Workspace ws(points);
  return to_pair_result(sieve_impl(ws.pool, ws.slots, cfg, ws.slots));
}

PairResult incremental(std::span<const Point> points, const StaticConfig& cfg) {
  check_input(points, cfg);
  Workspace ws(points);
  return to_pair_result(incremental_impl(ws.pool, std::move(ws.slots), cfg));
}

}  // namespace cpd
