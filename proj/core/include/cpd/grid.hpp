#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cpd/detail/flat_map.hpp"
#include "cpd/geometry.hpp"

namespace cpd {

// Hashed dictionary from grid cells to point buckets at a fixed box side.
// Points live in an external PointPool; the grid stores slots. Mutating
// batches are externally exclusive; read-only queries may run concurrently.
class GridDict {
 public:
  GridDict(const PointPool& pool, double side);

  static GridDict build(const PointPool& pool, std::span<const Slot> slots, double side);

  void insert_batch(std::span<const Slot> slots);
  void delete_batch(std::span<const Slot> slots);
  void insert_one(Slot s);
  void delete_one(Slot s);

  double side() const { return side_; }
  std::size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }
  bool contains(Slot s) const { return slot_box_.find(s) != nullptr; }
  std::size_t box_count() const { return live_boxes_; }
  const PointPool& pool() const { return *pool_; }

  // Cells of an arbitrary query position at this grid's side.
  void cells_of(std::span<const double> q, std::int64_t* out) const;

  // All stored points other than `exclude` in the 3^k cells around q.
  std::vector<Slot> neighborhood(std::span<const double> q, Slot exclude) const;

  // True iff the 3^k-cell neighborhood holds no point other than `exclude`.
  bool is_sparse(std::span<const double> q, Slot exclude) const;

  // Minimum-distance point among the 3^k-cell neighborhood, ties to the
  // smaller id. Invalid candidate when the neighborhood is empty.
  Candidate nearest_in_neighborhood(std::span<const double> q, Slot exclude) const;

  // Exact nearest stored point (no neighborhood restriction): expanding
  // Chebyshev rings with a probe budget, falling back to a full scan.
  Candidate exact_nearest(std::span<const double> q, Slot exclude) const;

  // Like exact_nearest but only reports candidates with squared distance
  // strictly below `sq_cap` (used by capped reverse searches). The cap allows
  // early ring termination; equal-distance candidates are still reported when
  // their id pair improves on `tie`.
  template <class F>
  void for_each_within(std::span<const double> q, Slot exclude, double dist_cap, F&& f) const;

  // Counter scheme: stamp a batch of member slots, then per-box subset tests
  // cost O(1). A batch of checks costs O(|marked|) total.
  void mark_epoch(std::span<const Slot> marked);
  // True iff every point in the box is marked in the current epoch (vacuously
  // true for absent/empty boxes).
  bool box_all_marked(const std::int64_t* cells) const;
  // Number of unmarked occupants of the box (0 for absent boxes).
  std::size_t unmarked_in_box(const std::int64_t* cells) const;

  // Spec-shaped convenience: marks `ids` then answers box_all_marked.
  bool box_only_contains(const GridKey& key, std::span<const Slot> ids);

  std::span<const Slot> bucket(const std::int64_t* cells) const;

  template <class F>
  void for_each_member(F&& f) const {
    for (std::uint32_t b = 0; b < buckets_.size(); ++b) {
      for (Slot s : buckets_[b]) f(s);
    }
  }

  template <class F>
  void for_each_box(F&& f) const {  // f(cells pointer, bucket span)
    for (std::uint32_t b = 0; b < buckets_.size(); ++b) {
      if (!buckets_[b].empty()) {
        f(&box_cells_[std::size_t(b) * dim_], std::span<const Slot>(buckets_[b]));
      }
    }
  }

  // Every slot in the 3^k neighborhood of q, excluding `exclude`; stops and
  // returns true as soon as `f` returns true ("found").
  template <class F>
  bool scan_neighborhood(std::span<const double> q, Slot exclude, F&& f) const;

 private:
  const PointPool* pool_;
  double side_;
  int dim_;

  // Boxes: cells arena + bucket + cached hash + mark state, recycled by index.
  std::vector<std::int64_t> box_cells_;
  std::vector<std::vector<Slot>> buckets_;
  std::vector<std::uint64_t> box_hash_;
  std::vector<std::uint64_t> mark_epoch_id_;
  std::vector<std::uint32_t> mark_count_;
  std::vector<std::uint32_t> free_boxes_;
  std::size_t live_boxes_ = 0;

  // Open-addressing table of boxIdx+1 (0 = empty).
  std::vector<std::uint32_t> table_;
  std::size_t table_mask_ = 0;

  detail::FlatMap slot_box_;  // slot -> (box << 20 would overflow; use value = box*2^32 + pos)
  std::size_t count_ = 0;
  std::uint64_t epoch_ = 0;

  std::uint64_t hash_cells(const std::int64_t* cells) const;
  std::uint32_t find_box(const std::int64_t* cells, std::uint64_t h) const;  // returns idx+1 or 0
  std::uint32_t get_or_add_box(const std::int64_t* cells, std::uint64_t h);
  void remove_box_from_table(std::uint32_t box);
  void grow_table();
  void insert_slot(Slot s);
  void remove_slot(Slot s);

  template <class F>
  bool scan_cells(const std::int64_t* cells, Slot exclude, F&& f) const;
};

template <class F>
bool GridDict::scan_neighborhood(std::span<const double> q, Slot exclude, F&& f) const {
  std::int64_t base[64];
  cells_of(q, base);
  std::int64_t probe[64];
  int off[64];
  for (int j = 0; j < dim_; ++j) off[j] = -1;
  for (;;) {
    for (int j = 0; j < dim_; ++j) probe[j] = base[j] + off[j];
    if (scan_cells(probe, exclude, f)) return true;
    int j = dim_;
    for (;;) {
      if (j == 0) return false;
      --j;
      if (off[j] < 1) {
        ++off[j];
        break;
      }
      off[j] = -1;
    }
  }
}

template <class F>
bool GridDict::scan_cells(const std::int64_t* cells, Slot exclude, F&& f) const {
  std::uint32_t b = find_box(cells, hash_cells(cells));
  if (b == 0) return false;
  for (Slot s : buckets_[b - 1]) {
    if (s != exclude && f(s)) return true;
  }
  return false;
}

template <class F>
void GridDict::for_each_within(std::span<const double> q, Slot exclude, double dist_cap,
                               F&& f) const {
  if (count_ == 0 || !(dist_cap > 0)) return;
  std::int64_t base[64];
  cells_of(q, base);
  // Ring r only holds points farther than (r-1)*side; stop past the cap.
  double budget = 2.0 * static_cast<double>(count_) + 64.0;
  double spent = 0.0;
  for (std::int64_t r = 0;; ++r) {
    if (r > 0 && static_cast<double>(r - 1) * side_ > dist_cap) return;
    double ring_cost = 1.0;
    for (int j = 0; j < dim_; ++j) ring_cost *= static_cast<double>(2 * r + 1);
    spent += ring_cost;
    if (spent > budget) {
      for_each_member([&](Slot s) {
        if (s != exclude) f(s);
      });
      return;
    }
    std::int64_t probe[64];
    std::int64_t off[64];
    for (int j = 0; j < dim_; ++j) off[j] = -r;
    for (;;) {
      std::int64_t cheb = 0;
      for (int j = 0; j < dim_; ++j) cheb = std::max(cheb, std::abs(off[j]));
      if (cheb == r) {
        for (int j = 0; j < dim_; ++j) probe[j] = base[j] + off[j];
        std::uint32_t b = find_box(probe, hash_cells(probe));
        if (b != 0) {
          for (Slot s : buckets_[b - 1]) {
            if (s != exclude) f(s);
          }
        }
      }
      int j = dim_;
      bool done = false;
      for (;;) {
        if (j == 0) {
          done = true;
          break;
        }
        --j;
        if (off[j] < r) {
          ++off[j];
          break;
        }
        off[j] = -r;
      }
      if (done) break;
    }
  }
}

}  // namespace cpd
