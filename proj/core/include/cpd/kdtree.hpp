#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cpd/geometry.hpp"

namespace cpd {

// Batch-dynamic spatial-median k-d tree. Interior nodes split on the widest
// dimension of their bounding box at the exact median; points live only in
// leaves of capacity 16, with validity marks for deletions. Bounding boxes
// and counts always describe valid points. Storage of invalid entries is
// compacted once they exceed half of the stored points.
class DynKdTree {
 public:
  static constexpr int kLeafCap = 16;

  explicit DynKdTree(const PointPool& pool);

  static DynKdTree build(const PointPool& pool, std::span<const Slot> slots);

  void batch_insert(std::span<const Slot> slots);
  void batch_delete(std::span<const Slot> slots);

  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

  // Valid points within the closed Euclidean ball, excluding `exclude`.
  std::vector<Slot> range_query(std::span<const double> center, double radius,
                                Slot exclude = kNoSlot) const;

  // Nearest valid point with distance <= radius (ties to the smallest id
  // pair); invalid candidate when the ball is empty.
  Candidate nearest_within(std::span<const double> center, double radius,
                           Slot exclude = kNoSlot) const;

  // Exact nearest valid point; expanding bounded searches.
  Candidate exact_nearest(std::span<const double> center, Slot exclude,
                          double start_radius) const;

  // Visits valid points inside the half-open box [lo, hi); stops early when f
  // returns true, and reports whether any call did.
  template <class F>
  bool scan_rect(std::span<const double> lo, std::span<const double> hi, Slot exclude,
                 F&& f) const {
    if (root_ == kNone) return false;
    return scan_rect_rec(root_, lo, hi, exclude, f);
  }

  // Recomputes counts and boxes from the leaves and compares with the stored
  // metadata; throws std::logic_error on mismatch.
  void audit() const;

 private:
  static constexpr std::uint32_t kNone = ~0u;

  struct Node {
    std::int32_t split_dim = -1;  // -1 for leaves
    double split_val = 0.0;
    std::uint32_t left = kNone, right = kNone;
    std::uint32_t count = 0;
    std::int32_t leaf = -1;
  };

  struct LeafRec {
    Slot slots[kLeafCap];
    std::uint16_t valid = 0;
    std::uint8_t size = 0;
  };

  const PointPool* pool_;
  int dim_;
  std::vector<Node> nodes_;
  std::vector<double> boxes_;  // 2*dim per node: lo then hi
  std::vector<LeafRec> leaves_;
  std::uint32_t root_ = kNone;
  std::size_t size_ = 0;
  std::size_t tombs_ = 0;

  // Arena cursors for reallocation-free parallel phases.
  std::size_t node_cursor_ = 0;
  std::size_t leaf_cursor_ = 0;

  double* box_lo(std::uint32_t n) { return &boxes_[std::size_t(n) * 2 * dim_]; }
  double* box_hi(std::uint32_t n) { return &boxes_[std::size_t(n) * 2 * dim_ + dim_]; }
  const double* box_lo(std::uint32_t n) const { return &boxes_[std::size_t(n) * 2 * dim_]; }
  const double* box_hi(std::uint32_t n) const { return &boxes_[std::size_t(n) * 2 * dim_ + dim_]; }

  void reserve_arena(std::size_t extra_points);
  std::uint32_t alloc_node();
  std::int32_t alloc_leaf();

  std::uint32_t build_rec(std::span<Slot> pts);
  void make_leaf(std::uint32_t n, std::span<const Slot> pts);
  void insert_rec(std::uint32_t n, std::span<Slot> pts);
  bool delete_rec(std::uint32_t n, Slot s, std::span<const double> c);
  void refresh_box(std::uint32_t n);
  void compact();

  double min_sq_dist(std::uint32_t n, std::span<const double> q) const;
  void ball_rec(std::uint32_t n, std::span<const double> q, double sq_radius, Slot exclude,
                std::vector<Slot>& out) const;
  void nearest_rec(std::uint32_t n, std::span<const double> q, double sq_radius,
                   Slot exclude, PointId qid, Candidate& best) const;

  template <class F>
  bool scan_rect_rec(std::uint32_t n, std::span<const double> lo, std::span<const double> hi,
                     Slot exclude, F& f) const {
    const Node& node = nodes_[n];
    if (node.count == 0) return false;
    for (int j = 0; j < dim_; ++j) {
      if (box_lo(n)[j] >= hi[j] || box_hi(n)[j] < lo[j]) return false;
    }
    if (node.leaf >= 0) {
      const LeafRec& leaf = leaves_[node.leaf];
      for (int i = 0; i < leaf.size; ++i) {
        if (!(leaf.valid & (1u << i)) || leaf.slots[i] == exclude) continue;
        auto c = pool_->coords(leaf.slots[i]);
        bool inside = true;
        for (int j = 0; j < dim_; ++j) {
          if (!(c[j] >= lo[j] && c[j] < hi[j])) {
            inside = false;
            break;
          }
        }
        if (inside && f(leaf.slots[i])) return true;
      }
      return false;
    }
    if (scan_rect_rec(node.left, lo, hi, exclude, f)) return true;
    return scan_rect_rec(node.right, lo, hi, exclude, f);
  }

  void audit_rec(std::uint32_t n, std::size_t& live) const;
};

}  // namespace cpd
