#include "cpd/kdtree.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cpd/error.hpp"
#include "cpd/scheduler.hpp"

namespace cpd {

DynKdTree::DynKdTree(const PointPool& pool) : pool_(&pool), dim_(pool.dim()) {}

DynKdTree DynKdTree::build(const PointPool& pool, std::span<const Slot> slots) {
  DynKdTree t(pool);
  std::vector<Slot> pts(slots.begin(), slots.end());
  t.reserve_arena(pts.size());
  if (!pts.empty()) t.root_ = t.build_rec(pts);
  t.size_ = pts.size();
  return t;
}

void DynKdTree::reserve_arena(std::size_t extra_points) {
  std::size_t extra_nodes = extra_points / 4 + 2 * (extra_points / kLeafCap + 2) + 64;
  if (nodes_.size() < node_cursor_ + extra_nodes) {
    nodes_.resize(node_cursor_ + extra_nodes);
    boxes_.resize(nodes_.size() * 2 * dim_);
  }
  if (leaves_.size() < leaf_cursor_ + extra_nodes) {
    leaves_.resize(leaf_cursor_ + extra_nodes);
  }
}

std::uint32_t DynKdTree::alloc_node() {
  std::size_t n = std::atomic_ref<std::size_t>(node_cursor_).fetch_add(1);
  nodes_[n] = Node{};
  return static_cast<std::uint32_t>(n);
}

std::int32_t DynKdTree::alloc_leaf() {
  std::size_t n = std::atomic_ref<std::size_t>(leaf_cursor_).fetch_add(1);
  leaves_[n] = LeafRec{};
  return static_cast<std::int32_t>(n);
}

void DynKdTree::make_leaf(std::uint32_t n, std::span<const Slot> pts) {
  Node& node = nodes_[n];
  node.split_dim = -1;
  node.left = node.right = kNone;
  if (node.leaf < 0) node.leaf = alloc_leaf();
  LeafRec& leaf = leaves_[node.leaf];
  leaf.size = static_cast<std::uint8_t>(pts.size());
  leaf.valid = static_cast<std::uint16_t>((1u << pts.size()) - 1);
  std::copy(pts.begin(), pts.end(), leaf.slots);
  node.count = static_cast<std::uint32_t>(pts.size());
  refresh_box(n);
}

std::uint32_t DynKdTree::build_rec(std::span<Slot> pts) {
  std::uint32_t n = alloc_node();
  if (pts.size() <= kLeafCap) {
    make_leaf(n, pts);
    return n;
  }
  // Bounding box of the input decides the split dimension (widest extent).
  double* lo = box_lo(n);
  double* hi = box_hi(n);
  for (int j = 0; j < dim_; ++j) {
    lo[j] = kInf;
    hi[j] = -kInf;
  }
  for (Slot s : pts) {
    auto c = pool_->coords(s);
    for (int j = 0; j < dim_; ++j) {
      lo[j] = std::min(lo[j], c[j]);
      hi[j] = std::max(hi[j], c[j]);
    }
  }
  int d = 0;
  double widest = -kInf;
  for (int j = 0; j < dim_; ++j) {
    if (hi[j] - lo[j] > widest) {
      widest = hi[j] - lo[j];
      d = j;
    }
  }
  std::size_t mid = pts.size() / 2;
  std::nth_element(pts.begin(), pts.begin() + mid, pts.end(), [&](Slot a, Slot b) {
    double ca = pool_->coords(a)[d], cb = pool_->coords(b)[d];
    if (ca != cb) return ca < cb;
    return pool_->id(a) < pool_->id(b);
  });
  Node& node = nodes_[n];
  node.split_dim = d;
  node.split_val = pool_->coords(pts[mid])[d];
  node.count = static_cast<std::uint32_t>(pts.size());
  std::uint32_t l = kNone, r = kNone;
  auto left_span = pts.subspan(0, mid);
  auto right_span = pts.subspan(mid);
  if (pts.size() > 4096) {
    Scheduler::get().fork_join([&] { l = build_rec(left_span); },
                               [&] { r = build_rec(right_span); });
  } else {
    l = build_rec(left_span);
    r = build_rec(right_span);
  }
  nodes_[n].left = l;
  nodes_[n].right = r;
  return n;
}

void DynKdTree::refresh_box(std::uint32_t n) {
  Node& node = nodes_[n];
  double* lo = box_lo(n);
  double* hi = box_hi(n);
  for (int j = 0; j < dim_; ++j) {
    lo[j] = kInf;
    hi[j] = -kInf;
  }
  if (node.leaf >= 0) {
    const LeafRec& leaf = leaves_[node.leaf];
    for (int i = 0; i < leaf.size; ++i) {
      if (!(leaf.valid & (1u << i))) continue;
      auto c = pool_->coords(leaf.slots[i]);
      for (int j = 0; j < dim_; ++j) {
        lo[j] = std::min(lo[j], c[j]);
        hi[j] = std::max(hi[j], c[j]);
      }
    }
    return;
  }
  for (std::uint32_t child : {node.left, node.right}) {
    if (child == kNone || nodes_[child].count == 0) continue;
    for (int j = 0; j < dim_; ++j) {
      lo[j] = std::min(lo[j], box_lo(child)[j]);
      hi[j] = std::max(hi[j], box_hi(child)[j]);
    }
  }
}

void DynKdTree::insert_rec(std::uint32_t n, std::span<Slot> pts) {
  Node& node = nodes_[n];
  if (node.leaf >= 0) {
    LeafRec& leaf = leaves_[node.leaf];
    std::vector<Slot> all;
    all.reserve(leaf.size + pts.size());
    for (int i = 0; i < leaf.size; ++i) {
      if (leaf.valid & (1u << i)) all.push_back(leaf.slots[i]);
    }
    std::atomic_ref<std::size_t>(tombs_).fetch_sub(leaf.size - all.size());
    all.insert(all.end(), pts.begin(), pts.end());
    if (all.size() <= kLeafCap) {
      make_leaf(n, all);
      return;
    }
    // Overfull: re-split this subtree from its live points.
    node.leaf = -1;
    std::uint32_t rebuilt = build_rec(all);
    nodes_[n] = nodes_[rebuilt];
    std::copy(box_lo(rebuilt), box_lo(rebuilt) + 2 * dim_, box_lo(n));
    return;
  }
  auto mid_it = std::partition(pts.begin(), pts.end(), [&](Slot s) {
    return pool_->coords(s)[node.split_dim] < node.split_val;
  });
  std::size_t mid = static_cast<std::size_t>(mid_it - pts.begin());
  auto left_span = pts.subspan(0, mid);
  auto right_span = pts.subspan(mid);
  std::uint32_t l = node.left, r = node.right;
  if (pts.size() > 2048) {
    Scheduler::get().fork_join(
        [&] {
          if (!left_span.empty()) insert_rec(l, left_span);
        },
        [&] {
          if (!right_span.empty()) insert_rec(r, right_span);
        });
  } else {
    if (!left_span.empty()) insert_rec(l, left_span);
    if (!right_span.empty()) insert_rec(r, right_span);
  }
  Node& self = nodes_[n];
  self.count = nodes_[l].count + nodes_[r].count;
  refresh_box(n);
}

void DynKdTree::batch_insert(std::span<const Slot> slots) {
  if (slots.empty()) return;
  std::vector<Slot> pts(slots.begin(), slots.end());
  reserve_arena(pts.size() + kLeafCap * pts.size());
  if (root_ == kNone) {
    root_ = build_rec(pts);
  } else {
    insert_rec(root_, pts);
  }
  size_ += pts.size();
}

bool DynKdTree::delete_rec(std::uint32_t n, Slot s, std::span<const double> c) {
  Node& node = nodes_[n];
  if (node.count == 0) return false;
  for (int j = 0; j < dim_; ++j) {
    if (c[j] < box_lo(n)[j] || c[j] > box_hi(n)[j]) return false;
  }
  if (node.leaf >= 0) {
    LeafRec& leaf = leaves_[node.leaf];
    for (int i = 0; i < leaf.size; ++i) {
      if ((leaf.valid & (1u << i)) && leaf.slots[i] == s) {
        leaf.valid &= static_cast<std::uint16_t>(~(1u << i));
        --node.count;
        ++tombs_;
        refresh_box(n);
        return true;
      }
    }
    return false;
  }
  bool found = delete_rec(node.left, s, c) || delete_rec(node.right, s, c);
  if (found) {
    node.count = nodes_[node.left].count + nodes_[node.right].count;
    refresh_box(n);
  }
  return found;
}

void DynKdTree::batch_delete(std::span<const Slot> slots) {
  for (Slot s : slots) {
    if (root_ == kNone || !delete_rec(root_, s, pool_->coords(s))) {
      throw UsageError("DynKdTree: id not present: " + std::to_string(pool_->id(s)));
    }
    --size_;
  }
  if (tombs_ > size_) compact();
}

void DynKdTree::compact() {
  for (std::size_t i = 0; i < leaf_cursor_; ++i) {
    LeafRec& leaf = leaves_[i];
    std::uint8_t w = 0;
    for (int r = 0; r < leaf.size; ++r) {
      if (leaf.valid & (1u << r)) leaf.slots[w++] = leaf.slots[r];
    }
    leaf.size = w;
    leaf.valid = static_cast<std::uint16_t>((1u << w) - 1);
  }
  tombs_ = 0;
}

double DynKdTree::min_sq_dist(std::uint32_t n, std::span<const double> q) const {
  double s = 0.0;
  for (int j = 0; j < dim_; ++j) {
    double d = 0.0;
    if (q[j] < box_lo(n)[j]) d = box_lo(n)[j] - q[j];
    else if (q[j] > box_hi(n)[j]) d = q[j] - box_hi(n)[j];
    s += d * d;
  }
  return s;
}

void DynKdTree::ball_rec(std::uint32_t n, std::span<const double> q, double sq_radius,
                         Slot exclude, std::vector<Slot>& out) const {
  const Node& node = nodes_[n];
  if (node.count == 0 || min_sq_dist(n, q) > sq_radius) return;
  if (node.leaf >= 0) {
    const LeafRec& leaf = leaves_[node.leaf];
    for (int i = 0; i < leaf.size; ++i) {
      if (!(leaf.valid & (1u << i)) || leaf.slots[i] == exclude) continue;
      if (sq_dist(q, pool_->coords(leaf.slots[i])) <= sq_radius) {
        out.push_back(leaf.slots[i]);
      }
    }
    return;
  }
  ball_rec(node.left, q, sq_radius, exclude, out);
  ball_rec(node.right, q, sq_radius, exclude, out);
}

std::vector<Slot> DynKdTree::range_query(std::span<const double> center, double radius,
                                         Slot exclude) const {
  if (radius < 0) throw UsageError("range_query: negative radius");
  std::vector<Slot> out;
  if (root_ != kNone) ball_rec(root_, center, radius * radius, exclude, out);
  return out;
}

void DynKdTree::nearest_rec(std::uint32_t n, std::span<const double> q, double sq_radius,
                            Slot exclude, PointId qid, Candidate& best) const {
  const Node& node = nodes_[n];
  if (node.count == 0) return;
  double bound = std::min(sq_radius, best.sqdist);
  // Equal bounds may still improve the id-pair tie, so prune strictly.
  if (min_sq_dist(n, q) > bound) return;
  if (node.leaf >= 0) {
    const LeafRec& leaf = leaves_[node.leaf];
    for (int i = 0; i < leaf.size; ++i) {
      if (!(leaf.valid & (1u << i)) || leaf.slots[i] == exclude) continue;
      double sq = sq_dist(q, pool_->coords(leaf.slots[i]));
      if (sq > sq_radius) continue;
      Candidate c = make_candidate(qid, pool_->id(leaf.slots[i]), sq);
      if (c < best) best = c;
    }
    return;
  }
  double dl = min_sq_dist(node.left, q);
  double dr = min_sq_dist(node.right, q);
  if (dl <= dr) {
    nearest_rec(node.left, q, sq_radius, exclude, qid, best);
    nearest_rec(node.right, q, sq_radius, exclude, qid, best);
  } else {
    nearest_rec(node.right, q, sq_radius, exclude, qid, best);
    nearest_rec(node.left, q, sq_radius, exclude, qid, best);
  }
}

Candidate DynKdTree::nearest_within(std::span<const double> center, double radius,
                                    Slot exclude) const {
  Candidate best;
  if (root_ == kNone) return best;
  PointId qid = exclude == kNoSlot ? -1 : pool_->id(exclude);
  nearest_rec(root_, center, radius * radius, exclude, qid, best);
  return best;
}

Candidate DynKdTree::exact_nearest(std::span<const double> center, Slot exclude,
                                   double start_radius) const {
  if (root_ == kNone || nodes_[root_].count == 0) return {};
  // A ball of this radius encloses the whole tree; an empty query at or past
  // it means no candidate exists at all.
  double cover_sq = 0.0;
  double span = 0.0;
  for (int j = 0; j < dim_; ++j) {
    double g = std::max(std::abs(center[j] - box_lo(root_)[j]),
                        std::abs(box_hi(root_)[j] - center[j]));
    cover_sq += g * g;
    span = std::max(span, box_hi(root_)[j] - box_lo(root_)[j]);
  }
  double r = start_radius;
  if (!(r > 0)) {
    // Density-scaled first guess keeps the doubling short.
    r = 2.0 * span * std::pow(static_cast<double>(nodes_[root_].count), -1.0 / dim_);
    if (!(r > 0)) r = std::sqrt(cover_sq);
  }
  for (;;) {
    Candidate c = nearest_within(center, r, exclude);
    if (c.valid()) return c;
    if (r * r >= cover_sq) return {};
    r *= 2.0;
  }
}

void DynKdTree::audit_rec(std::uint32_t n, std::size_t& live) const {
  const Node& node = nodes_[n];
  double lo[64], hi[64];
  for (int j = 0; j < dim_; ++j) {
    lo[j] = kInf;
    hi[j] = -kInf;
  }
  std::uint32_t count = 0;
  if (node.leaf >= 0) {
    const LeafRec& leaf = leaves_[node.leaf];
    for (int i = 0; i < leaf.size; ++i) {
      if (!(leaf.valid & (1u << i))) continue;
      ++count;
      auto c = pool_->coords(leaf.slots[i]);
      for (int j = 0; j < dim_; ++j) {
        lo[j] = std::min(lo[j], c[j]);
        hi[j] = std::max(hi[j], c[j]);
      }
    }
  } else {
    std::size_t sub = 0;
    audit_rec(node.left, sub);
    audit_rec(node.right, sub);
    count = nodes_[node.left].count + nodes_[node.right].count;
    if (count != sub) throw std::logic_error("kdtree audit: child count mismatch");
    for (std::uint32_t child : {node.left, node.right}) {
      if (nodes_[child].count == 0) continue;
      for (int j = 0; j < dim_; ++j) {
        lo[j] = std::min(lo[j], box_lo(child)[j]);
        hi[j] = std::max(hi[j], box_hi(child)[j]);
      }
    }
  }
  if (count != node.count) throw std::logic_error("kdtree audit: count mismatch");
  if (count > 0) {
    for (int j = 0; j < dim_; ++j) {
      if (lo[j] != box_lo(n)[j] || hi[j] != box_hi(n)[j]) {
        throw std::logic_error("kdtree audit: bounding box mismatch");
      }
    }
  }
  live += count;
}

void DynKdTree::audit() const {
  std::size_t live = 0;
  if (root_ != kNone) audit_rec(root_, live);
  if (live != size_) throw std::logic_error("kdtree audit: size mismatch");
}

}  // namespace cpd
