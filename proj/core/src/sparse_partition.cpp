#include "cpd/sparse_partition.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "cpd/scheduler.hpp"

namespace cpd {

namespace {

constexpr std::uint64_t kStreamPivot = 11;
constexpr std::uint64_t kStreamReselectCoin = 12;
constexpr std::uint64_t kStreamReselectPick = 13;

struct KeyRank {
  double key;
  PointId lo, hi;
  bool operator<(const KeyRank& o) const {
    if (key != o.key) return key < o.key;
    if (lo != o.lo) return lo < o.lo;
    return hi < o.hi;
  }
};

KeyRank rank_of_candidate(const Candidate& c) {
  return KeyRank{std::sqrt(c.sqdist), c.lo, c.hi};
}

}  // namespace

// ---------------------------------------------------------------------------
// HeapSide: witness reverse index and infinite-key registry for one heap.
// ---------------------------------------------------------------------------

void SparsePartition::HeapSide::link(Slot owner, Slot witness) {
  const std::uint64_t* v = witness_owners_head.find(witness);
  std::uint32_t e;
  if (v) {
    e = static_cast<std::uint32_t>(*v);
  } else {
    if (!edge_free.empty()) {
      e = edge_free.back();
      edge_free.pop_back();
      edge_pool[e].clear();
    } else {
      e = static_cast<std::uint32_t>(edge_pool.size());
      edge_pool.emplace_back();
    }
    witness_owners_head.set(witness, e);
  }
  edge_pool[e].push_back(owner);
}

void SparsePartition::HeapSide::unlink(Slot owner, Slot witness) {
  const std::uint64_t* v = witness_owners_head.find(witness);
  if (!v) return;
  std::uint32_t e = static_cast<std::uint32_t>(*v);
  auto& owners = edge_pool[e];
  for (std::size_t i = 0; i < owners.size(); ++i) {
    if (owners[i] == owner) {
      owners[i] = owners.back();
      owners.pop_back();
      break;
    }
  }
  if (owners.empty()) {
    witness_owners_head.erase(witness);
    edge_free.push_back(e);
  }
}

std::span<const Slot> SparsePartition::HeapSide::owners_of(Slot witness) const {
  const std::uint64_t* v = witness_owners_head.find(witness);
  if (!v) return {};
  return edge_pool[static_cast<std::uint32_t>(*v)];
}

void SparsePartition::HeapSide::note_inf(Slot owner, bool inf) {
  const std::uint64_t* v = inf_pos.find(owner);
  if (inf && !v) {
    inf_pos.set(owner, inf_owners.size());
    inf_owners.push_back(owner);
  } else if (!inf && v) {
    std::size_t pos = static_cast<std::size_t>(*v);
    Slot moved = inf_owners.back();
    inf_owners[pos] = moved;
    inf_owners.pop_back();
    if (moved != owner) inf_pos.set(moved, pos);
    inf_pos.erase(owner);
  }
}

void SparsePartition::HeapSide::clear() {
  heap = BatchHeap(BatchHeap::TieRule::kPair);
  witness_owners_head.clear();
  edge_pool.clear();
  edge_free.clear();
  inf_owners.clear();
  inf_pos.clear();
}

void SparsePartition::BatchScratch::reset(std::size_t levels) {
  m1.assign(levels, {});
  m2.assign(levels, {});
  first_depth.clear();
  inserted.clear();
  deleted.clear();
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

SparsePartition::SparsePartition(int dim, const PartitionConfig& cfg)
    : cfg_(cfg),
      dim_(dim),
      pool_ptr_(std::make_unique<PointPool>(dim)),
      pool_(pool_ptr_.get()),
      rng_(cfg.seed) {
  if (dim < 1) throw UsageError("dimension must be >= 1");
}

SparsePartition SparsePartition::build(std::span<const Point> points,
                                       const PartitionConfig& cfg) {
  if (points.size() < 2) throw UsageError("build needs at least 2 points");
  SparsePartition sp(static_cast<int>(points[0].coords.size()), cfg);
  for (const Point& p : points) sp.insert_point_checked(p);
  sp.scratch_.reset(0);
  sp.full_build_from_pool();
  return sp;
}

std::uint64_t SparsePartition::hash_coords(std::span<const double> c) {
  std::uint64_t h = 0x2545f4914f6cdd1dull;
  for (double x : c) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof(bits));
    h ^= bits + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  }
  if (h == detail::FlatMap::kEmpty) h = 0;
  return h;
}

void SparsePartition::register_coords(Slot s) {
  coord_hash_.insert(hash_coords(pool_->coords(s)), s);
}

void SparsePartition::unregister_coords(Slot s) {
  std::uint64_t h = hash_coords(pool_->coords(s));
  const std::uint64_t* v = coord_hash_.find(h);
  if (v && static_cast<Slot>(*v) == s) coord_hash_.erase(h);
}

Slot SparsePartition::insert_point_checked(const Point& p) {
  if (static_cast<int>(p.coords.size()) != dim_) {
    throw UsageError("point " + std::to_string(p.id) + ": wrong dimension");
  }
  std::uint64_t h = hash_coords(p.coords);
  const std::uint64_t* v = coord_hash_.find(h);
  if (v) {
    Slot other = static_cast<Slot>(*v);
    if (pool_->live(other) &&
        std::equal(p.coords.begin(), p.coords.end(), pool_->coords(other).begin())) {
      throw UsageError("duplicate coordinates: id " + std::to_string(p.id) +
                       " matches id " + std::to_string(pool_->id(other)));
    }
  }
  Slot s = pool_->insert(p.id, p.coords);
  coord_hash_.set(h, s);
  if (depth_.size() < pool_->capacity()) {
    depth_.resize(pool_->capacity(), -1);
    slot_stamp_.resize(pool_->capacity(), 0);
    q_flag_.resize(pool_->capacity(), 0);
  }
  depth_[s] = -1;
  return s;
}

void SparsePartition::note_depth_change(Slot s, int old_depth) {
  scratch_.first_depth.insert(s, static_cast<std::uint64_t>(old_depth + 2));
}

void SparsePartition::set_depth(Slot s, int d) {
  note_depth_change(s, depth_[s]);
  depth_[s] = d;
}

std::size_t SparsePartition::packing_bound(std::size_t m) const {
  double b = static_cast<double>(m);
  for (int j = 0; j < dim_; ++j) b *= 3.0;
  if (b > 1e18) return ~std::size_t(0);
  return static_cast<std::size_t>(b);
}

// ---------------------------------------------------------------------------
// Level construction
// ---------------------------------------------------------------------------

void SparsePartition::destroy_levels(int from) {
  levels_.resize(from);
}

int SparsePartition::make_level(int index, std::vector<Slot>& members, Slot forced_pivot,
                                std::vector<Slot>& survivors) {
  const std::size_t n = members.size();
  if (n < 2) throw std::logic_error("make_level: level must hold at least 2 points");
  Slot pivot = forced_pivot;
  if (pivot == kNoSlot) {
    pivot = members[rng_.index(kStreamPivot, pivot_counter_++, n)];
  }
  auto pc = pool_->coords(pivot);
  Candidate near = Scheduler::get().parallel_reduce(
      std::size_t(0), n, Candidate{},
      [&](std::size_t i) -> Candidate {
        if (members[i] == pivot) return {};
        return make_candidate(pool_->id(pivot), pool_->id(members[i]),
                              sq_dist(pc, pool_->coords(members[i])));
      },
      [](Candidate a, Candidate b) { return a < b ? a : b; });
  double d = std::sqrt(near.sqdist);
  PointId witness_id = near.lo == pool_->id(pivot) ? near.hi : near.lo;
  Slot witness = pool_->find(witness_id);
  double side = d / (6.0 * dim_);

  levels_.push_back(std::make_unique<Level>(*pool_, d, pivot, witness, side));
  Level& lv = *levels_[index];
  lv.all.insert_batch(members);
  if (use_tree()) lv.tree_all = DynKdTree::build(*pool_, members);

  std::vector<std::uint8_t> sparse_flag(n);
  Scheduler::get().parallel_for(0, n, [&](std::size_t i) {
    sparse_flag[i] = level_is_sparse(lv, pool_->coords(members[i]), members[i]) ? 1 : 0;
  });

  std::vector<Slot> sparse;
  survivors.clear();
  for (std::size_t i = 0; i < n; ++i) {
    if (sparse_flag[i]) {
      sparse.push_back(members[i]);
    } else {
      survivors.push_back(members[i]);
    }
  }
  lv.sparse.insert_batch(sparse);
  if (cfg_.mode == PartitionMode::kTheoretical) {
    // Restricted distances need exact nearest-neighbor searches; the tree
    // stays efficient even when neighbor distances dwarf the box side.
    lv.tree_sparse = DynKdTree::build(*pool_, sparse);
  }
  for (Slot s : sparse) set_depth(s, index);
  return index;
}

void SparsePartition::build_levels(int from, std::vector<Slot> members, Slot forced_pivot) {
  destroy_levels(from);
  if (scratch_.m1.size() < levels_.size() + 64) {
    scratch_.m1.resize(levels_.size() + 64);
    scratch_.m2.resize(levels_.size() + 64);
  }
  // Level-sequential construction; each level's heap build is forked to
  // overlap the construction of deeper levels.
  struct Rec {
    SparsePartition* sp;
    void operator()(int idx, std::vector<Slot> pts, Slot pivot) {
      if (pts.empty()) return;
      std::vector<Slot> survivors;
      sp->make_level(idx, pts, pivot, survivors);
      if (sp->scratch_.m1.size() < sp->levels_.size()) {
        sp->scratch_.m1.resize(sp->levels_.size() + 64);
        sp->scratch_.m2.resize(sp->levels_.size() + 64);
      }
      if (sp->cfg_.mode == PartitionMode::kTheoretical) {
        Scheduler::get().fork_join([&] { sp->build_level_heap(idx); },
                                   [&] { (*this)(idx + 1, std::move(survivors), kNoSlot); });
      } else {
        (*this)(idx + 1, std::move(survivors), kNoSlot);
      }
    }
  };
  Rec{this}(from, std::move(members), forced_pivot);
}

void SparsePartition::full_build_from_pool() {
  std::vector<Slot> all;
  all.reserve(pool_->size());
  pool_->for_each_slot([&](Slot s) { all.push_back(s); });
  levels_.clear();
  if (all.size() < 2) {
    star_.reset();
    star_tree_.reset();
    star_cutoff_ = -1;
    return;
  }
  build_levels(0, std::move(all), kNoSlot);
  if (cfg_.mode == PartitionMode::kSimplified) rebuild_star();
}

// ---------------------------------------------------------------------------
// Spatial queries
// ---------------------------------------------------------------------------

bool SparsePartition::level_is_sparse(const Level& lv, std::span<const double> c,
                                      Slot exclude) const {
  if (!use_tree()) return lv.all.is_sparse(c, exclude);
  // Rectangle query matching the 3^k-box semantics exactly: prune with a
  // padded box, then confirm cell adjacency with the same floor arithmetic
  // the grid uses.
  std::int64_t cells[64];
  lv.all.cells_of(c, cells);
  double lo[64], hi[64];
  for (int j = 0; j < dim_; ++j) {
    lo[j] = (static_cast<double>(cells[j]) - 1.25) * lv.side;
    hi[j] = (static_cast<double>(cells[j]) + 2.25) * lv.side;
  }
  bool found = lv.tree_all->scan_rect(
      std::span<const double>(lo, dim_), std::span<const double>(hi, dim_), exclude,
      [&](Slot s) {
        std::int64_t sc[64];
        lv.all.cells_of(pool_->coords(s), sc);
        for (int j = 0; j < dim_; ++j) {
          if (std::llabs(sc[j] - cells[j]) > 1) return false;
        }
        return true;
      });
  return !found;
}

Candidate SparsePartition::probe_restricted(Slot p, int level) const {
  auto c = pool_->coords(p);
  Candidate best;
  int lo = std::max(0, level - dim_);
  for (int h = lo; h <= level; ++h) {
    const Level& lv = *levels_[h];
    if (lv.sparse.empty()) continue;
    Candidate cand;
    if (lv.tree_sparse) {
      cand = lv.tree_sparse->exact_nearest(c, p, 0.0);
    } else {
      cand = lv.sparse.exact_nearest(c, p);
    }
    if (cand < best) best = cand;
  }
  return best;
}

Candidate SparsePartition::nn_in_level(Slot p, int level) const {
  if (level == star_cutoff_ && star_tree_) {
    return star_tree_->exact_nearest(pool_->coords(p), p, 0.0);
  }
  const Level& lv = *levels_[level];
  if (lv.tree_all) return lv.tree_all->exact_nearest(pool_->coords(p), p, 0.0);
  return lv.all.exact_nearest(pool_->coords(p), p);
}

// ---------------------------------------------------------------------------
// Heap content
// ---------------------------------------------------------------------------

void SparsePartition::build_level_heap(int level) {
  Level& lv = *levels_[level];
  lv.heap = std::make_unique<HeapSide>();
  std::vector<Slot> owners;
  lv.sparse.for_each_member([&](Slot s) { owners.push_back(s); });
  std::vector<HeapEntry> entries(owners.size());
  std::vector<Candidate> cands(owners.size());
  Scheduler::get().parallel_for(0, owners.size(), [&](std::size_t i) {
    cands[i] = probe_restricted(owners[i], level);
    PointId oid = pool_->id(owners[i]);
    if (cands[i].valid()) {
      PointId wid = cands[i].lo == oid ? cands[i].hi : cands[i].lo;
      entries[i] = HeapEntry{std::sqrt(cands[i].sqdist), oid, wid};
    } else {
      entries[i] = HeapEntry{kInf, oid, -1};
    }
  });
  lv.heap->heap = BatchHeap::build(entries, BatchHeap::TieRule::kPair);
  for (std::size_t i = 0; i < owners.size(); ++i) {
    if (cands[i].valid()) {
      lv.heap->link(owners[i], pool_->find(entries[i].witness));
    } else {
      lv.heap->note_inf(owners[i], true);
    }
  }
}

void SparsePartition::rebuild_star() {
  if (levels_.empty()) {
    star_.reset();
    star_cutoff_ = -1;
    return;
  }
  star_cutoff_ = compute_star_cutoff();
  star_ = std::make_unique<HeapSide>();
  Level& lv = *levels_[star_cutoff_];
  std::vector<Slot> owners;
  lv.all.for_each_member([&](Slot s) { owners.push_back(s); });
  star_tree_ = DynKdTree::build(*pool_, owners);
  std::vector<HeapEntry> entries(owners.size());
  std::vector<Candidate> cands(owners.size());
  Scheduler::get().parallel_for(0, owners.size(), [&](std::size_t i) {
    cands[i] = star_tree_->exact_nearest(pool_->coords(owners[i]), owners[i], 0.0);
    PointId oid = pool_->id(owners[i]);
    PointId wid = cands[i].lo == oid ? cands[i].hi : cands[i].lo;
    entries[i] = HeapEntry{std::sqrt(cands[i].sqdist), oid, wid};
  });
  star_->heap = BatchHeap::build(entries, BatchHeap::TieRule::kPair);
  for (std::size_t i = 0; i < owners.size(); ++i) {
    star_->link(owners[i], pool_->find(entries[i].witness));
  }
}

int SparsePartition::compute_star_cutoff() const {
  int levels = static_cast<int>(levels_.size());
  double target = 2.0 * std::sqrt(static_cast<double>(dim_));
  int t = 0;
  double pow3 = 1.0;
  while (pow3 < target) {
    pow3 *= 3.0;
    ++t;
  }
  return std::clamp(levels - 1 - t, 0, levels - 1);
}

int SparsePartition::simplified_cutoff_level() const {
  if (cfg_.mode != PartitionMode::kSimplified || levels_.empty()) {
    throw QueryError("simplified cutoff undefined");
  }
  return star_cutoff_ + 1;
}

// ---------------------------------------------------------------------------
// Reads
// ---------------------------------------------------------------------------

PairResult SparsePartition::closest_pair() const {
  if (pool_->size() < 2) throw QueryError("closest_pair needs at least 2 points");
  const int levels = static_cast<int>(levels_.size());
  auto entry_rank = [&](const HeapEntry& e) {
    return KeyRank{e.key, std::min(e.owner, e.witness), std::max(e.owner, e.witness)};
  };
  if (cfg_.mode == PartitionMode::kSimplified) {
    HeapEntry e = star_->heap.find_min();
    KeyRank r = entry_rank(e);
    return PairResult{r.lo, r.hi, e.key};
  }
  bool have = false;
  HeapEntry best{};
  KeyRank best_rank{kInf, 0, 0};
  for (int i = std::max(0, levels - 1 - dim_); i < levels; ++i) {
    const Level& lv = *levels_[i];
    if (!lv.heap || lv.heap->heap.empty()) continue;
    HeapEntry e = lv.heap->heap.find_min();
    KeyRank r = entry_rank(e);
    if (!have || r < best_rank) {
      best = e;
      best_rank = r;
      have = true;
    }
  }
  if (!have || best.key == kInf) {
    throw std::logic_error("closest_pair: no finite heap entry");
  }
  return PairResult{best_rank.lo, best_rank.hi, best.key};
}

RestrictedDistance SparsePartition::restricted_distance(PointId p, int level) const {
  if (level < 1 || level > static_cast<int>(levels_.size())) {
    throw UsageError("restricted_distance: no such level");
  }
  Slot s = pool_->find(p);
  if (s == kNoSlot || depth_[s] != level - 1) {
    throw UsageError("restricted_distance: point " + std::to_string(p) +
                     " is not in the sparse set of level " + std::to_string(level));
  }
  Candidate c = probe_restricted(s, level - 1);
  if (!c.valid()) return RestrictedDistance{p, -1, kInf};
  PointId wid = c.lo == p ? c.hi : c.lo;
  return RestrictedDistance{p, wid, std::sqrt(c.sqdist)};
}

double SparsePartition::level_dist(int level) const { return levels_.at(level - 1)->dist; }
double SparsePartition::level_side(int level) const { return levels_.at(level - 1)->side; }
PointId SparsePartition::level_pivot(int level) const {
  return pool_->id(levels_.at(level - 1)->pivot);
}
PointId SparsePartition::level_witness(int level) const {
  return pool_->id(levels_.at(level - 1)->witness);
}

std::vector<PointId> SparsePartition::level_members(int level) const {
  std::vector<PointId> out;
  levels_.at(level - 1)->all.for_each_member([&](Slot s) { out.push_back(pool_->id(s)); });
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<PointId> SparsePartition::level_sparse_members(int level) const {
  std::vector<PointId> out;
  levels_.at(level - 1)->sparse.for_each_member([&](Slot s) { out.push_back(pool_->id(s)); });
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Heap maintenance
// ---------------------------------------------------------------------------

void SparsePartition::apply_heap_side(HeapSide& side, std::span<const Slot> remove,
                                      std::span<const Slot> add,
                                      std::vector<Slot>& recompute, bool star_side,
                                      int receptor) {
  // Removals first so the recompute set can be filtered by membership.
  if (!remove.empty()) {
    std::vector<PointId> ids;
    ids.reserve(remove.size());
    for (Slot s : remove) {
      PointId oid = pool_->id(s);
      if (!side.heap.contains(oid)) continue;
      PointId wid = side.heap.witness_of(oid);
      if (wid >= 0) side.unlink(s, pool_->find(wid));
      side.note_inf(s, false);
      ids.push_back(oid);
    }
    if (!ids.empty()) side.heap.batch_delete(ids);
  }

  if (!recompute.empty()) {
    std::sort(recompute.begin(), recompute.end(),
              [&](Slot a, Slot b) { return pool_->id(a) < pool_->id(b); });
    recompute.erase(std::unique(recompute.begin(), recompute.end()), recompute.end());
    std::erase_if(recompute, [&](Slot s) { return !side.heap.contains(pool_->id(s)); });
    std::vector<Candidate> cands(recompute.size());
    Scheduler::get().parallel_for(0, recompute.size(), [&](std::size_t i) {
      cands[i] = star_side ? nn_in_level(recompute[i], receptor)
                           : probe_restricted(recompute[i], receptor);
    });
    std::vector<KeyUpdate> updates;
    updates.reserve(recompute.size());
    for (std::size_t i = 0; i < recompute.size(); ++i) {
      Slot s = recompute[i];
      PointId oid = pool_->id(s);
      double old_key = side.heap.key_of(oid);
      PointId old_wid = side.heap.witness_of(oid);
      double new_key;
      PointId new_wid;
      if (cands[i].valid()) {
        new_key = std::sqrt(cands[i].sqdist);
        new_wid = cands[i].lo == oid ? cands[i].hi : cands[i].lo;
      } else {
        new_key = kInf;
        new_wid = -1;
      }
      if (new_key == old_key && new_wid == old_wid) continue;
      updates.push_back(KeyUpdate{oid, old_key, new_key, new_wid});
      if (old_wid >= 0) side.unlink(s, pool_->find(old_wid));
      if (new_wid >= 0) side.link(s, pool_->find(new_wid));
      side.note_inf(s, new_key == kInf);
    }
    if (!updates.empty()) {
      if (cfg_.async_heaps) {
        side.heap.async_heapify(updates);
      } else {
        side.heap.heapify(updates);
      }
    }
  }

  if (!add.empty()) {
    std::vector<Slot> adds(add.begin(), add.end());
    std::sort(adds.begin(), adds.end(),
              [&](Slot a, Slot b) { return pool_->id(a) < pool_->id(b); });
    std::vector<HeapEntry> entries(adds.size());
    std::vector<Candidate> cands(adds.size());
    Scheduler::get().parallel_for(0, adds.size(), [&](std::size_t i) {
      cands[i] = star_side ? nn_in_level(adds[i], receptor)
                           : probe_restricted(adds[i], receptor);
      PointId oid = pool_->id(adds[i]);
      if (cands[i].valid()) {
        PointId wid = cands[i].lo == oid ? cands[i].hi : cands[i].lo;
        entries[i] = HeapEntry{std::sqrt(cands[i].sqdist), oid, wid};
      } else {
        entries[i] = HeapEntry{kInf, oid, -1};
      }
    });
    side.heap.batch_insert(entries);
    for (std::size_t i = 0; i < adds.size(); ++i) {
      if (cands[i].valid()) {
        side.link(adds[i], pool_->find(entries[i].witness));
      } else {
        side.note_inf(adds[i], true);
      }
    }
  }
}

void SparsePartition::pull_receptor(int receptor, int initiator_lo, int initiator_hi) {
  if (cfg_.mode != PartitionMode::kTheoretical) return;
  if (receptor < 0 || receptor >= static_cast<int>(levels_.size())) return;
  Level& lv = *levels_[receptor];
  if (!lv.heap) return;
  HeapSide& side = *lv.heap;

  std::span<const Slot> remove = scratch_.m1[receptor];
  std::span<const Slot> add = scratch_.m2[receptor];

  std::vector<Slot> recompute;
  bool any_m2 = false;
  for (int h = initiator_lo; h <= initiator_hi; ++h) {
    for (Slot p : scratch_.m1[h]) {
      auto owners = side.owners_of(p);
      recompute.insert(recompute.end(), owners.begin(), owners.end());
    }
    if (!scratch_.m2[h].empty()) any_m2 = true;
  }
  if (any_m2) {
    double cap = side.heap.max_finite_key();
    for (int h = initiator_lo; h <= initiator_hi; ++h) {
      for (Slot p : scratch_.m2[h]) {
        auto pc = pool_->coords(p);
        auto consider = [&](Slot q) {
          PointId qid = pool_->id(q);
          if (!side.heap.contains(qid)) return;
          Candidate c = make_candidate(qid, pool_->id(p), sq_dist(pool_->coords(q), pc));
          KeyRank stored{side.heap.key_of(qid), 0, 0};
          PointId wid = side.heap.witness_of(qid);
          stored.lo = wid >= 0 ? std::min(qid, wid) : std::numeric_limits<PointId>::max();
          stored.hi = wid >= 0 ? std::max(qid, wid) : std::numeric_limits<PointId>::max();
          if (rank_of_candidate(c) < stored) recompute.push_back(q);
        };
        if (cap > -kInf) {
          if (lv.tree_sparse) {
            for (Slot q : lv.tree_sparse->range_query(pc, cap, p)) consider(q);
          } else {
            lv.sparse.for_each_within(pc, p, cap, consider);
          }
        }
      }
    }
    // Infinite keys lie beyond any cap; check them against the batch directly.
    for (Slot q : side.inf_owners) recompute.push_back(q);
  }
  apply_heap_side(side, remove, add, recompute, false, receptor);
}

void SparsePartition::naive_push(int initiator) {
  if (cfg_.mode != PartitionMode::kTheoretical) return;
  int top = std::min(static_cast<int>(levels_.size()) - 1, initiator + dim_);
  for (int j = initiator; j <= top; ++j) {
    Level& lv = *levels_[j];
    HeapSide& side = *lv.heap;
    std::span<const Slot> remove =
        j == initiator ? std::span<const Slot>(scratch_.m1[initiator]) : std::span<const Slot>();
    std::span<const Slot> add =
        j == initiator ? std::span<const Slot>(scratch_.m2[initiator]) : std::span<const Slot>();
    std::vector<Slot> recompute;
    for (Slot p : scratch_.m1[initiator]) {
      auto owners = side.owners_of(p);
      recompute.insert(recompute.end(), owners.begin(), owners.end());
    }
    if (!scratch_.m2[initiator].empty()) {
      double cap = side.heap.max_finite_key();
      for (Slot p : scratch_.m2[initiator]) {
        auto pc = pool_->coords(p);
        auto consider = [&](Slot q) {
          PointId qid = pool_->id(q);
          if (!side.heap.contains(qid)) return;
          Candidate c = make_candidate(qid, pool_->id(p), sq_dist(pool_->coords(q), pc));
          KeyRank stored{side.heap.key_of(qid), 0, 0};
          PointId wid = side.heap.witness_of(qid);
          stored.lo = wid >= 0 ? std::min(qid, wid) : std::numeric_limits<PointId>::max();
          stored.hi = wid >= 0 ? std::max(qid, wid) : std::numeric_limits<PointId>::max();
          if (rank_of_candidate(c) < stored) recompute.push_back(q);
        };
        if (cap > -kInf) {
          if (lv.tree_sparse) {
            for (Slot q : lv.tree_sparse->range_query(pc, cap, p)) consider(q);
          } else {
            lv.sparse.for_each_within(pc, p, cap, consider);
          }
        }
        for (Slot q : side.inf_owners) recompute.push_back(q);
      }
    }
    apply_heap_side(side, remove, add, recompute, false, j);
  }
}

// ---------------------------------------------------------------------------
// Batch insertion
// ---------------------------------------------------------------------------

void SparsePartition::batch_insert(std::span<const Point> points) {
  if (points.empty()) return;
  // Validate before mutating anything.
  {
    detail::FlatMap batch_ids;
    detail::FlatMap batch_hashes;
    for (const Point& p : points) {
      if (p.id < 0) throw UsageError("point ids must be non-negative");
      if (static_cast<int>(p.coords.size()) != dim_) {
        throw UsageError("point " + std::to_string(p.id) + ": wrong dimension");
      }
      if (pool_->find(p.id) != kNoSlot || !batch_ids.insert(p.id, 0)) {
        throw UsageError("duplicate point id: " + std::to_string(p.id));
      }
      std::uint64_t h = hash_coords(p.coords);
      const std::uint64_t* v = coord_hash_.find(h);
      if (v && pool_->live(static_cast<Slot>(*v)) &&
          std::equal(p.coords.begin(), p.coords.end(),
                     pool_->coords(static_cast<Slot>(*v)).begin())) {
        throw UsageError("duplicate coordinates: id " + std::to_string(p.id) + " matches id " +
                         std::to_string(pool_->id(static_cast<Slot>(*v))));
      }
      if (!batch_hashes.insert(h, p.id)) {
        throw UsageError("duplicate coordinates inside batch near id " + std::to_string(p.id));
      }
    }
  }

  ++epoch_;
  stats_ = BatchStats{};
  stats_.batch_size = points.size();
  stats_.packing_bound = packing_bound(points.size());
  scratch_.reset(levels_.size() + 64);

  std::vector<Slot> q;
  q.reserve(points.size());
  for (const Point& p : points) {
    Slot s = insert_point_checked(p);
    q.push_back(s);
    scratch_.inserted.push_back(s);
  }

  if (levels_.empty()) {
    if (pool_->size() >= 2) {
      full_build_from_pool();
      stats_.rebuilt = true;
      stats_.rebuild_level = 1;
    }
    return;
  }

  RebuildRequest req;
  insert_rec(std::move(q), {}, 0, req);

  if (req.pending) {
    std::vector<Slot> members;
    if (req.level < static_cast<int>(levels_.size())) {
      levels_[req.level]->all.for_each_member([&](Slot s) { members.push_back(s); });
    }
    members.insert(members.end(), req.extra.begin(), req.extra.end());
    build_levels(req.level, std::move(members), req.forced_pivot);
    stats_.rebuilt = true;
    stats_.rebuild_level = req.level + 1;
  }

  if (cfg_.mode == PartitionMode::kSimplified) maintain_star();

  if (stats_.down_total > stats_.packing_bound) {
    throw std::logic_error("insertion packing bound violated: " +
                           std::to_string(stats_.down_total) + " > " +
                           std::to_string(stats_.packing_bound));
  }
}

void SparsePartition::insert_rec(std::vector<Slot> q, std::vector<Slot> down, int level,
                                 RebuildRequest& req) {
  stats_.down_total += down.size();
  const std::size_t incoming = q.size() + down.size();
  if (incoming == 0) return;

  if (level >= static_cast<int>(levels_.size())) {
    req.pending = true;
    req.level = level;
    req.forced_pivot = kNoSlot;
    req.extra = std::move(q);
    req.extra.insert(req.extra.end(), down.begin(), down.end());
    return;
  }

  Level& lv = *levels_[level];
  const std::size_t si = lv.all.size();

  // Keep the pivot uniformly random over the grown set: re-select from the
  // incoming points with the matching probability, which forces a rebuild.
  double p_re = static_cast<double>(incoming) / static_cast<double>(incoming + si);
  if (rng_.coin(kStreamReselectCoin, epoch_ * 4096 + static_cast<std::uint64_t>(level), p_re)) {
    std::uint64_t pick =
        rng_.index(kStreamReselectPick, epoch_ * 4096 + static_cast<std::uint64_t>(level),
                   incoming);
    Slot forced = pick < q.size() ? q[pick] : down[pick - q.size()];
    req.pending = true;
    req.level = level;
    req.forced_pivot = forced;
    req.extra = std::move(q);
    req.extra.insert(req.extra.end(), down.begin(), down.end());
    return;
  }

  // An incoming point closer to the pivot than its witness changes d_i, hence
  // the grid side: rebuild this level with the pivot kept.
  auto pc = pool_->coords(lv.pivot);
  Candidate closer = Scheduler::get().parallel_reduce(
      std::size_t(0), incoming, Candidate{},
      [&](std::size_t i) {
        Slot s = i < q.size() ? q[i] : down[i - q.size()];
        return make_candidate(pool_->id(lv.pivot), pool_->id(s),
                              sq_dist(pc, pool_->coords(s)));
      },
      [](Candidate a, Candidate b) { return a < b ? a : b; });
  if (closer.valid() && std::sqrt(closer.sqdist) < lv.dist) {
    req.pending = true;
    req.level = level;
    req.forced_pivot = lv.pivot;
    req.extra = std::move(q);
    req.extra.insert(req.extra.end(), down.begin(), down.end());
    return;
  }

  // GridInsert: add everything to S_i first, then classify sparsity against
  // the fully updated set.
  std::vector<Slot> all_in;
  all_in.reserve(incoming);
  all_in.insert(all_in.end(), q.begin(), q.end());
  all_in.insert(all_in.end(), down.begin(), down.end());
  lv.all.insert_batch(all_in);
  if (lv.tree_all) lv.tree_all->batch_insert(all_in);

  std::vector<std::uint8_t> sparse_flag(incoming);
  Scheduler::get().parallel_for(0, incoming, [&](std::size_t i) {
    sparse_flag[i] = level_is_sparse(lv, pool_->coords(all_in[i]), all_in[i]) ? 1 : 0;
  });

  std::vector<Slot> q_next, down_next, landed;
  for (std::size_t i = 0; i < incoming; ++i) {
    Slot s = all_in[i];
    if (sparse_flag[i]) {
      landed.push_back(s);
      set_depth(s, level);
      scratch_.m2[level].push_back(s);
    } else if (i < q.size()) {
      q_next.push_back(s);
    } else {
      down_next.push_back(s);
    }
  }
  lv.sparse.insert_batch(landed);
  if (lv.tree_sparse) lv.tree_sparse->batch_insert(landed);

  // Old sparse points adjacent to a fresh batch point lose sparsity and move
  // down. Points arriving from shallower levels cannot demote anyone: they
  // were sparse one level up, which keeps them a full box away from every
  // survivor here.
  std::uint64_t stamp = next_stamp();
  std::uint64_t landed_stamp = next_stamp();
  for (Slot l : landed) slot_stamp_[l] = landed_stamp;
  std::vector<Slot> demoted;
  for (Slot x : q) {
    auto xc = pool_->coords(x);
    auto collect = [&](Slot r) {
      // Fresh sparse arrivals cannot be adjacent to any batch point (they
      // just passed the sparsity check against the full set).
      if (slot_stamp_[r] != stamp && slot_stamp_[r] != landed_stamp &&
          depth_[r] == level) {
        slot_stamp_[r] = stamp;
        demoted.push_back(r);
      }
      return false;
    };
    if (use_tree()) {
      std::int64_t cells[64];
      lv.all.cells_of(xc, cells);
      double lo[64], hi[64];
      for (int j = 0; j < dim_; ++j) {
        lo[j] = (static_cast<double>(cells[j]) - 1.25) * lv.side;
        hi[j] = (static_cast<double>(cells[j]) + 2.25) * lv.side;
      }
      lv.tree_all->scan_rect(std::span<const double>(lo, dim_),
                             std::span<const double>(hi, dim_), x, [&](Slot r) {
                               std::int64_t rc[64];
                               lv.all.cells_of(pool_->coords(r), rc);
                               for (int j = 0; j < dim_; ++j) {
                                 if (std::llabs(rc[j] - cells[j]) > 1) return false;
                               }
                               collect(r);
                               return false;
                             });
    } else {
      lv.sparse.scan_neighborhood(xc, x, collect);
    }
  }
  if (!demoted.empty()) {
    lv.sparse.delete_batch(demoted);
    if (lv.tree_sparse) lv.tree_sparse->batch_delete(demoted);
    for (Slot r : demoted) {
      note_depth_change(r, depth_[r]);
      scratch_.m1[level].push_back(r);
      down_next.push_back(r);
    }
  }

  bool more = !q_next.empty() || !down_next.empty();
  if (cfg_.mode == PartitionMode::kTheoretical && cfg_.protocol == HeapProtocol::kPull) {
    Scheduler::get().fork_join(
        [&] { pull_receptor(level, std::max(0, level - dim_), level); },
        [&] {
          if (more) {
            insert_rec(std::move(q_next), std::move(down_next), level + 1, req);
          } else {
            // The batch is absorbed; deeper receptors still owe pulls for
            // this level's initiators.
            int top = std::min(static_cast<int>(levels_.size()) - 1, level + dim_);
            Scheduler::get().parallel_for(
                static_cast<std::size_t>(level) + 1, static_cast<std::size_t>(top) + 1,
                [&](std::size_t j) {
                  pull_receptor(static_cast<int>(j), std::max(0, static_cast<int>(j) - dim_),
                                static_cast<int>(j));
                },
                1);
          }
        });
  } else {
    if (cfg_.mode == PartitionMode::kTheoretical) naive_push(level);
    if (more) insert_rec(std::move(q_next), std::move(down_next), level + 1, req);
  }
}

// ---------------------------------------------------------------------------
// Batch deletion
// ---------------------------------------------------------------------------

void SparsePartition::batch_delete(std::span<const PointId> ids) {
  if (ids.empty()) return;
  std::vector<Slot> dels;
  dels.reserve(ids.size());
  {
    detail::FlatMap seen;
    for (PointId id : ids) {
      Slot s = pool_->find(id);
      if (s == kNoSlot) throw UsageError("unknown point id: " + std::to_string(id));
      if (!seen.insert(static_cast<std::uint64_t>(id), 0)) {
        throw UsageError("duplicate id in delete batch: " + std::to_string(id));
      }
      dels.push_back(s);
    }
  }

  ++epoch_;
  stats_ = BatchStats{};
  stats_.batch_size = dels.size();
  stats_.packing_bound = packing_bound(dels.size());
  scratch_.reset(levels_.size() + 64);
  for (Slot s : dels) {
    scratch_.deleted.push_back(s);
    note_depth_change(s, depth_[s]);
  }

  if (pool_->size() - dels.size() < 2) {
    for (Slot s : dels) {
      q_flag_[s] = 0;
      unregister_coords(s);
      pool_->erase(s);
    }
    reset_idle();
    return;
  }

  const int levels = static_cast<int>(levels_.size());
  // Q_i = Q ∩ S_i, accumulated from the deepest level down.
  std::vector<std::vector<Slot>> q_by_level(levels);
  {
    std::vector<std::vector<Slot>> by_depth(levels);
    for (Slot s : dels) {
      by_depth[depth_[s]].push_back(s);
      q_flag_[s] = 1;
    }
    std::vector<Slot> acc;
    for (int i = levels - 1; i >= 0; --i) {
      acc.insert(acc.end(), by_depth[i].begin(), by_depth[i].end());
      q_by_level[i] = acc;
    }
  }

  std::vector<int> marks;
  delete_rec({}, levels - 1, q_by_level, marks);

  if (cfg_.mode == PartitionMode::kTheoretical && cfg_.protocol == HeapProtocol::kPull) {
    // Trailing receptors whose pulls were not released by the backward pass.
    int top = std::min(levels, dim_);
    Scheduler::get().parallel_for(
        0, static_cast<std::size_t>(top),
        [&](std::size_t j) {
          pull_receptor(static_cast<int>(j), std::max(0, static_cast<int>(j) - dim_),
                        static_cast<int>(j));
        },
        1);
  }

  // Drop levels emptied by the batch.
  while (!levels_.empty() && levels_.back()->all.empty()) levels_.pop_back();
  int new_levels = static_cast<int>(levels_.size());
  std::erase_if(marks, [&](int m) { return m >= new_levels; });

  if (!marks.empty()) {
    int rmin = *std::min_element(marks.begin(), marks.end());
    std::vector<Slot> members;
    levels_[rmin]->all.for_each_member([&](Slot s) { members.push_back(s); });
    build_levels(rmin, std::move(members), kNoSlot);
    stats_.rebuilt = true;
    stats_.rebuild_level = rmin + 1;
  }

  if (cfg_.mode == PartitionMode::kSimplified) maintain_star();

  for (Slot s : dels) {
    q_flag_[s] = 0;
    unregister_coords(s);
    pool_->erase(s);
  }

  if (stats_.up_total > stats_.packing_bound) {
    throw std::logic_error("deletion packing bound violated: " +
                           std::to_string(stats_.up_total) + " > " +
                           std::to_string(stats_.packing_bound));
  }
}

void SparsePartition::delete_rec(std::vector<Slot> up, int level,
                                 const std::vector<std::vector<Slot>>& q_by_level,
                                 std::vector<int>& rebuild_marks) {
  if (level < 0) return;
  std::vector<Slot> up_out = grid_delete(level, up, q_by_level, rebuild_marks);
  stats_.up_total += up_out.size();

  if (cfg_.mode == PartitionMode::kTheoretical && cfg_.protocol == HeapProtocol::kPull) {
    int receptor = level + dim_;
    Scheduler::get().fork_join(
        [&] { pull_receptor(receptor, std::max(0, receptor - dim_), receptor); },
        [&] { delete_rec(std::move(up_out), level - 1, q_by_level, rebuild_marks); });
  } else {
    if (cfg_.mode == PartitionMode::kTheoretical) naive_push(level);
    delete_rec(std::move(up_out), level - 1, q_by_level, rebuild_marks);
  }
}

std::vector<Slot> SparsePartition::grid_delete(int level, std::vector<Slot>& up_in,
                                               const std::vector<std::vector<Slot>>& q_by_level,
                                               std::vector<int>& rebuild_marks) {
  Level& lv = *levels_[level];
  const std::vector<Slot>& q_here = q_by_level[level];

  auto is_deleted = [&](Slot s) { return q_flag_[s] != 0; };

  if (is_deleted(lv.pivot) || is_deleted(lv.witness)) rebuild_marks.push_back(level);

  // Arrivals from level+1 join this level's sparse set.
  for (Slot s : up_in) set_depth(s, level);
  lv.sparse.insert_batch(up_in);
  if (lv.tree_sparse) lv.tree_sparse->batch_insert(up_in);

  // Remove this level's deleted points.
  std::vector<Slot> del_sparse;
  for (Slot s : q_here) {
    if (depth_[s] == level) {
      del_sparse.push_back(s);
      scratch_.m1[level].push_back(s);
    }
  }
  lv.all.delete_batch(q_here);
  if (lv.tree_all) lv.tree_all->batch_delete(q_here);
  lv.sparse.delete_batch(del_sparse);
  if (lv.tree_sparse) lv.tree_sparse->batch_delete(del_sparse);

  std::vector<Slot> up_out;
  std::uint64_t chain_stamp = 0;
  if (level > 0) {
    Level& below = *levels_[level - 1];
    const std::vector<Slot>& q_below = q_by_level[level - 1];
    std::vector<Slot> candidates;
    std::uint64_t cand_stamp = next_stamp();

    if (!use_tree()) {
      below.all.mark_epoch(q_below);
      for (Slot x : q_here) {
        std::int64_t cells[64], probe[64];
        below.all.cells_of(pool_->coords(x), cells);
        int off[64];
        for (int j = 0; j < dim_; ++j) off[j] = -1;
        for (;;) {
          for (int j = 0; j < dim_; ++j) probe[j] = cells[j] + off[j];
          // Boxes with two or more survivors cannot free anyone.
          if (below.all.unmarked_in_box(probe) == 1) {
            for (Slot r : below.all.bucket(probe)) {
              if (!is_deleted(r) && depth_[r] >= level && slot_stamp_[r] != cand_stamp) {
                slot_stamp_[r] = cand_stamp;
                candidates.push_back(r);
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
            if (off[j] < 1) {
              ++off[j];
              break;
            }
            off[j] = -1;
          }
          if (done) break;
        }
      }
      for (Slot r : candidates) {
        // Sparse at level-1 once Q is gone: every neighborhood box holds only
        // deleted points, besides r itself.
        std::int64_t cells[64], probe[64];
        below.all.cells_of(pool_->coords(r), cells);
        bool all_deleted = true;
        int off[64];
        for (int j = 0; j < dim_; ++j) off[j] = -1;
        for (;;) {
          for (int j = 0; j < dim_; ++j) probe[j] = cells[j] + off[j];
          bool own = true;
          for (int j = 0; j < dim_; ++j) {
            if (off[j] != 0) {
              own = false;
              break;
            }
          }
          std::size_t unmarked = below.all.unmarked_in_box(probe);
          if (unmarked > (own ? 1u : 0u)) {
            all_deleted = false;
            break;
          }
          int j = dim_;
          bool done = false;
          for (;;) {
            if (j == 0) {
              done = true;
              break;
            }
            --j;
            if (off[j] < 1) {
              ++off[j];
              break;
            }
            off[j] = -1;
          }
          if (done) break;
        }
        if (all_deleted) up_out.push_back(r);
      }
    } else {
      auto scan_below = [&](std::span<const double> center, Slot exclude, auto&& fn) {
        std::int64_t cells[64];
        below.all.cells_of(center, cells);
        double lo[64], hi[64];
        for (int j = 0; j < dim_; ++j) {
          lo[j] = (static_cast<double>(cells[j]) - 1.25) * below.side;
          hi[j] = (static_cast<double>(cells[j]) + 2.25) * below.side;
        }
        below.tree_all->scan_rect(
            std::span<const double>(lo, dim_), std::span<const double>(hi, dim_), exclude,
            [&](Slot r) {
              std::int64_t rc[64];
              below.all.cells_of(pool_->coords(r), rc);
              for (int j = 0; j < dim_; ++j) {
                if (std::llabs(rc[j] - cells[j]) > 1) return false;
              }
              return fn(r);
            });
      };
      for (Slot x : q_here) {
        scan_below(pool_->coords(x), x, [&](Slot r) {
          if (slot_stamp_[r] != cand_stamp && !is_deleted(r) && depth_[r] >= level) {
            slot_stamp_[r] = cand_stamp;
            candidates.push_back(r);
          }
          return false;
        });
      }
      for (Slot r : candidates) {
        bool all_deleted = true;
        scan_below(pool_->coords(r), r, [&](Slot other) {
          if (!is_deleted(other)) {
            all_deleted = false;
            return true;
          }
          return false;
        });
        if (all_deleted) up_out.push_back(r);
      }
    }

    if (!up_out.empty()) {
      // Mark arrivals before the chain marks so pass-throughs are told apart
      // from original sparse members when recording heap events.
      std::uint64_t arrived = next_stamp();
      for (Slot s : up_in) slot_stamp_[s] = arrived;
      chain_stamp = next_stamp();
      std::vector<Slot> out_in_sparse;
      for (Slot r : up_out) {
        if (r == lv.pivot || r == lv.witness) rebuild_marks.push_back(level);
        note_depth_change(r, depth_[r]);
        if (lv.sparse.contains(r)) {
          out_in_sparse.push_back(r);
          if (slot_stamp_[r] != arrived) scratch_.m1[level].push_back(r);
        }
        slot_stamp_[r] = chain_stamp;
      }
      lv.all.delete_batch(up_out);
      if (lv.tree_all) lv.tree_all->batch_delete(up_out);
      lv.sparse.delete_batch(out_in_sparse);
      if (lv.tree_sparse) lv.tree_sparse->batch_delete(out_in_sparse);
    }
  }

  // Arrivals that did not chain further stay in this sparse set.
  for (Slot s : up_in) {
    if (chain_stamp == 0 || slot_stamp_[s] != chain_stamp) {
      scratch_.m2[level].push_back(s);
    }
  }
  return up_out;
}

// ---------------------------------------------------------------------------
// Simplified-mode heap upkeep
// ---------------------------------------------------------------------------

void SparsePartition::maintain_star() {
  if (levels_.empty()) {
    star_.reset();
    star_tree_.reset();
    star_cutoff_ = -1;
    return;
  }
  int js = compute_star_cutoff();
  bool must_rebuild = !star_ || js != star_cutoff_ ||
                      (stats_.rebuilt && stats_.rebuild_level - 1 <= js);
  if (must_rebuild) {
    rebuild_star();
    return;
  }
  // Membership deltas of S_j from the recorded depth changes. Deleted slots
  // are still flagged (and live in the pool) at this point.
  std::vector<Slot> removed, added;
  scratch_.first_depth.for_each([&](std::uint64_t slot, std::uint64_t orig_plus2) {
    Slot s = static_cast<Slot>(slot);
    int orig = static_cast<int>(orig_plus2) - 2;
    bool was_in = orig >= js;
    bool now_in = q_flag_[s] == 0 && depth_[s] >= js;
    if (was_in && !now_in) removed.push_back(s);
    if (!was_in && now_in) added.push_back(s);
  });
  std::sort(removed.begin(), removed.end(),
            [&](Slot a, Slot b) { return pool_->id(a) < pool_->id(b); });
  std::sort(added.begin(), added.end(),
            [&](Slot a, Slot b) { return pool_->id(a) < pool_->id(b); });

  star_tree_->batch_delete(removed);
  star_tree_->batch_insert(added);

  std::vector<Slot> recompute;
  for (Slot w : removed) {
    auto owners = star_->owners_of(w);
    recompute.insert(recompute.end(), owners.begin(), owners.end());
  }
  if (!added.empty()) {
    double cap = star_->heap.max_finite_key();
    for (Slot p : added) {
      auto pc = pool_->coords(p);
      for (Slot qs : star_tree_->range_query(pc, cap, p)) {
        PointId qid = pool_->id(qs);
        if (!star_->heap.contains(qid)) continue;
        Candidate c = make_candidate(qid, pool_->id(p), sq_dist(pool_->coords(qs), pc));
        PointId wid = star_->heap.witness_of(qid);
        KeyRank stored{star_->heap.key_of(qid),
                       wid >= 0 ? std::min(qid, wid) : std::numeric_limits<PointId>::max(),
                       wid >= 0 ? std::max(qid, wid) : std::numeric_limits<PointId>::max()};
        if (rank_of_candidate(c) < stored) recompute.push_back(qs);
      }
    }
    for (Slot qs : star_->inf_owners) recompute.push_back(qs);
  }
  apply_heap_side(*star_, removed, added, recompute, true, js);
  star_cutoff_ = js;
}

void SparsePartition::reset_idle() {
  levels_.clear();
  star_.reset();
  star_tree_.reset();
  star_cutoff_ = -1;
  pool_->for_each_slot([&](Slot s) { depth_[s] = -1; });
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

ValidationReport SparsePartition::validate() const {
  ValidationReport rep;
  auto fail = [&](std::string what, int level, PointId point) {
    if (rep.clean) {
      rep.clean = false;
      rep.first_issue = ValidationIssue{std::move(what), level, point};
    }
  };

  const int levels = static_cast<int>(levels_.size());
  if (pool_->size() < 2) {
    if (levels != 0) fail("idle structure still has levels", 0, -1);
    return rep;
  }
  if (levels == 0) {
    fail("non-idle structure has no levels", 0, -1);
    return rep;
  }

  // Depth histogram doubles as the partition check: every live point belongs
  // to exactly one sparse set.
  std::vector<std::size_t> depth_count(levels, 0);
  bool depth_ok = true;
  pool_->for_each_slot([&](Slot s) {
    int d = depth_[s];
    if (d < 0 || d >= levels) {
      fail("point has no sparse-set level", 0, pool_->id(s));
      depth_ok = false;
    } else {
      ++depth_count[d];
    }
  });
  if (!depth_ok) return rep;

  std::size_t expect_members = pool_->size();
  for (int i = 0; i < levels && rep.clean; ++i) {
    const Level& lv = *levels_[i];
    const int lvl1 = i + 1;

    if (!pool_->live(lv.pivot) || depth_[lv.pivot] < i) {
      fail("pivot not a member of its level", lvl1, pool_->live(lv.pivot) ? pool_->id(lv.pivot) : -1);
      return rep;
    }
    if (!pool_->live(lv.witness) || depth_[lv.witness] < i) {
      fail("witness not a member of its level", lvl1,
           pool_->live(lv.witness) ? pool_->id(lv.witness) : -1);
      return rep;
    }
    if (lv.all.size() != expect_members) {
      fail("level size mismatch: " + std::to_string(lv.all.size()) + " vs expected " +
               std::to_string(expect_members),
           lvl1, -1);
      return rep;
    }
    expect_members -= depth_count[i];

    // d_i is the pivot's exact nearest distance within S_i.
    auto pc = pool_->coords(lv.pivot);
    Candidate near;
    bool pivot_seen = false;
    lv.all.for_each_member([&](Slot s) {
      if (s == lv.pivot) {
        pivot_seen = true;
        return;
      }
      Candidate c = make_candidate(pool_->id(lv.pivot), pool_->id(s), sq_dist(pc, pool_->coords(s)));
      if (c < near) near = c;
    });
    if (!pivot_seen) {
      fail("pivot missing from level grid", lvl1, pool_->id(lv.pivot));
      return rep;
    }
    if (!near.valid() || std::sqrt(near.sqdist) != lv.dist) {
      fail("pivot distance stale", lvl1, pool_->id(lv.pivot));
      return rep;
    }
    if (distance(pool_->point(lv.pivot), pool_->point(lv.witness)) != lv.dist) {
      fail("witness does not realize the pivot distance", lvl1, pool_->id(lv.witness));
      return rep;
    }
    if (lv.side != lv.dist / (6.0 * dim_)) {
      fail("grid side is not d_i/(6k)", lvl1, -1);
      return rep;
    }
    if (i + 1 < levels && levels_[i + 1]->dist > lv.dist / 3.0 * (1.0 + 1e-9)) {
      fail("pivot distances do not shrink by 3x", lvl1 + 1, -1);
      return rep;
    }

    // Membership and sparsity, both directions.
    std::size_t sparse_seen = 0;
    bool level_ok = true;
    lv.all.for_each_member([&](Slot s) {
      if (!level_ok || !rep.clean) return;
      if (depth_[s] < i) {
        fail("grid holds a point above its level", lvl1, pool_->id(s));
        level_ok = false;
        return;
      }
      bool sparse_here = level_is_sparse(lv, pool_->coords(s), s);
      bool in_sparse_set = lv.sparse.contains(s);
      if (sparse_here != (depth_[s] == i)) {
        fail(sparse_here ? "sparse point recorded deeper" : "non-sparse point recorded here",
             lvl1, pool_->id(s));
        level_ok = false;
        return;
      }
      if (in_sparse_set != (depth_[s] == i)) {
        fail(in_sparse_set ? "sparse set holds a deeper point" : "sparse set missing a point",
             lvl1, pool_->id(s));
        level_ok = false;
        return;
      }
      if (in_sparse_set) ++sparse_seen;
    });
    if (!rep.clean) return rep;
    if (sparse_seen != lv.sparse.size() || sparse_seen != depth_count[i]) {
      fail("sparse set size mismatch", lvl1, -1);
      return rep;
    }

    if (lv.tree_all) {
      if (lv.tree_all->size() != lv.all.size()) {
        fail("level tree out of sync", lvl1, -1);
        return rep;
      }
      try {
        lv.tree_all->audit();
        if (lv.tree_sparse) lv.tree_sparse->audit();
      } catch (const std::exception& e) {
        fail(std::string("tree audit: ") + e.what(), lvl1, -1);
        return rep;
      }
    }

    if (cfg_.mode == PartitionMode::kTheoretical) {
      if (!lv.heap) {
        fail("missing level heap", lvl1, -1);
        return rep;
      }
      const HeapSide& side = *lv.heap;
      if (side.heap.size() != lv.sparse.size()) {
        fail("heap size differs from sparse set", lvl1, -1);
        return rep;
      }
      try {
        side.heap.check_integrity();
      } catch (const std::exception& e) {
        fail(std::string("heap integrity: ") + e.what(), lvl1, -1);
        return rep;
      }
      bool heap_ok = true;
      lv.sparse.for_each_member([&](Slot s) {
        if (!heap_ok || !rep.clean) return;
        PointId oid = pool_->id(s);
        if (!side.heap.contains(oid)) {
          fail("heap missing sparse point", lvl1, oid);
          heap_ok = false;
          return;
        }
        Candidate want = probe_restricted(s, i);
        double want_key = want.valid() ? std::sqrt(want.sqdist) : kInf;
        PointId want_wid = -1;
        if (want.valid()) want_wid = want.lo == oid ? want.hi : want.lo;
        if (side.heap.key_of(oid) != want_key || side.heap.witness_of(oid) != want_wid) {
          fail("heap entry stale for point", lvl1, oid);
          heap_ok = false;
        }
      });
      if (!rep.clean) return rep;
    }
  }

  if (rep.clean && !levels_.empty()) {
    const Level& last = *levels_.back();
    if (last.all.size() != last.sparse.size() || last.all.empty()) {
      fail("last level is not fully sparse", levels, -1);
      return rep;
    }
  }

  if (cfg_.mode == PartitionMode::kSimplified && rep.clean) {
    if (!star_ || star_cutoff_ != compute_star_cutoff()) {
      fail("simplified heap cutoff stale", 0, -1);
      return rep;
    }
    const Level& lv = *levels_[star_cutoff_];
    if (star_->heap.size() != lv.all.size()) {
      fail("simplified heap size mismatch", star_cutoff_ + 1, -1);
      return rep;
    }
    try {
      star_->heap.check_integrity();
    } catch (const std::exception& e) {
      fail(std::string("simplified heap integrity: ") + e.what(), star_cutoff_ + 1, -1);
      return rep;
    }
    bool star_ok = true;
    lv.all.for_each_member([&](Slot s) {
      if (!star_ok || !rep.clean) return;
      PointId oid = pool_->id(s);
      if (!star_->heap.contains(oid)) {
        fail("simplified heap missing point", star_cutoff_ + 1, oid);
        star_ok = false;
        return;
      }
      Candidate want = nn_in_level(s, star_cutoff_);
      double want_key = want.valid() ? std::sqrt(want.sqdist) : kInf;
      PointId want_wid = want.valid() ? (want.lo == oid ? want.hi : want.lo) : -1;
      if (star_->heap.key_of(oid) != want_key || star_->heap.witness_of(oid) != want_wid) {
        fail("simplified heap entry stale", star_cutoff_ + 1, oid);
        star_ok = false;
      }
    });
  }
  return rep;
}

}  // namespace cpd
