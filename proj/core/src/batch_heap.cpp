#include "cpd/batch_heap.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cpd/error.hpp"
#include "cpd/scheduler.hpp"

namespace cpd {

namespace {

constexpr std::uint8_t kPending = 0x1;
constexpr std::uint8_t kResumeParent = 0x4;   // down phase
constexpr std::uint8_t kResumeLeft = 0x4;     // up phase
constexpr std::uint8_t kResumeRight = 0x8;
constexpr std::uint8_t kResumeSibling = 0x10;  // up phase

inline std::uint32_t level_of(std::uint32_t slot) {
  return std::bit_width(slot + 1u) - 1;
}

inline void cpu_pause() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_ia32_pause();
#else
  std::atomic_thread_fence(std::memory_order_seq_cst);
#endif
}

}  // namespace

BatchHeap::BatchHeap(TieRule tie) : tie_(tie) {}

BatchHeap BatchHeap::build(std::span<const HeapEntry> entries, TieRule tie) {
  BatchHeap h(tie);
  h.slots_.reserve(entries.size());
  for (const HeapEntry& e : entries) {
    if (std::isnan(e.key)) throw UsageError("heap keys must not be NaN");
    std::uint32_t idx = h.register_owner(e.owner, e.witness);
    std::uint32_t slot = static_cast<std::uint32_t>(h.slots_.size());
    h.slots_.push_back(SlotRec{0.0, 0, 0, idx});
    h.pos_[idx] = slot;
    h.write_entry(slot, e.key, e.witness);
  }
  h.flags_.assign(h.slots_.size(), 0);
  h.locks_.assign(h.slots_.size(), 0);
  h.build_heap();
  return h;
}

bool BatchHeap::less_rec(const SlotRec& a, const SlotRec& b) const {
  if (a.key != b.key) return a.key < b.key;
  if (a.lo != b.lo) return a.lo < b.lo;
  if (a.hi != b.hi) return a.hi < b.hi;
  return owner_id_[a.owner_idx] < owner_id_[b.owner_idx];
}

void BatchHeap::do_swap(std::uint32_t a, std::uint32_t b) {
  std::swap(slots_[a], slots_[b]);
  pos_[slots_[a].owner_idx] = a;
  pos_[slots_[b].owner_idx] = b;
  ++swaps_;
}

void BatchHeap::do_swap_async(std::uint32_t a, std::uint32_t b) {
  std::swap(slots_[a], slots_[b]);
  pos_[slots_[a].owner_idx] = a;
  pos_[slots_[b].owner_idx] = b;
  std::atomic_ref<std::uint64_t>(swaps_).fetch_add(1, std::memory_order_relaxed);
}

void BatchHeap::sift_down(std::uint32_t v) {
  const std::uint32_t n = static_cast<std::uint32_t>(slots_.size());
  for (;;) {
    std::uint32_t l = 2 * v + 1;
    if (l >= n) return;
    std::uint32_t c = l;
    std::uint32_t r = l + 1;
    if (r < n && less_slot(r, l)) c = r;
    if (!less_slot(c, v)) return;
    do_swap(v, c);
    v = c;
  }
}

void BatchHeap::sift_up(std::uint32_t v) {
  while (v > 0) {
    std::uint32_t p = (v - 1) / 2;
    if (!less_slot(v, p)) return;
    do_swap(v, p);
    v = p;
  }
}

void BatchHeap::build_heap() {
  const std::uint32_t n = static_cast<std::uint32_t>(slots_.size());
  if (n < 2) return;
  // Bottom-up construction, one level at a time; sift-downs of one level act
  // on disjoint subtrees.
  std::uint32_t top = level_of(n - 1);
  for (std::uint32_t lvl = top; lvl + 1 > 0; --lvl) {
    std::uint32_t first = (1u << lvl) - 1;
    std::uint32_t last = std::min(n, (1u << (lvl + 1)) - 1);
    if (first >= n / 2) continue;
    std::uint32_t end = std::min(last, n / 2);
    Scheduler::get().parallel_for(first, end, [&](std::size_t v) {
      sift_down(static_cast<std::uint32_t>(v));
    });
    if (lvl == 0) break;
  }
}

std::uint32_t BatchHeap::register_owner(PointId owner, PointId witness) {
  if (owner < 0) throw UsageError("heap owner ids must be non-negative");
  std::uint32_t idx;
  if (!free_idx_.empty()) {
    idx = free_idx_.back();
  } else {
    idx = static_cast<std::uint32_t>(owner_id_.size());
  }
  if (!owner_index_.insert(static_cast<std::uint64_t>(owner), idx)) {
    throw UsageError("duplicate heap owner: " + std::to_string(owner));
  }
  if (!free_idx_.empty()) {
    free_idx_.pop_back();
    owner_id_[idx] = owner;
    witness_id_[idx] = witness;
    pos_[idx] = 0;
  } else {
    owner_id_.push_back(owner);
    witness_id_.push_back(witness);
    pos_.push_back(0);
    seen_stamp_.push_back(0);
  }
  return idx;
}

void BatchHeap::note_key(double key) {
  if (key < kInf && key > max_finite_key_) max_finite_key_ = key;
}

void BatchHeap::write_entry(std::uint32_t slot, double key, PointId witness) {
  SlotRec& rec = slots_[slot];
  if (witness != kKeepWitness) witness_id_[rec.owner_idx] = witness;
  PointId owner = owner_id_[rec.owner_idx];
  PointId wit = witness_id_[rec.owner_idx];
  rec.key = key;
  if (tie_ == TieRule::kPair && key < kInf && wit >= 0) {
    rec.lo = std::min(owner, wit);
    rec.hi = std::max(owner, wit);
  } else if (tie_ == TieRule::kPair && key == kInf) {
    rec.lo = std::numeric_limits<PointId>::max();
    rec.hi = std::numeric_limits<PointId>::max();
  } else {
    rec.lo = owner;
    rec.hi = owner;
  }
  note_key(key);
}

HeapEntry BatchHeap::find_min() const {
  if (slots_.empty()) throw QueryError("find_min on empty heap");
  const SlotRec& r = slots_[0];
  return HeapEntry{r.key, owner_id_[r.owner_idx], witness_id_[r.owner_idx]};
}

HeapEntry BatchHeap::pop_min() {
  HeapEntry top = find_min();
  std::uint32_t idx = slots_[0].owner_idx;
  std::uint32_t last = static_cast<std::uint32_t>(slots_.size()) - 1;
  if (last != 0) do_swap(0, last);
  slots_.pop_back();
  owner_index_.erase(static_cast<std::uint64_t>(owner_id_[idx]));
  free_idx_.push_back(idx);
  if (!slots_.empty()) sift_down(0);
  flags_.resize(slots_.size());
  locks_.resize(slots_.size());
  return top;
}

bool BatchHeap::contains(PointId owner) const {
  return owner_index_.find(static_cast<std::uint64_t>(owner)) != nullptr;
}

std::uint32_t BatchHeap::owner_idx_checked(PointId owner, const char* op) const {
  const std::uint64_t* v = owner_index_.find(static_cast<std::uint64_t>(owner));
  if (!v) {
    throw UsageError(std::string(op) + ": unknown owner " + std::to_string(owner));
  }
  return static_cast<std::uint32_t>(*v);
}

double BatchHeap::key_of(PointId owner) const {
  return slots_[pos_[owner_idx_checked(owner, "key_of")]].key;
}

PointId BatchHeap::witness_of(PointId owner) const {
  return witness_id_[owner_idx_checked(owner, "witness_of")];
}

std::vector<HeapEntry> BatchHeap::entries() const {
  std::vector<HeapEntry> out;
  out.reserve(slots_.size());
  for (const SlotRec& r : slots_) {
    out.push_back(HeapEntry{r.key, owner_id_[r.owner_idx], witness_id_[r.owner_idx]});
  }
  return out;
}

void BatchHeap::check_integrity() const {
  const std::uint32_t n = static_cast<std::uint32_t>(slots_.size());
  for (std::uint32_t v = 1; v < n; ++v) {
    if (less_slot(v, (v - 1) / 2)) {
      throw std::logic_error("heap order violated at slot " + std::to_string(v));
    }
  }
  for (std::uint32_t v = 0; v < n; ++v) {
    if (pos_[slots_[v].owner_idx] != v) {
      throw std::logic_error("handle desync at slot " + std::to_string(v));
    }
    if (!owner_index_.find(static_cast<std::uint64_t>(owner_id_[slots_[v].owner_idx]))) {
      throw std::logic_error("owner index missing entry");
    }
  }
  if (owner_index_.size() != n) throw std::logic_error("owner index size mismatch");
  for (std::uint32_t v = 0; v < n; ++v) {
    if (v < flags_.size() && flags_[v] != 0) throw std::logic_error("dangling async flag");
  }
}

std::vector<std::uint32_t> BatchHeap::classify_updates(std::span<const KeyUpdate> updates,
                                                       std::vector<std::uint32_t>& ups) {
  ++stamp_;
  std::vector<std::uint32_t> downs;
  for (const KeyUpdate& u : updates) {
    std::uint32_t idx = owner_idx_checked(u.owner, "heapify");
    if (seen_stamp_[idx] == stamp_) {
      throw UsageError("heapify: duplicate owner in batch: " + std::to_string(u.owner) +
                       " (coalesce to a single net update)");
    }
    seen_stamp_[idx] = stamp_;
    std::uint32_t slot = pos_[idx];
    if (slots_[slot].key != u.old_key) {
      throw UsageError("heapify: stale old key for owner " + std::to_string(u.owner));
    }
    if (std::isnan(u.new_key)) throw UsageError("heap keys must not be NaN");
    SlotRec before = slots_[slot];
    write_entry(slot, u.new_key, u.new_witness);
    if (less_rec(slots_[slot], before)) {
      ups.push_back(idx);
    } else if (less_rec(before, slots_[slot])) {
      downs.push_back(idx);
    }
  }
  return downs;
}

void BatchHeap::repair(std::vector<std::uint32_t>& downs, std::vector<std::uint32_t>& ups) {
  if (async_mode_) {
    repair_async(downs, ups);
  } else {
    repair_sync(downs, ups);
  }
}

void BatchHeap::repair_sync(std::vector<std::uint32_t>& downs, std::vector<std::uint32_t>& ups) {
  if (slots_.size() < 2) return;
  const std::uint32_t top = level_of(static_cast<std::uint32_t>(slots_.size()) - 1);

  if (!downs.empty()) {
    // Group the raised keys by level; deepest first. Sift-downs started from
    // one level act on disjoint subtrees and may run in parallel.
    std::vector<std::vector<std::uint32_t>> by_level(top + 1);
    for (std::uint32_t idx : downs) by_level[level_of(pos_[idx])].push_back(idx);
    for (std::uint32_t lvl = top; lvl + 1 > 0; --lvl) {
      auto& group = by_level[lvl];
      Scheduler::get().parallel_for(0, group.size(), [&](std::size_t i) {
        sift_down(pos_[group[i]]);
      }, 1);
      if (lvl == 0) break;
    }
  }

  if (!ups.empty()) {
    // Lowered keys get displaced both by the down passes and by earlier
    // sift-ups, so group owners by their current level but re-resolve the
    // slot at each node's turn.
    std::vector<std::vector<std::uint32_t>> by_level(top + 1);
    for (std::uint32_t idx : ups) by_level[level_of(pos_[idx])].push_back(idx);
    for (std::uint32_t lvl = 0; lvl <= top; ++lvl) {
      for (std::uint32_t idx : by_level[lvl]) sift_up(pos_[idx]);
    }
  }
}

void BatchHeap::heapify(std::span<const KeyUpdate> updates) {
  std::vector<std::uint32_t> ups;
  std::vector<std::uint32_t> downs = classify_updates(updates, ups);
  repair_sync(downs, ups);
}

void BatchHeap::async_heapify(std::span<const KeyUpdate> updates) {
  std::vector<std::uint32_t> ups;
  std::vector<std::uint32_t> downs = classify_updates(updates, ups);
  repair_async(downs, ups);
}

// ---------------------------------------------------------------------------
// Async protocol. Flags carry pending obligations and resume marks; every
// elementary step locks the ≤3 slots it touches (ordered by index), so reads,
// swaps, and flag transitions are atomic with respect to neighbors. A step
// that finds a pending neighbor in its way parks: it leaves its own flag
// pending, marks the blocker with a resume bit, and quits; whoever clears the
// blocker re-enters the parked slot. Sibling up-heaps are joined by whichever
// task locks the parent first; the covered sibling's task later no-ops.
// ---------------------------------------------------------------------------

void BatchHeap::lock_slots(std::uint32_t* idx, int n) {
  std::sort(idx, idx + n);
  for (int i = 0; i < n; ++i) {
    std::atomic_ref<std::uint8_t> l(locks_[idx[i]]);
    while (l.exchange(1, std::memory_order_acquire)) cpu_pause();
  }
}

void BatchHeap::unlock_slots(std::uint32_t* idx, int n) {
  for (int i = n - 1; i >= 0; --i) {
    std::atomic_ref<std::uint8_t>(locks_[idx[i]]).store(0, std::memory_order_release);
  }
}

void BatchHeap::repair_async(std::vector<std::uint32_t>& downs, std::vector<std::uint32_t>& ups) {
  if (slots_.size() < 2) return;
  flags_.resize(slots_.size(), 0);
  locks_.resize(slots_.size(), 0);
  auto& sched = Scheduler::get();

  if (!downs.empty()) {
    std::vector<std::uint32_t> cur;
    cur.reserve(downs.size());
    for (std::uint32_t idx : downs) cur.push_back(pos_[idx]);
    for (std::uint32_t s : cur) flags_[s] = kPending;
    sched.parallel_for(0, cur.size(), [&](std::size_t i) { down_step(cur[i]); }, 1);
  }
  if (!ups.empty()) {
    std::vector<std::uint32_t> cur;
    cur.reserve(ups.size());
    for (std::uint32_t idx : ups) cur.push_back(pos_[idx]);
    for (std::uint32_t s : cur) flags_[s] = kPending;
    sched.parallel_for(0, cur.size(), [&](std::size_t i) { up_step(cur[i]); }, 1);
  }
}

void BatchHeap::down_step(std::uint32_t v) {
  const std::uint32_t n = static_cast<std::uint32_t>(slots_.size());
  for (;;) {
    std::uint32_t l = 2 * v + 1;
    std::uint32_t r = 2 * v + 2;
    std::uint32_t locked[3];
    int nl = 0;
    locked[nl++] = v;
    if (l < n) locked[nl++] = l;
    if (r < n) locked[nl++] = r;
    lock_slots(locked, nl);

    if (!(flags_[v] & kPending)) {
      unlock_slots(locked, nl);
      return;
    }
    if (l < n && (flags_[l] & kPending)) {
      flags_[l] |= kResumeParent;
      unlock_slots(locked, nl);
      return;  // parked on the left child; its step re-enters us
    }
    if (r < n && (flags_[r] & kPending)) {
      flags_[r] |= kResumeParent;
      unlock_slots(locked, nl);
      return;
    }

    std::uint32_t c = kNoSlot;
    if (l < n) {
      c = l;
      if (r < n && less_slot(r, l)) c = r;
    }
    bool moved = c != kNoSlot && less_slot(c, v);
    bool resume_parent = (flags_[v] & kResumeParent) != 0;
    if (moved) {
      do_swap_async(v, c);
      flags_[v] = 0;
      flags_[c] = kPending;
    } else {
      flags_[v] = 0;
    }
    unlock_slots(locked, nl);

    if (moved && resume_parent && v > 0) {
      std::uint32_t parent = (v - 1) / 2;
      Scheduler::get().fork_join(
          [&, parent] {
            resume_down(parent);
          },
          [&, c] { down_step(c); });
      return;
    }
    if (moved) {
      v = c;
      continue;
    }
    if (resume_parent && v > 0) {
      resume_down((v - 1) / 2);
    }
    return;
  }
}

void BatchHeap::up_step(std::uint32_t v) {
  for (;;) {
    if (v == 0) {
      std::uint32_t locked[1] = {0};
      lock_slots(locked, 1);
      std::uint8_t f = flags_[0];
      flags_[0] = 0;
      unlock_slots(locked, 1);
      fire_up_resumes(0, f);
      return;
    }
    std::uint32_t p = (v - 1) / 2;
    std::uint32_t s = ((v - 1) ^ 1) + 1;  // sibling slot
    const std::uint32_t n = static_cast<std::uint32_t>(slots_.size());
    std::uint32_t locked[3];
    int nl = 0;
    locked[nl++] = p;
    locked[nl++] = v;
    if (s < n) locked[nl++] = s;
    lock_slots(locked, nl);

    if (!(flags_[v] & kPending)) {
      unlock_slots(locked, nl);
      return;  // obligation already resolved
    }
    if (flags_[p] & kPending) {
      // The parent slot is mid-climb; settle only against stable parents.
      flags_[p] |= (v == 2 * p + 1) ? kResumeLeft : kResumeRight;
      unlock_slots(locked, nl);
      return;
    }
    if (s < n && (flags_[s] & kPending) && less_slot(s, v)) {
      // The smaller sibling climbs first; it re-fires us when its step at
      // that slot completes.
      flags_[s] |= kResumeSibling;
      unlock_slots(locked, nl);
      return;
    }

    bool moved = less_slot(v, p);
    std::uint8_t fv = flags_[v];
    flags_[v] = 0;
    if (moved) {
      do_swap_async(v, p);
      flags_[p] = kPending;
    }
    unlock_slots(locked, nl);

    fire_up_resumes(v, fv);
    if (moved) {
      v = p;
      continue;
    }
    return;
  }
}

void BatchHeap::resume_down(std::uint32_t v) {
  // Re-arm the parked obligation and run it.
  std::uint32_t locked[1] = {v};
  lock_slots(locked, 1);
  flags_[v] |= kPending;
  unlock_slots(locked, 1);
  down_step(v);
}

void BatchHeap::fire_up_resumes(std::uint32_t v, std::uint8_t f) {
  const std::uint32_t n = static_cast<std::uint32_t>(slots_.size());
  std::uint32_t targets[3];
  int nt = 0;
  if ((f & kResumeLeft) && 2 * v + 1 < n) targets[nt++] = 2 * v + 1;
  if ((f & kResumeRight) && 2 * v + 2 < n) targets[nt++] = 2 * v + 2;
  if ((f & kResumeSibling) && v != 0) {
    std::uint32_t s = ((v - 1) ^ 1) + 1;
    if (s < n) targets[nt++] = s;
  }
  if (nt == 1) {
    up_step(targets[0]);
  } else if (nt == 2) {
    Scheduler::get().fork_join([&] { up_step(targets[0]); }, [&] { up_step(targets[1]); });
  } else if (nt == 3) {
    Scheduler::get().fork_join([&] { up_step(targets[0]); }, [&] {
      Scheduler::get().fork_join([&] { up_step(targets[1]); }, [&] { up_step(targets[2]); });
    });
  }
}

// ---------------------------------------------------------------------------
// Batch insert / delete by reduction to Heapify.
// ---------------------------------------------------------------------------

void BatchHeap::batch_insert(std::span<const HeapEntry> entries) {
  if (entries.empty()) return;
  std::vector<KeyUpdate> updates;
  updates.reserve(entries.size());
  for (const HeapEntry& e : entries) {
    if (std::isnan(e.key)) throw UsageError("heap keys must not be NaN");
    // Stage at the tail with an infinite key; completeness is preserved, so
    // the heap stays valid before the decrease pass.
    std::uint32_t idx = register_owner(e.owner, e.witness);
    std::uint32_t slot = static_cast<std::uint32_t>(slots_.size());
    slots_.push_back(SlotRec{0.0, 0, 0, idx});
    pos_[idx] = slot;
    write_entry(slot, kInf, e.witness);
    if (e.key < kInf) {
      updates.push_back(KeyUpdate{e.owner, kInf, e.key, e.witness});
    }
  }
  flags_.resize(slots_.size(), 0);
  locks_.resize(slots_.size(), 0);
  std::vector<std::uint32_t> ups;
  std::vector<std::uint32_t> downs = classify_updates(updates, ups);
  repair(downs, ups);
}

void BatchHeap::batch_delete(std::span<const PointId> owners) {
  if (owners.empty()) return;
  const std::uint32_t n = static_cast<std::uint32_t>(slots_.size());
  ++stamp_;
  std::vector<std::uint32_t> dead_slots;
  dead_slots.reserve(owners.size());
  for (PointId o : owners) {
    std::uint32_t idx = owner_idx_checked(o, "batch_delete");
    if (seen_stamp_[idx] == stamp_) {
      throw UsageError("batch_delete: duplicate owner " + std::to_string(o));
    }
    seen_stamp_[idx] = stamp_;
    dead_slots.push_back(pos_[idx]);
  }
  const std::uint32_t m = static_cast<std::uint32_t>(dead_slots.size());
  const std::uint32_t keep = n - m;

  // Pack tail survivors over the holes left below the new size, then repair
  // each filled slot as a key change from the deleted key to the filler key.
  std::vector<std::uint8_t> dead(n, 0);
  std::vector<std::uint32_t> holes;
  for (std::uint32_t s : dead_slots) {
    dead[s] = 1;
    if (s < keep) holes.push_back(s);
  }
  std::vector<std::uint32_t> downs, ups;
  std::size_t next_hole = 0;
  for (std::uint32_t s = keep; s < n; ++s) {
    if (dead[s]) continue;
    std::uint32_t hole = holes[next_hole++];
    SlotRec filler = slots_[s];
    SlotRec removed = slots_[hole];
    slots_[hole] = filler;
    pos_[filler.owner_idx] = hole;
    if (less_rec(filler, removed)) {
      ups.push_back(filler.owner_idx);
    } else if (less_rec(removed, filler)) {
      downs.push_back(filler.owner_idx);
    }
  }
  for (PointId o : owners) {
    std::uint32_t idx = static_cast<std::uint32_t>(
        *owner_index_.find(static_cast<std::uint64_t>(o)));
    owner_index_.erase(static_cast<std::uint64_t>(o));
    free_idx_.push_back(idx);
  }
  slots_.resize(keep);
  flags_.resize(keep);
  locks_.resize(keep);
  repair(downs, ups);
  shrink_if_sparse();
}

void BatchHeap::shrink_if_sparse() {
  if (slots_.capacity() > 16 && slots_.size() * 4 < slots_.capacity()) {
    slots_.shrink_to_fit();
    flags_.shrink_to_fit();
    locks_.shrink_to_fit();
  }
}

}  // namespace cpd
