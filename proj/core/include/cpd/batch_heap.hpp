#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "cpd/detail/flat_map.hpp"
#include "cpd/geometry.hpp"

namespace cpd {

// One heap element: a priority key plus an opaque id pair (owner, witness).
// Owners address entries across batch operations.
struct HeapEntry {
  double key = 0.0;
  PointId owner = -1;
  PointId witness = -1;
};

inline constexpr PointId kKeepWitness = std::numeric_limits<PointId>::min();

// Batched key change: old_key must match the stored key bitwise.
struct KeyUpdate {
  PointId owner = -1;
  double old_key = 0.0;
  double new_key = 0.0;
  PointId new_witness = kKeepWitness;
};

// Array-backed binary min-heap with batched key changes (Heapify and its
// lock-free Async variant), batched inserts (+inf staging then decrease) and
// deletes (tail packing then repair), O(1) find-min, and owner handles.
// One batch operation at a time; a single call is internally parallel.
class BatchHeap {
 public:
  // kOwner: ties break by smaller owner id (the default contract).
  // kPair: ties break by the normalized (owner, witness) id pair, which makes
  // find_min surface the lexicographically smallest closest pair.
  enum class TieRule { kOwner, kPair };

  explicit BatchHeap(TieRule tie = TieRule::kOwner);

  static BatchHeap build(std::span<const HeapEntry> entries, TieRule tie = TieRule::kOwner);

  std::size_t size() const { return slots_.size(); }
  bool empty() const { return slots_.empty(); }

  HeapEntry find_min() const;
  HeapEntry pop_min();

  void heapify(std::span<const KeyUpdate> updates);
  void async_heapify(std::span<const KeyUpdate> updates);

  void batch_insert(std::span<const HeapEntry> entries);
  void batch_delete(std::span<const PointId> owners);

  // Routes batch_insert/batch_delete repairs through async_heapify.
  void set_async_mode(bool on) { async_mode_ = on; }

  bool contains(PointId owner) const;
  double key_of(PointId owner) const;
  PointId witness_of(PointId owner) const;

  // Unordered snapshot of the current entries.
  std::vector<HeapEntry> entries() const;

  // Heap order + handle round-trip; throws std::logic_error on violation.
  void check_integrity() const;

  std::uint64_t swap_count() const { return swaps_; }
  void reset_swap_count() { swaps_ = 0; }

  // Stale-high upper bound on the largest finite key ever stored since the
  // last build (capped reverse searches use it).
  double max_finite_key() const { return max_finite_key_; }

 private:
  struct SlotRec {
    double key;
    PointId lo, hi;  // tie rank
    std::uint32_t owner_idx;
  };

  TieRule tie_;
  bool async_mode_ = false;
  std::vector<SlotRec> slots_;

  // Indexed by owner_idx.
  std::vector<PointId> owner_id_;
  std::vector<PointId> witness_id_;
  std::vector<std::uint32_t> pos_;
  std::vector<std::uint32_t> seen_stamp_;
  std::vector<std::uint32_t> free_idx_;
  detail::FlatMap owner_index_;
  std::uint32_t stamp_ = 0;

  // Async protocol state, one byte each per slot; all-zero between calls.
  std::vector<std::uint8_t> flags_;
  std::vector<std::uint8_t> locks_;

  std::uint64_t swaps_ = 0;
  double max_finite_key_ = -kInf;

  bool less_rec(const SlotRec& a, const SlotRec& b) const;
  bool less_slot(std::uint32_t a, std::uint32_t b) const { return less_rec(slots_[a], slots_[b]); }
  void do_swap(std::uint32_t a, std::uint32_t b);
  void sift_down(std::uint32_t v);
  void sift_up(std::uint32_t v);
  void build_heap();

  std::uint32_t owner_idx_checked(PointId owner, const char* op) const;
  std::uint32_t register_owner(PointId owner, PointId witness);
  void write_entry(std::uint32_t slot, double key, PointId witness);
  void note_key(double key);

  // Shared repair machinery over owner indices (slots move between phases).
  void repair(std::vector<std::uint32_t>& downs, std::vector<std::uint32_t>& ups);
  void repair_sync(std::vector<std::uint32_t>& downs, std::vector<std::uint32_t>& ups);
  void repair_async(std::vector<std::uint32_t>& downs, std::vector<std::uint32_t>& ups);

  // Async protocol steps.
  void down_step(std::uint32_t v);
  void up_step(std::uint32_t v);
  void resume_down(std::uint32_t v);
  void fire_up_resumes(std::uint32_t v, std::uint8_t flags);
  void lock_slots(std::uint32_t* idx, int n);
  void unlock_slots(std::uint32_t* idx, int n);
  void do_swap_async(std::uint32_t a, std::uint32_t b);

  void shrink_if_sparse();
  std::vector<std::uint32_t> classify_updates(std::span<const KeyUpdate> updates,
                                              std::vector<std::uint32_t>& ups);
};

}  // namespace cpd
