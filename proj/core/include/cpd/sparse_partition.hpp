#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cpd/batch_heap.hpp"
#include "cpd/detail/flat_map.hpp"
#include "cpd/geometry.hpp"
#include "cpd/grid.hpp"
#include "cpd/kdtree.hpp"
#include "cpd/rng.hpp"

namespace cpd {

// kTheoretical keeps one restricted-distance heap per level; kSimplified
// keeps a single heap of nearest-neighbor distances over the deep levels.
enum class PartitionMode { kTheoretical, kSimplified };

// kPull is the production heap-maintenance path (receptors pull from
// initiator levels, overlapping grid work); kNaive pushes updates level by
// level and serves as the reference for equivalence checks.
enum class HeapProtocol { kPull, kNaive };

struct PartitionConfig {
  PartitionMode mode = PartitionMode::kSimplified;
  HeapProtocol protocol = HeapProtocol::kPull;
  std::uint64_t seed = 1;
  int tree_dim_threshold = 5;  // neighborhood engine switches to the k-d tree at this dimension
  bool async_heaps = false;    // route heap repairs through async_heapify
};

// Counters of the most recent batch operation.
struct BatchStats {
  std::size_t batch_size = 0;
  std::size_t down_total = 0;  // Σ|down_i| over levels (insertion)
  std::size_t up_total = 0;    // Σ|up_i| over levels (deletion)
  std::size_t packing_bound = 0;  // m * 3^k
  bool rebuilt = false;
  int rebuild_level = 0;  // 1-based; 0 when no rebuild ran
};

struct ValidationIssue {
  std::string what;
  int level = 0;  // 1-based; 0 = structure-wide
  PointId point = -1;
};

struct ValidationReport {
  bool clean = true;
  std::optional<ValidationIssue> first_issue;
};

struct RestrictedDistance {
  PointId owner = -1;
  PointId witness = -1;  // -1 when the value is infinite
  double value = kInf;
};

// The sparse partition: levels (S_i, S_i', p_i, q_i, d_i) with grids (and
// k-d trees for high dimension), parallel construction, batch insertion and
// deletion, and O(1) closest-pair reads off the heaps.
class SparsePartition {
 public:
  SparsePartition(int dim, const PartitionConfig& cfg);

  static SparsePartition build(std::span<const Point> points, const PartitionConfig& cfg);

  void batch_insert(std::span<const Point> points);
  void batch_delete(std::span<const PointId> ids);

  PairResult closest_pair() const;

  std::size_t size() const { return pool_->size(); }
  int dim() const { return dim_; }
  int levels() const { return static_cast<int>(levels_.size()); }
  const PartitionConfig& config() const { return cfg_; }
  const BatchStats& last_batch_stats() const { return stats_; }
  const PointPool& pool() const { return *pool_; }
  bool contains(PointId id) const { return pool_->find(id) != kNoSlot; }

  // Restricted distance of p at a 1-based level; p must lie in that level's
  // sparse set.
  RestrictedDistance restricted_distance(PointId p, int level) const;

  // 1-based cutoff level j of the simplified mode's single heap.
  int simplified_cutoff_level() const;

  ValidationReport validate() const;

  // Level introspection (1-based), mainly for tests and tools.
  double level_dist(int level) const;
  double level_side(int level) const;
  PointId level_pivot(int level) const;
  PointId level_witness(int level) const;
  std::vector<PointId> level_members(int level) const;
  std::vector<PointId> level_sparse_members(int level) const;

  struct TestAccess;

 private:
  friend struct TestAccess;

  struct HeapSide {
    BatchHeap heap{BatchHeap::TieRule::kPair};
    detail::FlatMap witness_owners_head;       // witness slot -> index into edges
    std::vector<std::vector<Slot>> edge_pool;  // owners per witness
    std::vector<std::uint32_t> edge_free;
    std::vector<Slot> inf_owners;              // owners with +inf keys
    detail::FlatMap inf_pos;

    void link(Slot owner, Slot witness);
    void unlink(Slot owner, Slot witness);
    std::span<const Slot> owners_of(Slot witness) const;
    void note_inf(Slot owner, bool inf);
    void clear();
  };

  struct Level {
    double dist = 0.0;  // d_i
    Slot pivot = kNoSlot;
    Slot witness = kNoSlot;
    double side = 0.0;  // d_i / (6k)
    GridDict all;
    GridDict sparse;
    std::optional<DynKdTree> tree_all;
    std::optional<DynKdTree> tree_sparse;
    std::unique_ptr<HeapSide> heap;  // theoretical mode

    Level(const PointPool& pool, double d, Slot p, Slot q, double s)
        : dist(d), pivot(p), witness(q), side(s), all(pool, s), sparse(pool, s) {}
  };

  // Per-batch movement scratch.
  struct BatchScratch {
    std::vector<std::vector<Slot>> m1;  // left S'_i
    std::vector<std::vector<Slot>> m2;  // joined S'_i
    detail::FlatMap first_depth;        // slot -> original depth + 2 (0 reserved)
    std::vector<Slot> inserted;
    std::vector<Slot> deleted;
    void reset(std::size_t levels);
  };

  PartitionConfig cfg_;
  int dim_;
  // Heap-allocated so the structure stays movable: grids, trees, and heaps
  // all hold pointers to the pool.
  std::unique_ptr<PointPool> pool_ptr_;
  PointPool* pool_ = nullptr;
  CounterRng rng_;
  std::vector<std::unique_ptr<Level>> levels_;
  std::vector<int> depth_;  // by slot; level index owning the point's sparse set
  detail::FlatMap coord_hash_;
  std::unique_ptr<HeapSide> star_;  // simplified mode
  std::optional<DynKdTree> star_tree_;  // spatial index over S_j for the star heap
  int star_cutoff_ = -1;                // 0-based j*
  BatchStats stats_;
  std::uint64_t epoch_ = 0;
  std::uint64_t pivot_counter_ = 0;
  std::uint64_t stamp_counter_ = 0;
  std::vector<std::uint64_t> slot_stamp_;
  std::vector<std::uint8_t> q_flag_;  // set per delete batch for the members of Q
  BatchScratch scratch_;

  bool use_tree() const { return dim_ >= cfg_.tree_dim_threshold; }
  std::size_t packing_bound(std::size_t m) const;

  static std::uint64_t hash_coords(std::span<const double> c);
  void register_coords(Slot s);
  void unregister_coords(Slot s);

  Slot insert_point_checked(const Point& p);
  void set_depth(Slot s, int d);
  void note_depth_change(Slot s, int old_depth);

  // Level construction; `forced_pivot` pins p_i for the top rebuilt level.
  void build_levels(int from, std::vector<Slot> members, Slot forced_pivot);
  void destroy_levels(int from);
  int make_level(int index, std::vector<Slot>& members, Slot forced_pivot,
                 std::vector<Slot>& survivors);

  bool level_is_sparse(const Level& lv, std::span<const double> c, Slot exclude) const;
  Candidate probe_restricted(Slot p, int level) const;
  Candidate nn_in_level(Slot p, int level) const;  // over S_level

  void build_level_heap(int level);
  void rebuild_star();
  void maintain_star();
  int compute_star_cutoff() const;

  // Heap maintenance.
  void pull_receptor(int receptor, int initiator_lo, int initiator_hi);
  void apply_heap_side(HeapSide& side, std::span<const Slot> remove,
                       std::span<const Slot> add, std::vector<Slot>& recompute,
                       bool star_side, int receptor);
  void naive_push(int initiator);

  struct RebuildRequest {
    bool pending = false;
    int level = 0;
    Slot forced_pivot = kNoSlot;
    std::vector<Slot> extra;
  };

  void insert_rec(std::vector<Slot> q, std::vector<Slot> down, int level, RebuildRequest& req);
  std::vector<Slot> grid_delete(int level, std::vector<Slot>& up_in,
                                const std::vector<std::vector<Slot>>& q_by_level,
                                std::vector<int>& rebuild_marks);
  void delete_rec(std::vector<Slot> up, int level,
                  const std::vector<std::vector<Slot>>& q_by_level,
                  std::vector<int>& rebuild_marks);

  void reset_idle();
  void full_build_from_pool();
  std::uint64_t next_stamp() { return ++stamp_counter_; }
};

}  // namespace cpd
