#include "cpd/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cpd/scheduler.hpp"

namespace cpd {

namespace {
constexpr double kMaxCell = 4.611686018427387904e18;  // 2^62
}

GridDict::GridDict(const PointPool& pool, double side)
    : pool_(&pool), side_(side), dim_(pool.dim()) {
  if (!(side > 0.0) || !std::isfinite(side)) {
    throw UsageError("GridDict: side must be positive and finite");
  }
  if (dim_ > 64) throw UsageError("GridDict: dimension limit is 64");
  table_.assign(16, 0);
  table_mask_ = 15;
}

GridDict GridDict::build(const PointPool& pool, std::span<const Slot> slots, double side) {
  GridDict g(pool, side);
  g.insert_batch(slots);
  return g;
}

void GridDict::cells_of(std::span<const double> q, std::int64_t* out) const {
  for (int j = 0; j < dim_; ++j) {
    double c = std::floor(q[j] / side_);
    if (!(std::abs(c) < kMaxCell)) {
      throw UsageError("GridDict: coordinate/side magnitude exceeds 2^62");
    }
    out[j] = static_cast<std::int64_t>(c);
  }
}

std::uint64_t GridDict::hash_cells(const std::int64_t* cells) const {
  std::uint64_t h = 0x9e3779b97f4a7c15ull;
  for (int j = 0; j < dim_; ++j) {
    std::uint64_t x = static_cast<std::uint64_t>(cells[j]);
    x *= 0xff51afd7ed558ccdull;
    x ^= x >> 33;
    h ^= x;
    h *= 0xc4ceb9fe1a85ec53ull;
  }
  h ^= h >> 29;
  return h;
}

std::uint32_t GridDict::find_box(const std::int64_t* cells, std::uint64_t h) const {
  std::size_t i = h & table_mask_;
  while (table_[i] != 0) {
    std::uint32_t b = table_[i] - 1;
    if (box_hash_[b] == h &&
        std::equal(cells, cells + dim_, &box_cells_[std::size_t(b) * dim_])) {
      return b + 1;
    }
    i = (i + 1) & table_mask_;
  }
  return 0;
}

void GridDict::grow_table() {
  std::vector<std::uint32_t> old = std::move(table_);
  table_.assign(old.size() * 2, 0);
  table_mask_ = table_.size() - 1;
  for (std::uint32_t e : old) {
    if (e == 0) continue;
    std::size_t i = box_hash_[e - 1] & table_mask_;
    while (table_[i] != 0) i = (i + 1) & table_mask_;
    table_[i] = e;
  }
}

std::uint32_t GridDict::get_or_add_box(const std::int64_t* cells, std::uint64_t h) {
  std::size_t i = h & table_mask_;
  while (table_[i] != 0) {
    std::uint32_t b = table_[i] - 1;
    if (box_hash_[b] == h &&
        std::equal(cells, cells + dim_, &box_cells_[std::size_t(b) * dim_])) {
      return b;
    }
    i = (i + 1) & table_mask_;
  }
  std::uint32_t b;
  if (!free_boxes_.empty()) {
    b = free_boxes_.back();
    free_boxes_.pop_back();
    std::copy(cells, cells + dim_, &box_cells_[std::size_t(b) * dim_]);
    box_hash_[b] = h;
    mark_epoch_id_[b] = 0;
    mark_count_[b] = 0;
  } else {
    b = static_cast<std::uint32_t>(buckets_.size());
    buckets_.emplace_back();
    box_cells_.insert(box_cells_.end(), cells, cells + dim_);
    box_hash_.push_back(h);
    mark_epoch_id_.push_back(0);
    mark_count_.push_back(0);
  }
  table_[i] = b + 1;
  ++live_boxes_;
  if (live_boxes_ * 10 >= table_.size() * 7) grow_table();
  return b;
}

void GridDict::remove_box_from_table(std::uint32_t box) {
  std::uint64_t h = box_hash_[box];
  std::size_t i = h & table_mask_;
  while (table_[i] != box + 1) i = (i + 1) & table_mask_;
  // Backward-shift deletion keeps probe chains intact.
  std::size_t hole = i;
  std::size_t j = (hole + 1) & table_mask_;
  while (table_[j] != 0) {
    std::size_t ideal = box_hash_[table_[j] - 1] & table_mask_;
    bool movable = (hole <= j) ? (ideal <= hole || ideal > j)
                               : (ideal <= hole && ideal > j);
    if (movable) {
      table_[hole] = table_[j];
      hole = j;
    }
    j = (j + 1) & table_mask_;
  }
  table_[hole] = 0;
  --live_boxes_;
  free_boxes_.push_back(box);
}

void GridDict::insert_slot(Slot s) {
  std::int64_t cells[64];
  cells_of(pool_->coords(s), cells);
  std::uint32_t b = get_or_add_box(cells, hash_cells(cells));
  if (!slot_box_.insert(s, (std::uint64_t(b) << 32) | buckets_[b].size())) {
    throw UsageError("GridDict: id already present: " + std::to_string(pool_->id(s)));
  }
  buckets_[b].push_back(s);
  ++count_;
}

void GridDict::remove_slot(Slot s) {
  const std::uint64_t* v = slot_box_.find(s);
  if (!v) {
    throw UsageError("GridDict: id not present: " +
                     (pool_->live(s) ? std::to_string(pool_->id(s)) : std::string("<slot>")));
  }
  std::uint32_t b = static_cast<std::uint32_t>(*v >> 32);
  std::uint32_t pos = static_cast<std::uint32_t>(*v & 0xffffffffu);
  auto& bucket = buckets_[b];
  Slot moved = bucket.back();
  bucket[pos] = moved;
  bucket.pop_back();
  if (moved != s) slot_box_.set(moved, (std::uint64_t(b) << 32) | pos);
  slot_box_.erase(s);
  --count_;
  if (bucket.empty()) remove_box_from_table(b);
}

void GridDict::insert_one(Slot s) { insert_slot(s); }
void GridDict::delete_one(Slot s) { remove_slot(s); }

void GridDict::insert_batch(std::span<const Slot> slots) {
  for (Slot s : slots) insert_slot(s);
}

void GridDict::delete_batch(std::span<const Slot> slots) {
  for (Slot s : slots) remove_slot(s);
}

std::vector<Slot> GridDict::neighborhood(std::span<const double> q, Slot exclude) const {
  std::vector<Slot> out;
  scan_neighborhood(q, exclude, [&](Slot s) {
    out.push_back(s);
    return false;
  });
  return out;
}

bool GridDict::is_sparse(std::span<const double> q, Slot exclude) const {
  return !scan_neighborhood(q, exclude, [](Slot) { return true; });
}

Candidate GridDict::nearest_in_neighborhood(std::span<const double> q, Slot exclude) const {
  Candidate best;
  PointId qid = exclude == kNoSlot ? -1 : pool_->id(exclude);
  scan_neighborhood(q, exclude, [&](Slot s) {
    Candidate c = make_candidate(qid, pool_->id(s), sq_dist(q, pool_->coords(s)));
    if (c < best) best = c;
    return false;
  });
  return best;
}

Candidate GridDict::exact_nearest(std::span<const double> q, Slot exclude) const {
  Candidate best;
  if (count_ == 0) return best;
  PointId qid = exclude == kNoSlot ? -1 : pool_->id(exclude);
  std::int64_t base[64];
  cells_of(q, base);
  double budget = 2.0 * static_cast<double>(count_) + 64.0;
  double spent = 0.0;
  for (std::int64_t r = 0;; ++r) {
    if (best.valid() && r > 0 &&
        static_cast<double>(r - 1) * side_ >= std::sqrt(best.sqdist)) {
      return best;
    }
    double ring_cost = 1.0;
    for (int j = 0; j < dim_; ++j) ring_cost *= static_cast<double>(2 * r + 1);
    spent += ring_cost;
    if (spent > budget) {
      // Ring enumeration is now costlier than scanning everything.
      for_each_member([&](Slot s) {
        if (s == exclude) return;
        Candidate c = make_candidate(qid, pool_->id(s), sq_dist(q, pool_->coords(s)));
        if (c < best) best = c;
      });
      return best;
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
            if (s == exclude) continue;
            Candidate c = make_candidate(qid, pool_->id(s), sq_dist(q, pool_->coords(s)));
            if (c < best) best = c;
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

void GridDict::mark_epoch(std::span<const Slot> marked) {
  ++epoch_;
  for (Slot s : marked) {
    const std::uint64_t* v = slot_box_.find(s);
    if (!v) continue;
    std::uint32_t b = static_cast<std::uint32_t>(*v >> 32);
    if (mark_epoch_id_[b] != epoch_) {
      mark_epoch_id_[b] = epoch_;
      mark_count_[b] = 0;
    }
    ++mark_count_[b];
  }
}

bool GridDict::box_all_marked(const std::int64_t* cells) const {
  std::uint32_t b = find_box(cells, hash_cells(cells));
  if (b == 0) return true;
  std::uint32_t marked = mark_epoch_id_[b - 1] == epoch_ ? mark_count_[b - 1] : 0;
  return marked == buckets_[b - 1].size();
}

std::size_t GridDict::unmarked_in_box(const std::int64_t* cells) const {
  std::uint32_t b = find_box(cells, hash_cells(cells));
  if (b == 0) return 0;
  std::uint32_t marked = mark_epoch_id_[b - 1] == epoch_ ? mark_count_[b - 1] : 0;
  return buckets_[b - 1].size() - marked;
}

bool GridDict::box_only_contains(const GridKey& key, std::span<const Slot> ids) {
  if (static_cast<int>(key.cell.size()) != dim_) {
    throw UsageError("box_only_contains: key dimension mismatch");
  }
  mark_epoch(ids);
  return box_all_marked(key.cell.data());
}

std::span<const Slot> GridDict::bucket(const std::int64_t* cells) const {
  std::uint32_t b = find_box(cells, hash_cells(cells));
  if (b == 0) return {};
  return buckets_[b - 1];
}

}  // namespace cpd
