#include "cpd/geometry.hpp"

#include <string>

namespace cpd {

namespace {

// Coordinates whose cell index would overflow a signed 64-bit box id.
constexpr double kMaxCell = 4.611686018427387904e18;  // 2^62

}  // namespace

double distance(const Point& p, const Point& q) {
  if (p.coords.size() != q.coords.size()) {
    throw UsageError("distance: dimension mismatch (" + std::to_string(p.coords.size()) +
                     " vs " + std::to_string(q.coords.size()) + ")");
  }
  return std::sqrt(sq_dist(p.coords, q.coords));
}

GridKey grid_key(const Point& p, double side) {
  if (!(side > 0.0) || !std::isfinite(side)) {
    throw UsageError("grid_key: side must be positive and finite");
  }
  GridKey k;
  k.cell.resize(p.coords.size());
  for (std::size_t j = 0; j < p.coords.size(); ++j) {
    double c = std::floor(p.coords[j] / side);
    if (!(std::abs(c) < kMaxCell)) {
      throw UsageError("grid_key: coordinate/side magnitude exceeds 2^62");
    }
    k.cell[j] = static_cast<std::int64_t>(c);
  }
  return k;
}

std::vector<GridKey> neighborhood_keys(const GridKey& key) {
  const std::size_t k = key.cell.size();
  std::size_t total = 1;
  for (std::size_t j = 0; j < k; ++j) total *= 3;
  std::vector<GridKey> out;
  out.reserve(total);
  std::vector<int> off(k, -1);
  for (;;) {
    GridKey g;
    g.cell.resize(k);
    for (std::size_t j = 0; j < k; ++j) g.cell[j] = key.cell[j] + off[j];
    out.push_back(std::move(g));
    std::size_t j = k;
    while (j > 0) {
      --j;
      if (off[j] < 1) {
        ++off[j];
        break;
      }
      off[j] = -1;
      if (j == 0) return out;
    }
    if (k == 0) return out;
  }
}

PointPool::PointPool(int dim) : dim_(dim) {
  if (dim < 1) throw UsageError("PointPool: dimension must be >= 1");
}

Slot PointPool::insert(PointId id, std::span<const double> coords) {
  if (id < 0) throw UsageError("point id must be non-negative: " + std::to_string(id));
  if (static_cast<int>(coords.size()) != dim_) {
    throw UsageError("point " + std::to_string(id) + ": expected " + std::to_string(dim_) +
                     " coordinates, got " + std::to_string(coords.size()));
  }
  for (double c : coords) {
    if (!std::isfinite(c)) {
      throw UsageError("point " + std::to_string(id) + ": non-finite coordinate");
    }
  }
  if (!id_to_slot_.insert(static_cast<std::uint64_t>(id), 0)) {
    throw UsageError("duplicate point id: " + std::to_string(id));
  }
  Slot s;
  if (!free_.empty()) {
    s = free_.back();
    free_.pop_back();
    ids_[s] = id;
    live_[s] = 1;
    std::copy(coords.begin(), coords.end(), coords_.begin() + std::size_t(s) * dim_);
  } else {
    s = static_cast<Slot>(ids_.size());
    ids_.push_back(id);
    live_.push_back(1);
    coords_.insert(coords_.end(), coords.begin(), coords.end());
  }
  id_to_slot_.set(static_cast<std::uint64_t>(id), s);
  ++size_;
  return s;
}

void PointPool::erase(Slot s) {
  if (!live(s)) throw UsageError("PointPool::erase: slot not live");
  id_to_slot_.erase(static_cast<std::uint64_t>(ids_[s]));
  live_[s] = 0;
  free_.push_back(s);
  --size_;
}

}  // namespace cpd
