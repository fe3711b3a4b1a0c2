#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>

#include "cpd/error.hpp"
#include "cpd/grid.hpp"
#include "oracles.hpp"

using namespace cpd;

namespace {

struct Fixture {
  PointPool pool{2};
  std::vector<Slot> slots;
  std::vector<Point> pts;

  explicit Fixture(const std::vector<Point>& points) : pool(points[0].coords.size()) {
    for (const Point& p : points) {
      slots.push_back(pool.insert(p.id, p.coords));
      pts.push_back(p);
    }
  }
};

std::vector<std::int64_t> key_of(const Point& p, double side) {
  return grid_key(p, side).cell;
}

// Box -> ids oracle built sequentially.
std::map<std::vector<std::int64_t>, std::multiset<PointId>> oracle_boxes(
    const std::vector<Point>& pts, double side) {
  std::map<std::vector<std::int64_t>, std::multiset<PointId>> m;
  for (const Point& p : pts) m[key_of(p, side)].insert(p.id);
  return m;
}

std::map<std::vector<std::int64_t>, std::multiset<PointId>> grid_boxes(const GridDict& g,
                                                                       const PointPool& pool) {
  std::map<std::vector<std::int64_t>, std::multiset<PointId>> m;
  g.for_each_box([&](const std::int64_t* cells, std::span<const Slot> bucket) {
    std::vector<std::int64_t> k(cells, cells + pool.dim());
    for (Slot s : bucket) m[k].insert(pool.id(s));
  });
  return m;
}

}  // namespace

TEST(GridDict, EmptyAndSingleBox) {
  PointPool pool(2);
  GridDict g = GridDict::build(pool, {}, 1.0);
  EXPECT_EQ(g.size(), 0u);
  EXPECT_EQ(g.box_count(), 0u);

  Fixture f({{0, {0.1, 0.1}}, {1, {0.2, 0.9}}, {2, {0.9, 0.5}}});
  GridDict g2 = GridDict::build(f.pool, f.slots, 1.0);
  EXPECT_EQ(g2.size(), 3u);
  EXPECT_EQ(g2.box_count(), 1u);
  std::int64_t cells[2] = {0, 0};
  EXPECT_EQ(g2.bucket(cells).size(), 3u);
}

TEST(GridDict, BuildMatchesSequentialOracle) {
  std::mt19937_64 gen(21);
  auto pts = oracle::random_points(gen, 10000, 2, 200.0);
  Fixture f(pts);
  double side = 3.7;
  GridDict g = GridDict::build(f.pool, f.slots, side);
  EXPECT_EQ(grid_boxes(g, f.pool), oracle_boxes(pts, side));
}

TEST(GridDict, InsertThenDeleteRestoresState) {
  std::mt19937_64 gen(22);
  auto pts = oracle::random_points(gen, 500, 3, 50.0);
  Fixture f(pts);
  GridDict g = GridDict::build(f.pool, std::span<const Slot>(f.slots).subspan(0, 300), 2.0);
  auto before = grid_boxes(g, f.pool);
  auto batch = std::span<const Slot>(f.slots).subspan(300);
  g.insert_batch(batch);
  g.delete_batch(batch);
  EXPECT_EQ(grid_boxes(g, f.pool), before);

  g.delete_batch(std::span<const Slot>(f.slots).subspan(0, 300));
  EXPECT_EQ(g.size(), 0u);
  EXPECT_EQ(g.box_count(), 0u);
}

TEST(GridDict, RandomBatchesMatchReplay) {
  std::mt19937_64 gen(23);
  auto pts = oracle::random_points(gen, 2000, 2, 100.0);
  Fixture f(pts);
  double side = 1.9;
  GridDict g(f.pool, side);
  std::set<std::size_t> present;
  for (int batch = 0; batch < 100; ++batch) {
    std::vector<Slot> ins, del;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (gen() % 37 == 0) {
        if (present.count(i)) {
          del.push_back(f.slots[i]);
          present.erase(i);
        } else {
          ins.push_back(f.slots[i]);
          present.insert(i);
        }
      }
    }
    g.insert_batch(ins);
    g.delete_batch(del);
    ASSERT_EQ(g.size(), present.size());
  }
  std::vector<Point> live;
  for (std::size_t i : present) live.push_back(pts[i]);
  EXPECT_EQ(grid_boxes(g, f.pool), oracle_boxes(live, side));
}

TEST(GridDict, DuplicateAndMissingIdsError) {
  Fixture f({{5, {0, 0}}, {6, {1, 1}}});
  GridDict g = GridDict::build(f.pool, std::span<const Slot>(f.slots).subspan(0, 1), 1.0);
  try {
    g.insert_one(f.slots[0]);
    FAIL() << "expected UsageError";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("5"), std::string::npos);
  }
  try {
    g.delete_one(f.slots[1]);
    FAIL() << "expected UsageError";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("6"), std::string::npos);
  }
}

TEST(GridDict, NeighborhoodMatchesLinearFilter) {
  std::mt19937_64 gen(24);
  for (int trial = 0; trial < 20; ++trial) {
    int k = 1 + static_cast<int>(gen() % 3);
    auto pts = oracle::random_points(gen, 300, k, 30.0);
    Fixture f(pts);
    double side = 2.1;
    GridDict g = GridDict::build(f.pool, f.slots, side);
    for (int probe = 0; probe < 50; ++probe) {
      std::size_t i = gen() % pts.size();
      std::set<PointId> got;
      for (Slot s : g.neighborhood(f.pool.coords(f.slots[i]), f.slots[i])) {
        got.insert(f.pool.id(s));
      }
      std::set<PointId> want;
      auto ki = key_of(pts[i], side);
      for (const Point& q : pts) {
        if (q.id == pts[i].id) continue;
        auto kq = key_of(q, side);
        bool close = true;
        for (int j = 0; j < k; ++j) {
          if (std::llabs(kq[j] - ki[j]) > 1) close = false;
        }
        if (close) want.insert(q.id);
      }
      ASSERT_EQ(got, want);
      EXPECT_EQ(g.is_sparse(f.pool.coords(f.slots[i]), f.slots[i]), want.empty());
    }
  }
}

TEST(GridDict, LonePointIsSparse) {
  Fixture f({{0, {5, 5}}, {1, {100, 100}}});
  GridDict g = GridDict::build(f.pool, std::span<const Slot>(f.slots).subspan(0, 1), 1.0);
  EXPECT_TRUE(g.is_sparse(f.pool.coords(f.slots[0]), f.slots[0]));
  EXPECT_TRUE(g.neighborhood(f.pool.coords(f.slots[0]), f.slots[0]).empty());
  EXPECT_FALSE(g.nearest_in_neighborhood(f.pool.coords(f.slots[0]), f.slots[0]).valid());
}

TEST(GridDict, SparseImpliesTrueNearestBeyondSide) {
  std::mt19937_64 gen(25);
  for (int trial = 0; trial < 10; ++trial) {
    auto pts = oracle::random_points(gen, 200, 2, 40.0);
    Fixture f(pts);
    double side = 2.5;
    GridDict g = GridDict::build(f.pool, f.slots, side);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (g.is_sparse(f.pool.coords(f.slots[i]), f.slots[i])) {
        EXPECT_GT(oracle::nearest(pts, i).second, side);
      }
    }
  }
}

TEST(GridDict, NearestInNeighborhoodMatchesOracle) {
  std::mt19937_64 gen(26);
  for (int trial = 0; trial < 20; ++trial) {
    auto pts = oracle::random_points(gen, 250, 2, 25.0);
    Fixture f(pts);
    double side = 3.0;
    GridDict g = GridDict::build(f.pool, f.slots, side);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      Candidate got = g.nearest_in_neighborhood(f.pool.coords(f.slots[i]), f.slots[i]);
      // Oracle: min over the linear-filtered neighborhood.
      Candidate want;
      auto ki = key_of(pts[i], side);
      for (const Point& q : pts) {
        if (q.id == pts[i].id) continue;
        auto kq = key_of(q, side);
        bool close = true;
        for (std::size_t j = 0; j < kq.size(); ++j) {
          if (std::llabs(kq[j] - ki[j]) > 1) close = false;
        }
        if (!close) continue;
        Candidate c = make_candidate(pts[i].id, q.id, oracle::sqd(pts[i], q));
        if (c < want) want = c;
      }
      ASSERT_EQ(got.valid(), want.valid());
      if (got.valid()) {
        EXPECT_EQ(got.lo, want.lo);
        EXPECT_EQ(got.hi, want.hi);
        EXPECT_EQ(got.sqdist, want.sqdist);
      }
    }
  }
}

TEST(GridDict, ExactNearestMatchesLinearScan) {
  std::mt19937_64 gen(27);
  for (int trial = 0; trial < 30; ++trial) {
    int k = 1 + static_cast<int>(gen() % 3);
    std::size_t n = 2 + gen() % 300;
    auto pts = oracle::random_points(gen, n, k, trial % 2 ? 1000.0 : 10.0);
    Fixture f(pts);
    double side = std::uniform_real_distribution<double>(0.05, 20.0)(gen);
    GridDict g = GridDict::build(f.pool, f.slots, side);
    for (std::size_t i = 0; i < std::min<std::size_t>(n, 40); ++i) {
      Candidate got = g.exact_nearest(f.pool.coords(f.slots[i]), f.slots[i]);
      auto [wid, wdist] = oracle::nearest(pts, i);
      ASSERT_TRUE(got.valid());
      PointId got_witness = got.lo == pts[i].id ? got.hi : got.lo;
      EXPECT_EQ(got_witness, wid);
      EXPECT_EQ(std::sqrt(got.sqdist), wdist);
    }
  }
}

TEST(GridDict, BoxOnlyContains) {
  Fixture f({{0, {0.5, 0.5}}, {1, {0.6, 0.6}}, {2, {5.5, 5.5}}});
  GridDict g = GridDict::build(f.pool, f.slots, 1.0);
  GridKey empty_box{{9, 9}};
  EXPECT_TRUE(g.box_only_contains(empty_box, {}));
  GridKey shared{{0, 0}};
  std::vector<Slot> just_a{f.slots[0]};
  EXPECT_FALSE(g.box_only_contains(shared, just_a));
  std::vector<Slot> both{f.slots[0], f.slots[1]};
  EXPECT_TRUE(g.box_only_contains(shared, both));
}

TEST(GridDict, BoxOnlyContainsMatchesSubsetOracle) {
  std::mt19937_64 gen(28);
  for (int trial = 0; trial < 20; ++trial) {
    auto pts = oracle::random_points(gen, 150, 2, 12.0);
    Fixture f(pts);
    double side = 2.0;
    GridDict g = GridDict::build(f.pool, f.slots, side);
    std::vector<Slot> marked;
    std::set<PointId> marked_ids;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (gen() % 3 == 0) {
        marked.push_back(f.slots[i]);
        marked_ids.insert(pts[i].id);
      }
    }
    g.mark_epoch(marked);
    auto boxes = oracle_boxes(pts, side);
    for (const auto& [cells, ids] : boxes) {
      bool want = true;
      for (PointId id : ids) {
        if (!marked_ids.count(id)) want = false;
      }
      EXPECT_EQ(g.box_all_marked(cells.data()), want);
    }
  }
}
