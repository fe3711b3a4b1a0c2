#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "cpd/error.hpp"
#include "cpd/sparse_partition.hpp"
#include "oracles.hpp"

using namespace cpd;

// Fault injection hook: damage the sparse set of one level.
struct SparsePartition::TestAccess {
  static void remove_from_sparse(SparsePartition& sp, int level, PointId id) {
    Slot s = sp.pool_->find(id);
    sp.levels_[level - 1]->sparse.delete_one(s);
  }
};

namespace {

PartitionConfig config(PartitionMode mode, std::uint64_t seed,
                       HeapProtocol proto = HeapProtocol::kPull) {
  PartitionConfig cfg;
  cfg.mode = mode;
  cfg.protocol = proto;
  cfg.seed = seed;
  return cfg;
}

void expect_pair(const PairResult& got, const PairResult& want) {
  ASSERT_EQ(got.a, want.a);
  ASSERT_EQ(got.b, want.b);
  ASSERT_EQ(got.dist, want.dist);
}

void expect_clean(const SparsePartition& sp) {
  ValidationReport rep = sp.validate();
  if (!rep.clean) {
    FAIL() << "validate: " << rep.first_issue->what << " (level " << rep.first_issue->level
           << ", point " << rep.first_issue->point << ")";
  }
}

}  // namespace

TEST(SparsePartitionBuild, TwoPoints) {
  std::vector<Point> pts{{0, {0.0, 0.0}}, {1, {3.0, 4.0}}};
  for (auto mode : {PartitionMode::kTheoretical, PartitionMode::kSimplified}) {
    SparsePartition sp = SparsePartition::build(pts, config(mode, 1));
    EXPECT_EQ(sp.levels(), 1);
    expect_pair(sp.closest_pair(), PairResult{0, 1, 5.0});
    expect_clean(sp);
  }
}

TEST(SparsePartitionBuild, TieRuleLexicographicPair) {
  // Unit square: four pairs at distance exactly 1; (0,1) is lexicographically
  // smallest.
  std::vector<Point> pts{
      {0, {0.0, 0.0}}, {1, {1.0, 0.0}}, {2, {0.0, 1.0}}, {3, {1.0, 1.0}}};
  for (auto mode : {PartitionMode::kTheoretical, PartitionMode::kSimplified}) {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
      SparsePartition sp = SparsePartition::build(pts, config(mode, seed));
      expect_pair(sp.closest_pair(), PairResult{0, 1, 1.0});
    }
  }
}

TEST(SparsePartitionBuild, GridSideRule) {
  std::mt19937_64 gen(61);
  auto pts = oracle::random_points(gen, 300, 2, 40.0);
  SparsePartition sp = SparsePartition::build(pts, config(PartitionMode::kTheoretical, 3));
  for (int i = 1; i <= sp.levels(); ++i) {
    EXPECT_EQ(sp.level_side(i), sp.level_dist(i) / 12.0);  // d_i/(6k), k = 2
  }
  for (int i = 1; i < sp.levels(); ++i) {
    EXPECT_LE(sp.level_dist(i + 1), sp.level_dist(i) / 3.0 * (1 + 1e-9));
  }
}

TEST(SparsePartitionBuild, MatchesBruteForceAcrossSeeds) {
  std::mt19937_64 gen(62);
  for (int trial = 0; trial < 10; ++trial) {
    int k = (trial % 3 == 2) ? 5 : 2 + (trial % 3);
    auto pts = oracle::random_points(gen, 400, k, 35.0);
    PairResult want = oracle::closest_pair(pts);
    for (auto mode : {PartitionMode::kTheoretical, PartitionMode::kSimplified}) {
      SparsePartition sp = SparsePartition::build(pts, config(mode, 100 + trial));
      expect_pair(sp.closest_pair(), want);
      expect_clean(sp);
    }
  }
}

TEST(SparsePartitionBuild, Errors) {
  std::vector<Point> one{{0, {1.0, 1.0}}};
  EXPECT_THROW(SparsePartition::build(one, config(PartitionMode::kSimplified, 1)), UsageError);
  std::vector<Point> dup{{0, {1.0, 1.0}}, {1, {1.0, 1.0}}};
  EXPECT_THROW(SparsePartition::build(dup, config(PartitionMode::kSimplified, 1)), UsageError);
}

TEST(SparsePartition, RestrictedDistanceMatchesUnionScan) {
  std::mt19937_64 gen(63);
  for (int trial = 0; trial < 6; ++trial) {
    auto pts = oracle::random_points(gen, 300, 2, 30.0);
    SparsePartition sp =
        SparsePartition::build(pts, config(PartitionMode::kTheoretical, 200 + trial));
    std::vector<std::vector<Point>> sparse_sets(sp.levels() + 1);
    for (int i = 1; i <= sp.levels(); ++i) {
      for (PointId id : sp.level_sparse_members(i)) {
        sparse_sets[i].push_back(pts[id]);
      }
    }
    for (int i = 1; i <= sp.levels(); ++i) {
      for (PointId id : sp.level_sparse_members(i)) {
        RestrictedDistance rd = sp.restricted_distance(id, i);
        // Direct scan over the union of the last k+1 sparse sets.
        double best = kInf;
        for (int h = std::max(1, i - 2); h <= i; ++h) {
          for (const Point& q : sparse_sets[h]) {
            if (q.id == id) continue;
            best = std::min(best, std::sqrt(oracle::sqd(pts[id], q)));
          }
        }
        EXPECT_EQ(rd.value, best) << "point " << id << " level " << i;
        if (rd.value < kInf) {
          EXPECT_EQ(distance(pts[id], pts[rd.witness]), rd.value);
        } else {
          EXPECT_EQ(rd.witness, -1);
        }
      }
    }
    // Errors: wrong level for a point.
    PointId some = sp.level_sparse_members(sp.levels()).front();
    if (sp.levels() > 1) {
      EXPECT_THROW(sp.restricted_distance(some, 9999), UsageError);
    }
  }
}

TEST(SparsePartition, RestrictedDistanceInfiniteWhenAlone) {
  // A deep lone sparse point with every shallower sparse set out of range
  // only happens when the union minus the point is empty; easiest at level 1
  // with a singleton sparse set. Search seeds for the shape.
  std::vector<Point> pts{{0, {0.0}}, {1, {0.9}}, {2, {1000000.0}}};
  bool found = false;
  for (std::uint64_t seed = 1; seed <= 200 && !found; ++seed) {
    SparsePartition sp = SparsePartition::build(pts, config(PartitionMode::kTheoretical, seed));
    if (sp.levels() == 2 && sp.level_sparse_members(1) == std::vector<PointId>{2}) {
      RestrictedDistance rd = sp.restricted_distance(2, 1);
      EXPECT_EQ(rd.value, kInf);
      EXPECT_EQ(rd.witness, -1);
      expect_pair(sp.closest_pair(), oracle::closest_pair(pts));
      found = true;
    }
  }
  EXPECT_TRUE(found);
}

TEST(SparsePartitionInsert, EmptyBatchIsNoop) {
  std::mt19937_64 gen(64);
  auto pts = oracle::random_points(gen, 120, 2, 15.0);
  SparsePartition sp = SparsePartition::build(pts, config(PartitionMode::kTheoretical, 5));
  std::vector<PointId> members_before;
  for (int i = 1; i <= sp.levels(); ++i) {
    auto m = sp.level_members(i);
    members_before.insert(members_before.end(), m.begin(), m.end());
  }
  PairResult before = sp.closest_pair();
  sp.batch_insert({});
  std::vector<PointId> members_after;
  for (int i = 1; i <= sp.levels(); ++i) {
    auto m = sp.level_members(i);
    members_after.insert(members_after.end(), m.begin(), m.end());
  }
  EXPECT_EQ(members_before, members_after);
  expect_pair(sp.closest_pair(), before);
}

TEST(SparsePartitionInsert, BuildVsIncrementalAgree) {
  std::mt19937_64 gen(65);
  auto all = oracle::random_points(gen, 500, 2, 25.0);
  std::vector<Point> a(all.begin(), all.begin() + 300);
  std::vector<Point> b(all.begin() + 300, all.end());
  for (auto mode : {PartitionMode::kTheoretical, PartitionMode::kSimplified}) {
    SparsePartition whole = SparsePartition::build(all, config(mode, 77));
    SparsePartition grown = SparsePartition::build(a, config(mode, 77));
    grown.batch_insert(b);
    expect_pair(grown.closest_pair(), whole.closest_pair());
    expect_clean(grown);
  }
}

TEST(SparsePartitionDynamic, MixedBatchesMatchBruteEverywhere) {
  std::mt19937_64 gen(66);
  for (int k : {2, 5}) {
    for (auto proto : {HeapProtocol::kPull, HeapProtocol::kNaive}) {
      auto pts = oracle::random_points(gen, 500, k, 30.0);
      std::vector<Point> live(pts.begin(), pts.begin() + 300);
      SparsePartition theo =
          SparsePartition::build(live, config(PartitionMode::kTheoretical, 42, proto));
      SparsePartition simp =
          SparsePartition::build(live, config(PartitionMode::kSimplified, 42));
      PointId next_id = 500;
      std::uniform_real_distribution<double> coord(0.0, 30.0);
      for (int round = 0; round < 25; ++round) {
        if (round % 2 == 0) {
          int m = 1 + static_cast<int>(gen() % 40);
          std::vector<Point> batch;
          for (int i = 0; i < m; ++i) {
            Point p;
            p.id = next_id++;
            p.coords.resize(k);
            for (int j = 0; j < k; ++j) p.coords[j] = coord(gen);
            batch.push_back(p);
          }
          theo.batch_insert(batch);
          simp.batch_insert(batch);
          live.insert(live.end(), batch.begin(), batch.end());
        } else {
          int m = 1 + static_cast<int>(gen() % std::min<std::size_t>(40, live.size() - 3));
          std::vector<PointId> ids;
          for (int i = 0; i < m; ++i) {
            std::size_t pick = gen() % live.size();
            ids.push_back(live[pick].id);
            live.erase(live.begin() + pick);
          }
          theo.batch_delete(ids);
          simp.batch_delete(ids);
        }
        PairResult want = oracle::closest_pair(live);
        expect_pair(theo.closest_pair(), want);
        expect_pair(simp.closest_pair(), want);
        expect_clean(theo);
        expect_clean(simp);
        EXPECT_LE(theo.last_batch_stats().down_total, theo.last_batch_stats().packing_bound);
        EXPECT_LE(theo.last_batch_stats().up_total, theo.last_batch_stats().packing_bound);
      }
    }
  }
}

TEST(SparsePartitionDelete, InverseAndDrain) {
  std::mt19937_64 gen(67);
  auto pts = oracle::random_points(gen, 260, 2, 20.0);
  std::vector<Point> base(pts.begin(), pts.begin() + 200);
  std::vector<Point> extra(pts.begin() + 200, pts.end());
  SparsePartition sp = SparsePartition::build(base, config(PartitionMode::kSimplified, 9));
  PairResult before = sp.closest_pair();
  sp.batch_insert(extra);
  std::vector<PointId> extra_ids;
  for (const Point& p : extra) extra_ids.push_back(p.id);
  sp.batch_delete(extra_ids);
  expect_pair(sp.closest_pair(), before);
  expect_clean(sp);

  // Delete one endpoint of the closest pair.
  std::vector<Point> live = base;
  PairResult cp = sp.closest_pair();
  sp.batch_delete(std::vector<PointId>{cp.a});
  std::erase_if(live, [&](const Point& p) { return p.id == cp.a; });
  expect_pair(sp.closest_pair(), oracle::closest_pair(live));

  // Drain to two points by random batches.
  while (live.size() > 2) {
    int m = 1 + static_cast<int>(gen() % std::min<std::size_t>(25, live.size() - 2));
    std::vector<PointId> ids;
    for (int i = 0; i < m; ++i) {
      std::size_t pick = gen() % live.size();
      ids.push_back(live[pick].id);
      live.erase(live.begin() + pick);
    }
    sp.batch_delete(ids);
    expect_pair(sp.closest_pair(), oracle::closest_pair(live));
    expect_clean(sp);
  }
}

TEST(SparsePartitionDelete, DrainToIdleAndRefill) {
  std::vector<Point> pts{{0, {0.0, 0.0}}, {1, {5.0, 0.0}}, {2, {9.0, 3.0}}};
  SparsePartition sp = SparsePartition::build(pts, config(PartitionMode::kSimplified, 2));
  sp.batch_delete(std::vector<PointId>{0, 1});
  EXPECT_EQ(sp.size(), 1u);
  EXPECT_THROW(sp.closest_pair(), QueryError);
  expect_clean(sp);
  sp.batch_insert(std::vector<Point>{{7, {1.0, 1.0}}, {8, {1.5, 1.0}}});
  EXPECT_EQ(sp.size(), 3u);
  std::vector<Point> live{{2, {9.0, 3.0}}, {7, {1.0, 1.0}}, {8, {1.5, 1.0}}};
  expect_pair(sp.closest_pair(), oracle::closest_pair(live));
  expect_clean(sp);
}

TEST(SparsePartition, ValidateReportsInjectedFault) {
  std::mt19937_64 gen(68);
  auto pts = oracle::random_points(gen, 150, 2, 15.0);
  SparsePartition sp = SparsePartition::build(pts, config(PartitionMode::kSimplified, 4));
  expect_clean(sp);
  int level = sp.levels();
  PointId victim = sp.level_sparse_members(level).front();
  SparsePartition::TestAccess::remove_from_sparse(sp, level, victim);
  ValidationReport rep = sp.validate();
  ASSERT_FALSE(rep.clean);
  EXPECT_EQ(rep.first_issue->level, level);
  EXPECT_EQ(rep.first_issue->point, victim);
}

TEST(SparsePartition, InsertErrors) {
  std::vector<Point> pts{{0, {0.0, 0.0}}, {1, {4.0, 0.0}}};
  SparsePartition sp = SparsePartition::build(pts, config(PartitionMode::kSimplified, 2));
  EXPECT_THROW(sp.batch_insert(std::vector<Point>{{0, {9.0, 9.0}}}), UsageError);
  EXPECT_THROW(sp.batch_insert(std::vector<Point>{{5, {4.0, 0.0}}}), UsageError);
  EXPECT_THROW(sp.batch_delete(std::vector<PointId>{77}), UsageError);
  EXPECT_THROW(sp.batch_delete(std::vector<PointId>{0, 0}), UsageError);
  // Failed validation left the structure untouched.
  expect_clean(sp);
  EXPECT_EQ(sp.size(), 2u);
}

TEST(SparsePartition, AsyncHeapsAgree) {
  std::mt19937_64 gen(69);
  auto pts = oracle::random_points(gen, 400, 2, 25.0);
  PartitionConfig cfg = config(PartitionMode::kTheoretical, 11);
  cfg.async_heaps = true;
  SparsePartition sp = SparsePartition::build(pts, cfg);
  expect_pair(sp.closest_pair(), oracle::closest_pair(pts));
  std::vector<Point> live = pts;
  for (int round = 0; round < 6; ++round) {
    std::vector<PointId> ids;
    for (int i = 0; i < 30; ++i) {
      std::size_t pick = gen() % live.size();
      ids.push_back(live[pick].id);
      live.erase(live.begin() + pick);
    }
    sp.batch_delete(ids);
    expect_pair(sp.closest_pair(), oracle::closest_pair(live));
    expect_clean(sp);
  }
}

TEST(SparsePartition, LevelCountSanity) {
  std::mt19937_64 gen(70);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto pts = oracle::random_points(gen, 10000, 2, std::sqrt(10000.0));
    SparsePartition sp = SparsePartition::build(pts, config(PartitionMode::kSimplified, seed));
    EXPECT_LE(sp.levels(), 8.0 * std::log2(10000.0));
  }
}

TEST(SparsePartition, SimplifiedCutoffFormula) {
  std::mt19937_64 gen(71);
  auto pts = oracle::random_points(gen, 2000, 2, 45.0);
  SparsePartition sp = SparsePartition::build(pts, config(PartitionMode::kSimplified, 6));
  // k = 2: ceil(log3(2*sqrt(2))) = 1.
  EXPECT_EQ(sp.simplified_cutoff_level(), std::max(1, sp.levels() - 1));
}
