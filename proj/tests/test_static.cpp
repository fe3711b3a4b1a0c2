#include <gtest/gtest.h>

#include <random>

#include "cpd/error.hpp"
#include "cpd/static_closest_pair.hpp"
#include "oracles.hpp"

using namespace cpd;

namespace {

std::vector<Point> two() { return {{0, {0.0, 0.0}}, {1, {3.0, 4.0}}}; }

void expect_same(const PairResult& got, const PairResult& want) {
  EXPECT_EQ(got.a, want.a);
  EXPECT_EQ(got.b, want.b);
  EXPECT_EQ(got.dist, want.dist);  // bitwise
}

}  // namespace

TEST(BruteForce, Examples) {
  PairResult r = brute_force(two());
  expect_same(r, PairResult{0, 1, 5.0});
  std::vector<Point> line{{0, {0.0}}, {1, {1.0}}, {2, {3.0}}};
  expect_same(brute_force(line), PairResult{0, 1, 1.0});
  std::vector<Point> one{{0, {0.0}}};
  EXPECT_THROW(brute_force(one), QueryError);
}

TEST(BruteForce, MatchesIndependentDoubleLoop) {
  std::mt19937_64 gen(51);
  for (int t = 0; t < 20; ++t) {
    int k = 1 + static_cast<int>(gen() % 4);
    auto pts = oracle::random_points(gen, 2 + gen() % 200, k);
    expect_same(brute_force(pts), oracle::closest_pair(pts));
  }
}

TEST(DivideConquer, TwoPointsAndSlabStraddle) {
  expect_same(divide_conquer(two()), PairResult{0, 1, 5.0});
  // The winning pair straddles the median plane; both halves hold farther
  // pairs.
  std::vector<Point> pts{
      {0, {-5.0, 0.0}}, {1, {-5.0, 3.0}}, {2, {-0.1, 1.5}},
      {3, {0.1, 1.5}},  {4, {5.0, 0.0}},  {5, {5.0, 3.0}},
  };
  StaticConfig cfg;
  cfg.cutoff = 2;
  expect_same(divide_conquer(pts, cfg), oracle::closest_pair(pts));
  EXPECT_EQ(divide_conquer(pts, cfg).a, 2);
  EXPECT_EQ(divide_conquer(pts, cfg).b, 3);
}

TEST(StaticConfigValidation, Errors) {
  StaticConfig bad;
  bad.sample_exponent = 1.5;
  EXPECT_THROW(rabin(two(), bad), UsageError);
  bad = StaticConfig{};
  bad.cutoff = 1;
  EXPECT_THROW(divide_conquer(two(), bad), UsageError);
  std::vector<Point> dup{{0, {1.0, 1.0}}, {1, {1.0, 1.0}}};
  EXPECT_THROW(rabin(dup), UsageError);
}

TEST(Rabin, SmallEqualsBrute) {
  std::mt19937_64 gen(52);
  auto pts = oracle::random_points(gen, 50, 2);  // below the default cutoff path
  expect_same(rabin(pts), brute_force(pts));
  StaticConfig cfg;
  EXPECT_EQ(cfg.sample_exponent, 0.8);
}

TEST(Sieve, TwoPointsAndAllSparse) {
  expect_same(sieve(two()), PairResult{0, 1, 5.0});
  // Widely separated points are all sparse in round one.
  std::vector<Point> spread{{0, {0.0}}, {1, {100.0}}, {2, {250.0}}, {3, {420.0}}};
  expect_same(sieve(spread), oracle::closest_pair(spread));
}

TEST(Incremental, TwoPointsAndAdversarialOrder) {
  expect_same(incremental(two()), PairResult{0, 1, 5.0});
  // Successively closer pairs force repeated rebuilds regardless of the
  // seeded permutation.
  std::vector<Point> pts;
  double gap = 1024.0;
  double x = 0.0;
  PointId id = 0;
  for (int i = 0; i < 12; ++i) {
    pts.push_back({id++, {x, 0.0}});
    pts.push_back({id++, {x + gap, 0.0}});
    x += 3e5;
    gap /= 2;
  }
  for (std::uint64_t seed : {1ull, 7ull, 99ull}) {
    StaticConfig cfg;
    cfg.seed = seed;
    expect_same(incremental(pts, cfg), oracle::closest_pair(pts));
  }
}

TEST(AllAlgorithms, CrossAgreementRandom) {
  std::mt19937_64 gen(53);
  for (int t = 0; t < 20; ++t) {
    int k = 1 + static_cast<int>(gen() % 3);
    std::size_t n = 100 + gen() % 400;
    double span = (t % 2) ? 1000.0 : 20.0;
    auto pts = oracle::random_points(gen, n, k, span);
    StaticConfig cfg;
    cfg.seed = 1000 + t;
    PairResult want = brute_force(pts);
    expect_same(divide_conquer(pts, cfg), want);
    expect_same(rabin(pts, cfg), want);
    expect_same(sieve(pts, cfg), want);
    expect_same(incremental(pts, cfg), want);
  }
}

TEST(AllAlgorithms, ClusteredData) {
  // Tight clusters with far-apart centers stress the grid sides.
  std::mt19937_64 gen(54);
  std::vector<Point> pts;
  PointId id = 0;
  for (int c = 0; c < 12; ++c) {
    double cx = 1e4 * static_cast<double>(gen() % 1000);
    double cy = 1e4 * static_cast<double>(gen() % 1000);
    std::uniform_real_distribution<double> local(0.0, 2.0);
    for (int i = 0; i < 40; ++i) {
      pts.push_back({id++, {cx + local(gen), cy + local(gen)}});
    }
  }
  StaticConfig cfg;
  PairResult want = brute_force(pts);
  expect_same(divide_conquer(pts, cfg), want);
  expect_same(rabin(pts, cfg), want);
  expect_same(sieve(pts, cfg), want);
  expect_same(incremental(pts, cfg), want);
}
