#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "cpd/bench_runner.hpp"
#include "cpd/dataset.hpp"
#include "cpd/error.hpp"
#include "cpd/kdtree.hpp"

using namespace cpd;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

double nn_dist_variance(const Dataset& ds) {
  PointPool pool(ds.dim);
  std::vector<Slot> slots;
  for (const Point& p : ds.points) slots.push_back(pool.insert(p.id, p.coords));
  DynKdTree tree = DynKdTree::build(pool, slots);
  double sum = 0, sq = 0;
  for (Slot s : slots) {
    Candidate c = tree.exact_nearest(pool.coords(s), s, 1.0);
    double d = std::sqrt(c.sqdist);
    sum += d;
    sq += d * d;
  }
  double n = static_cast<double>(slots.size());
  double mean = sum / n;
  return sq / n - mean * mean;
}

}  // namespace

TEST(GenerateUniform, BasicsAndDeterminism) {
  Dataset tiny = generate_uniform(2, 1, 5);
  ASSERT_EQ(tiny.points.size(), 2u);
  EXPECT_NE(tiny.points[0].coords[0], tiny.points[1].coords[0]);
  for (const Point& p : tiny.points) {
    EXPECT_GE(p.coords[0], 0.0);
    EXPECT_LE(p.coords[0], std::sqrt(2.0));
  }
  Dataset a = generate_uniform(1000, 3, 7);
  Dataset b = generate_uniform(1000, 3, 7);
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    EXPECT_EQ(a.points[i].coords, b.points[i].coords);
  }
  EXPECT_THROW(generate_uniform(1, 2, 1), UsageError);
  EXPECT_THROW(generate_uniform(10, 0, 1), UsageError);
}

TEST(GenerateUniform, CoordinateMean) {
  const std::size_t n = 100000;
  Dataset ds = generate_uniform(n, 2, 11);
  double sum = 0;
  for (const Point& p : ds.points) sum += p.coords[0];
  double mean = sum / static_cast<double>(n);
  double want = std::sqrt(static_cast<double>(n)) / 2.0;
  EXPECT_NEAR(mean, want, 0.05 * want);
}

TEST(GenerateVarden, BasicsAndHeavierTail) {
  Dataset tiny = generate_varden(2, 2, 3);
  ASSERT_EQ(tiny.points.size(), 2u);
  EXPECT_NE(tiny.points[0].coords, tiny.points[1].coords);
  Dataset a = generate_varden(4000, 2, 9);
  Dataset b = generate_varden(4000, 2, 9);
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    EXPECT_EQ(a.points[i].coords, b.points[i].coords);
  }
  // Nearest-neighbor distances spread much wider than uniform data of the
  // same size.
  Dataset u = generate_uniform(4000, 2, 9);
  EXPECT_GT(nn_dist_variance(a) / nn_dist_variance(u), 2.0);
}

TEST(PointsIO, RoundTripAndFormat) {
  std::string path = temp_path("parcp_io_test.txt");
  {
    std::ofstream out(path);
    out << "# comment line\n";
    out << "0 0\n";
    out << "\n";
    out << "3, 4\n";
  }
  Dataset ds = load_points(path);
  EXPECT_EQ(ds.dim, 2);
  ASSERT_EQ(ds.points.size(), 2u);
  EXPECT_EQ(ds.points[0].id, 0);
  EXPECT_EQ(ds.points[1].id, 1);
  EXPECT_EQ(ds.points[1].coords, (std::vector<double>{3.0, 4.0}));

  Dataset gen = generate_uniform(500, 3, 99);
  save_points(gen, path);
  Dataset back = load_points(path);
  ASSERT_EQ(back.points.size(), gen.points.size());
  for (std::size_t i = 0; i < gen.points.size(); ++i) {
    EXPECT_EQ(back.points[i].coords, gen.points[i].coords);
  }
  std::remove(path.c_str());
}

TEST(PointsIO, Errors) {
  std::string path = temp_path("parcp_io_bad.txt");
  {
    std::ofstream out(path);
    out << "0 0\n1 1\nnope 3\n";
  }
  try {
    load_points(path);
    FAIL() << "expected UsageError";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos);
  }
  {
    std::ofstream out(path);
    out << "0 0 0\n1 1\n";
  }
  EXPECT_THROW(load_points(path), UsageError);
  {
    std::ofstream out(path);
    out << "0 0\n";
  }
  EXPECT_THROW(load_points(path), UsageError);
  EXPECT_THROW(load_points(temp_path("parcp_does_not_exist.txt")), UsageError);
  std::remove(path.c_str());
}

TEST(RunStatic, VerifiesAndAgrees) {
  Dataset two;
  two.dim = 2;
  two.name = "two";
  two.points = {{0, {0.0, 0.0}}, {1, {3.0, 4.0}}};
  StaticRunOptions opt;
  RunReport r = run_static("brute", two, opt);
  EXPECT_TRUE(r.verified);
  EXPECT_EQ(r.result.dist, 5.0);

  Dataset ds = generate_uniform(800, 2, 17);
  double dist = -1;
  for (const char* algo : {"divide-conquer", "rabin", "sieve", "incremental"}) {
    RunReport rep = run_static(algo, ds, opt);
    EXPECT_TRUE(rep.verified) << algo;
    if (dist < 0) dist = rep.result.dist;
    EXPECT_EQ(rep.result.dist, dist) << algo;
  }
  EXPECT_THROW(run_static("qp-solver", ds, opt), UsageError);
}

TEST(RunDynamic, ProtocolsAndVerification) {
  Dataset ds = generate_uniform(400, 2, 23);
  DynamicRunOptions opt;
  opt.batch_size = ds.points.size();
  auto whole = run_dynamic(ds, true, opt);
  ASSERT_EQ(whole.size(), 2u);  // one batch + total
  EXPECT_TRUE(whole[0].verified);
  EXPECT_GT(whole[1].throughput, 0.0);

  opt.batch_size = 64;
  auto ins = run_dynamic(ds, true, opt);
  for (const RunReport& r : ins) EXPECT_TRUE(r.verified) << r.algorithm;
  auto del = run_dynamic(ds, false, opt);
  for (std::size_t i = 0; i + 1 < del.size(); ++i) {
    if (del[i].result.a >= 0) EXPECT_TRUE(del[i].verified);
  }
  EXPECT_EQ(ins.back().algorithm, "dynamic-insert-total");
  EXPECT_EQ(del.back().algorithm, "dynamic-delete-total");

  // Deterministic fields across reruns.
  auto again = run_dynamic(ds, true, opt);
  ASSERT_EQ(again.size(), ins.size());
  for (std::size_t i = 0; i < ins.size(); ++i) {
    EXPECT_EQ(again[i].result.dist, ins[i].result.dist);
    EXPECT_EQ(again[i].result.a, ins[i].result.a);
    EXPECT_EQ(again[i].batch_size, ins[i].batch_size);
  }
  DynamicRunOptions bad;
  bad.batch_size = 0;
  EXPECT_THROW(run_dynamic(ds, true, bad), UsageError);
}

TEST(Reports, CsvShape) {
  Dataset ds = generate_uniform(300, 2, 29);
  StaticRunOptions opt;
  std::vector<RunReport> reports{run_static("rabin", ds, opt), run_static("brute", ds, opt)};
  std::string path = temp_path("parcp_reports.csv");
  write_csv(reports, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "algorithm,dataset,batch_size,seconds,throughput,dist,id_a,id_b,verified");
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  EXPECT_EQ(rows, 2);
  std::remove(path.c_str());

  std::ostringstream table;
  print_table(reports, table);
  EXPECT_NE(table.str().find("rabin"), std::string::npos);
}
