#include "cpd/bench_runner.hpp"

#include <chrono>
#include <cstdio>
#include <iomanip>

#include "cpd/error.hpp"

namespace cpd {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

PairResult run_algo(const std::string& algo, std::span<const Point> pts,
                    const StaticConfig& cfg) {
  if (algo == "brute") return brute_force(pts);
  if (algo == "divide-conquer") return divide_conquer(pts, cfg);
  if (algo == "rabin") return rabin(pts, cfg);
  if (algo == "sieve") return sieve(pts, cfg);
  if (algo == "incremental") return incremental(pts, cfg);
  throw UsageError("unknown algorithm: " + algo +
                   " (expected divide-conquer, rabin, sieve, incremental, brute)");
}

}  // namespace

RunReport run_static(const std::string& algo, const Dataset& ds, const StaticRunOptions& opt) {
  RunReport rep;
  rep.algorithm = algo;
  rep.dataset = ds.name;
  rep.batch_size = ds.points.size();
  (void)run_algo(algo, ds.points, opt.cfg);  // warm-up
  Clock::time_point t0 = Clock::now();
  rep.result = run_algo(algo, ds.points, opt.cfg);
  rep.seconds = seconds_since(t0);
  rep.throughput = rep.seconds > 0 ? static_cast<double>(ds.points.size()) / rep.seconds : 0.0;
  if (ds.points.size() <= opt.verify_cutoff) {
    PairResult want = algo == "brute" ? rep.result : brute_force(ds.points);
    rep.verified = want == rep.result;
  }
  return rep;
}

std::vector<RunReport> run_dynamic(const Dataset& ds, bool insert_op,
                                   const DynamicRunOptions& opt) {
  if (opt.batch_size < 1) throw UsageError("batch size must be >= 1");
  const std::size_t n = ds.points.size();
  PartitionConfig cfg;
  cfg.mode = opt.mode;
  cfg.seed = opt.seed;

  std::vector<RunReport> reports;
  const char* op_name = insert_op ? "dynamic-insert" : "dynamic-delete";
  double total_seconds = 0.0;

  SparsePartition sp(ds.dim, cfg);
  std::vector<Point> current;

  if (!insert_op) {
    sp = SparsePartition::build(ds.points, cfg);
    current = ds.points;
  }

  std::size_t done = 0;
  while (done < n) {
    std::size_t b = std::min(opt.batch_size, n - done);
    RunReport rep;
    rep.algorithm = op_name;
    rep.dataset = ds.name;
    rep.batch_size = b;
    Clock::time_point t0 = Clock::now();
    if (insert_op) {
      sp.batch_insert(std::span<const Point>(ds.points.data() + done, b));
    } else {
      std::vector<PointId> ids;
      ids.reserve(b);
      for (std::size_t i = done; i < done + b; ++i) ids.push_back(ds.points[i].id);
      sp.batch_delete(ids);
    }
    rep.seconds = seconds_since(t0);
    total_seconds += rep.seconds;
    rep.throughput = rep.seconds > 0 ? static_cast<double>(b) / rep.seconds : 0.0;
    done += b;

    if (insert_op) {
      current.insert(current.end(), ds.points.begin() + (done - b), ds.points.begin() + done);
    } else {
      current.erase(current.begin(), current.begin() + b);
    }
    if (sp.size() >= 2) {
      rep.result = sp.closest_pair();
      if (current.size() <= opt.verify_cutoff) {
        rep.verified = brute_force(current) == rep.result;
      }
    }
    reports.push_back(std::move(rep));
  }

  RunReport total;
  total.algorithm = std::string(op_name) + "-total";
  total.dataset = ds.name;
  total.batch_size = opt.batch_size;
  total.seconds = total_seconds;
  total.throughput = total_seconds > 0 ? static_cast<double>(n) / total_seconds : 0.0;
  if (!reports.empty()) {
    total.result = reports.back().result;
    total.verified = std::all_of(reports.begin(), reports.end(),
                                 [](const RunReport& r) { return r.verified; });
  }
  reports.push_back(std::move(total));
  return reports;
}

void print_table(std::span<const RunReport> reports, std::ostream& out) {
  out << std::left << std::setw(22) << "algorithm" << std::setw(26) << "dataset"
      << std::right << std::setw(10) << "batch" << std::setw(12) << "seconds"
      << std::setw(14) << "pts/sec" << std::setw(22) << "dist" << std::setw(10) << "pair_a"
      << std::setw(10) << "pair_b" << std::setw(10) << "verified" << "\n";
  for (const RunReport& r : reports) {
    out << std::left << std::setw(22) << r.algorithm << std::setw(26) << r.dataset
        << std::right << std::setw(10) << r.batch_size << std::setw(12) << std::fixed
        << std::setprecision(4) << r.seconds << std::setw(14) << std::setprecision(0)
        << r.throughput << std::setw(22) << std::setprecision(12) << std::defaultfloat
        << r.result.dist << std::setw(10) << r.result.a << std::setw(10) << r.result.b
        << std::setw(10) << (r.verified ? "yes" : "-") << "\n";
  }
}

void write_csv(std::span<const RunReport> reports, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw UsageError("cannot write " + path);
  std::fprintf(f, "algorithm,dataset,batch_size,seconds,throughput,dist,id_a,id_b,verified\n");
  for (const RunReport& r : reports) {
    std::fprintf(f, "%s,%s,%zu,%.9f,%.3f,%.17g,%lld,%lld,%d\n", r.algorithm.c_str(),
                 r.dataset.c_str(), r.batch_size, r.seconds, r.throughput, r.result.dist,
                 static_cast<long long>(r.result.a), static_cast<long long>(r.result.b),
                 r.verified ? 1 : 0);
  }
  std::fclose(f);
}

}  // namespace cpd
