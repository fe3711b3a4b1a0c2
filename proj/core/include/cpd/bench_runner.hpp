#pragma once

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cpd/dataset.hpp"
#include "cpd/sparse_partition.hpp"
#include "cpd/static_closest_pair.hpp"

namespace cpd {

struct RunReport {
  std::string algorithm;
  std::string dataset;
  std::size_t batch_size = 0;
  double seconds = 0.0;
  double throughput = 0.0;  // processed points per second
  PairResult result;
  bool verified = false;  // true iff the oracle check ran and passed
};

inline constexpr std::size_t kDefaultVerifyCutoff = 20000;

struct StaticRunOptions {
  StaticConfig cfg;
  std::size_t verify_cutoff = kDefaultVerifyCutoff;
};

// One untimed warm-up, one timed run; verifies against brute_force when the
// dataset is at most verify_cutoff points. algo is one of divide-conquer,
// rabin, sieve, incremental, brute.
RunReport run_static(const std::string& algo, const Dataset& ds, const StaticRunOptions& opt);

struct DynamicRunOptions {
  std::size_t batch_size = 1000;
  PartitionMode mode = PartitionMode::kSimplified;
  std::uint64_t seed = 1;
  std::size_t verify_cutoff = kDefaultVerifyCutoff;
};

// Insertion protocol: start empty and insert equal batches to exhaustion
// (the first batch's build is timed). Deletion protocol: build on the full
// set untimed, then delete equal batches to exhaustion. Returns one report
// per batch plus a total row; per-batch oracle verification runs while the
// current size stays within verify_cutoff.
std::vector<RunReport> run_dynamic(const Dataset& ds, bool insert_op,
                                   const DynamicRunOptions& opt);

void print_table(std::span<const RunReport> reports, std::ostream& out);
void write_csv(std::span<const RunReport> reports, const std::string& path);

}  // namespace cpd
