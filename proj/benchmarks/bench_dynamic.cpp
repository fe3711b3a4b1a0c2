// Batch-dynamic structure: insertion and deletion throughput by batch size.
#include <benchmark/benchmark.h>

#include "cpd/dataset.hpp"
#include "cpd/sparse_partition.hpp"

using namespace cpd;

namespace {

void BM_BatchInsert(benchmark::State& state) {
  const std::size_t n = 200000;
  const std::size_t batch = static_cast<std::size_t>(state.range(0));
  Dataset ds = generate_uniform(n, 2, 5);
  PartitionConfig cfg;
  for (auto _ : state) {
    SparsePartition sp(ds.dim, cfg);
    std::size_t done = 0;
    while (done < n) {
      std::size_t b = std::min(batch, n - done);
      sp.batch_insert(std::span<const Point>(ds.points.data() + done, b));
      done += b;
    }
    benchmark::DoNotOptimize(sp.closest_pair());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_BatchInsert)->Arg(100)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_BatchDelete(benchmark::State& state) {
  const std::size_t n = 100000;
  const std::size_t batch = static_cast<std::size_t>(state.range(0));
  Dataset ds = generate_uniform(n, 2, 6);
  PartitionConfig cfg;
  for (auto _ : state) {
    state.PauseTiming();
    SparsePartition sp = SparsePartition::build(ds.points, cfg);
    state.ResumeTiming();
    std::size_t done = 0;
    while (done < n) {
      std::size_t b = std::min(batch, n - done);
      std::vector<PointId> ids;
      ids.reserve(b);
      for (std::size_t i = done; i < done + b; ++i) ids.push_back(ds.points[i].id);
      sp.batch_delete(ids);
      done += b;
    }
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_BatchDelete)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
