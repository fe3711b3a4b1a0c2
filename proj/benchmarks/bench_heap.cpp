// Microbenchmarks for the batch heap: synchronous vs asynchronous repair
// across batch sizes.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "cpd/batch_heap.hpp"
#include "cpd/scheduler.hpp"

using namespace cpd;

namespace {

constexpr std::size_t kHeapSize = 1 << 17;

BatchHeap make_heap(std::mt19937_64& gen) {
  std::uniform_real_distribution<double> key(0, 1e6);
  std::vector<HeapEntry> entries;
  entries.reserve(kHeapSize);
  for (PointId o = 0; o < static_cast<PointId>(kHeapSize); ++o) {
    entries.push_back(HeapEntry{key(gen), o, -1});
  }
  return BatchHeap::build(entries);
}

std::vector<KeyUpdate> make_updates(BatchHeap& h, std::mt19937_64& gen, std::size_t m) {
  std::uniform_real_distribution<double> key(0, 1e6);
  std::vector<KeyUpdate> ups;
  ups.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    PointId o = static_cast<PointId>(gen() % kHeapSize);
    if (!h.contains(o)) continue;
    bool dup = false;
    for (const auto& u : ups) {
      if (u.owner == o) dup = true;
    }
    if (dup) continue;
    ups.push_back(KeyUpdate{o, h.key_of(o), key(gen)});
  }
  return ups;
}

void BM_HeapifySync(benchmark::State& state) {
  std::mt19937_64 gen(1);
  BatchHeap h = make_heap(gen);
  const std::size_t m = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    state.PauseTiming();
    auto ups = make_updates(h, gen, m);
    state.ResumeTiming();
    h.heapify(ups);
  }
}
BENCHMARK(BM_HeapifySync)->Arg(16)->Arg(256)->Arg(4096);

void BM_HeapifyAsync(benchmark::State& state) {
  std::mt19937_64 gen(1);
  BatchHeap h = make_heap(gen);
  const std::size_t m = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    state.PauseTiming();
    auto ups = make_updates(h, gen, m);
    state.ResumeTiming();
    h.async_heapify(ups);
  }
}
BENCHMARK(BM_HeapifyAsync)->Arg(16)->Arg(256)->Arg(4096);

void BM_BatchInsertDelete(benchmark::State& state) {
  std::mt19937_64 gen(2);
  BatchHeap h = make_heap(gen);
  std::uniform_real_distribution<double> key(0, 1e6);
  const std::size_t m = static_cast<std::size_t>(state.range(0));
  PointId next = kHeapSize;
  for (auto _ : state) {
    std::vector<HeapEntry> add;
    std::vector<PointId> del;
    for (std::size_t i = 0; i < m; ++i) {
      add.push_back(HeapEntry{key(gen), next + static_cast<PointId>(i), -1});
      del.push_back(next + static_cast<PointId>(i));
    }
    next += static_cast<PointId>(m);
    h.batch_insert(add);
    h.batch_delete(del);
  }
}
BENCHMARK(BM_BatchInsertDelete)->Arg(256)->Arg(4096);

}  // namespace

BENCHMARK_MAIN();
