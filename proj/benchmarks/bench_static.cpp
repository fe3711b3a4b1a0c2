// Static closest pair algorithms on uniform data.
#include <benchmark/benchmark.h>

#include "cpd/dataset.hpp"
#include "cpd/static_closest_pair.hpp"

using namespace cpd;

namespace {

void run(benchmark::State& state, PairResult (*algo)(std::span<const Point>,
                                                     const StaticConfig&)) {
  Dataset ds =
      generate_uniform(static_cast<std::size_t>(state.range(0)), static_cast<int>(state.range(1)), 7);
  StaticConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(algo(ds.points, cfg));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_DivideConquer(benchmark::State& state) { run(state, divide_conquer); }
void BM_Rabin(benchmark::State& state) { run(state, rabin); }
void BM_Sieve(benchmark::State& state) { run(state, sieve); }
void BM_Incremental(benchmark::State& state) { run(state, incremental); }

}  // namespace

BENCHMARK(BM_DivideConquer)->Args({100000, 2})->Args({100000, 5});
BENCHMARK(BM_Rabin)->Args({100000, 2})->Args({100000, 5});
BENCHMARK(BM_Sieve)->Args({100000, 2})->Args({100000, 5});
BENCHMARK(BM_Incremental)->Args({100000, 2})->Args({100000, 5});

BENCHMARK_MAIN();
