#include <benchmark/benchmark.h>
static void BM_pending(benchmark::State& s) { for (auto _ : s) benchmark::DoNotOptimize(0); }
BENCHMARK(BM_pending);
BENCHMARK_MAIN();
