// Serial driver vs OpenMP driver over the query batch, for each kernel.

#include <benchmark/benchmark.h>

#include "flashd/kernels.hpp"
#include "flashd/tensorio.hpp"

namespace {

flashd::AttnProblem problem(std::size_t d) {
  flashd::GenSpec spec;
  spec.seed = 42;
  spec.n = 512;
  spec.d = d;
  spec.queries = 32;
  return flashd::generate(spec);
}

template <bool Parallel>
void BM_Kernel(benchmark::State& state) {
  const auto kind = static_cast<flashd::KernelKind>(state.range(0));
  const auto p = problem(static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) {
    auto run = Parallel ? flashd::run_kernel(p, kind) : flashd::run_kernel_serial(p, kind);
    benchmark::DoNotOptimize(run.outputs.values.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(p.queries * p.n));
  state.SetLabel(std::string(flashd::to_string(kind)));
}

void grid(benchmark::internal::Benchmark* b) {
  for (int kind = 0; kind < 4; ++kind)
    for (int d : {16, 64, 256}) b->Args({kind, d});
}

}  // namespace

BENCHMARK(BM_Kernel<false>)->Name("serial")->Apply(grid)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Kernel<true>)->Name("openmp")->Apply(grid)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
