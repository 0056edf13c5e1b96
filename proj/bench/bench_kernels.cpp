// Serial reference vs OpenMP conv tile on tile shapes the compiler emits.
#include <benchmark/benchmark.h>

#include <vector>

#include "sde/kernels.hpp"

namespace {

sde::TileLoop shape(const benchmark::State& st) {
  return {uint16_t(st.range(0)), uint16_t(st.range(1)), uint16_t(st.range(2)), uint16_t(st.range(2)), 3, 1};
}

template <bool Parallel>
void BM_ConvTile(benchmark::State& st) {
  const sde::TileLoop t = shape(st);
  std::vector<int8_t> in(t.input_bytes()), w(t.weight_bytes());
  std::vector<int32_t> acc(t.acc_bytes() / 4);
  sde::fill_synthetic(in, 1);
  sde::fill_synthetic(w, 2);
  for (auto _ : st) {
    if constexpr (Parallel) sde::conv_tile(in.data(), w.data(), acc.data(), t, true);
    else sde::conv_tile_ref(in.data(), w.data(), acc.data(), t, true);
    benchmark::DoNotOptimize(acc.data());
  }
  st.SetItemsProcessed(int64_t(st.iterations() * t.macs()));
}

void args(benchmark::internal::Benchmark* b) {
  // out channels, in channels, output edge
  b->Args({8, 8, 16})->Args({32, 16, 16})->Args({64, 64, 16})->Args({128, 64, 32});
}

}  // namespace

BENCHMARK(BM_ConvTile<false>)->Name("conv_tile/serial")->Apply(args);
BENCHMARK(BM_ConvTile<true>)->Name("conv_tile/openmp")->Apply(args);

BENCHMARK_MAIN();
