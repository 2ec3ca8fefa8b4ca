// Serial reference vs OpenMP kernels. Set OMP_NUM_THREADS to vary the
// thread count.

#include <benchmark/benchmark.h>

#include <vector>

#include "maven/kernels.hpp"
#include "maven/rng.hpp"

using namespace maven;
namespace k = maven::kernels;

namespace {

template <void (*Kernel)(const Tensor&, const Tensor&, Tensor&)>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = normal_tensor({n, n}, 1.0, rng);
  const Tensor b = normal_tensor({n, n}, 1.0, rng);
  Tensor out = Tensor::matrix(n, n);
  for (auto _ : state) {
    Kernel(a, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <void (*Kernel)(const Tensor&, const Tensor&, std::span<std::size_t>, std::span<double>)>
void BM_Nearest(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Tensor queries = normal_tensor({n, 16}, 1.0, rng);
  const Tensor codewords = normal_tensor({256, 16}, 1.0, rng);
  std::vector<std::size_t> index(n);
  std::vector<double> dist(n);
  for (auto _ : state) {
    Kernel(queries, codewords, index, dist);
    benchmark::DoNotOptimize(index.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

template <void (*Kernel)(std::span<const std::uint8_t>, k::PatchGrid, std::size_t, std::span<std::uint8_t>)>
void BM_PatchAny(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const k::PatchGrid grid{side, side, 14};
  Rng rng(3);
  std::vector<std::uint8_t> mask(side * side);
  for (auto& v : mask) v = rng.uniform() < 0.01 ? 1 : 0;
  std::vector<std::uint8_t> labels((side / 14) * (side / 14));
  for (auto _ : state) {
    Kernel(mask, grid, 1, labels);
    benchmark::DoNotOptimize(labels.data());
  }
}

}  // namespace

BENCHMARK(BM_Matmul<k::serial::matmul>)->Name("matmul/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Matmul<k::parallel::matmul>)->Name("matmul/parallel")->Arg(64)->Arg(256)->UseRealTime();
BENCHMARK(BM_Matmul<k::serial::matmul_nt>)->Name("matmul_nt/serial")->Arg(256);
BENCHMARK(BM_Matmul<k::parallel::matmul_nt>)->Name("matmul_nt/parallel")->Arg(256)->UseRealTime();
BENCHMARK(BM_Nearest<k::serial::nearest_rows>)->Name("nearest_rows/serial")->Arg(4096);
BENCHMARK(BM_Nearest<k::parallel::nearest_rows>)->Name("nearest_rows/parallel")->Arg(4096)->UseRealTime();
BENCHMARK(BM_PatchAny<k::serial::patch_any>)->Name("patch_any/serial")->Arg(336)->Arg(1344);
BENCHMARK(BM_PatchAny<k::parallel::patch_any>)->Name("patch_any/parallel")->Arg(336)->Arg(1344)->UseRealTime();

BENCHMARK_MAIN();
