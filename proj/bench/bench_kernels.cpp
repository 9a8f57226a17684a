#include <benchmark/benchmark.h>

#include <vector>

#include "neurodec/kernels.hpp"
#include "neurodec/rng.hpp"

using namespace neurodec;

namespace {

std::vector<double> random_buffer(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

template <auto Gemm>
void BM_gemm(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    auto a = random_buffer(n * n, 1), b = random_buffer(n * n, 2);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        Gemm(a.data(), b.data(), c.data(), n, n, n, false);
        benchmark::DoNotOptimize(c.data());
    }
    state.counters["GFLOPS"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                                  benchmark::Counter::kIs1000);
}

template <auto Im2col>
void BM_im2col(benchmark::State& state) {
    const std::size_t hw = static_cast<std::size_t>(state.range(0)), c = 32, k = 3;
    auto x = random_buffer(hw * hw * c, 3);
    std::vector<double> cols(hw * hw * k * k * c);
    for (auto _ : state) {
        Im2col(x.data(), cols.data(), hw, hw, c, k, 1, 1);
        benchmark::DoNotOptimize(cols.data());
    }
}

template <auto Softmax>
void BM_softmax(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    auto x = random_buffer(n * n, 4);
    std::vector<double> y(n * n);
    for (auto _ : state) {
        Softmax(x.data(), y.data(), n, n);
        benchmark::DoNotOptimize(y.data());
    }
}

}  // namespace

BENCHMARK(BM_gemm<kernels::serial::gemm_nn>)->Name("gemm_nn/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm<kernels::parallel::gemm_nn>)->Name("gemm_nn/parallel")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm<kernels::serial::gemm_nt>)->Name("gemm_nt/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm<kernels::parallel::gemm_nt>)->Name("gemm_nt/parallel")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm<kernels::serial::gemm_tn>)->Name("gemm_tn/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm<kernels::parallel::gemm_tn>)->Name("gemm_tn/parallel")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_im2col<kernels::serial::im2col>)->Name("im2col/serial")->Arg(8)->Arg(16)->Arg(32);
BENCHMARK(BM_im2col<kernels::parallel::im2col>)->Name("im2col/parallel")->Arg(8)->Arg(16)->Arg(32);
BENCHMARK(BM_softmax<kernels::serial::softmax_rows>)->Name("softmax/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_softmax<kernels::parallel::softmax_rows>)->Name("softmax/parallel")->Arg(64)->Arg(256);

BENCHMARK_MAIN();
