// Parallel kernels against their serial references on desk-sized shapes.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "uad/kernels.hpp"

using namespace uad;
using kernels::ConvGeometry;
using kernels::Padding;

namespace {

std::vector<float> random_vector(std::size_t n, unsigned seed) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<float> u(-1.f, 1.f);
    std::vector<float> v(n);
    for (auto& x : v) x = u(gen);
    return v;
}

// Attention-sized product: 256 tokens, 96 wide.
constexpr std::int64_t kM = 256, kN = 384, kK = 96;

template <bool Parallel>
void BM_gemm(benchmark::State& state) {
    const auto a = random_vector(kM * kK, 1), b = random_vector(kK * kN, 2);
    std::vector<float> c(kM * kN);
    for (auto _ : state) {
        if constexpr (Parallel) kernels::gemm(false, false, kM, kN, kK, a.data(), b.data(), c.data(), false);
        else kernels::reference::gemm(false, false, kM, kN, kK, a.data(), b.data(), c.data(), false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * kM * kN * kK);
}

// Batch 4, 64x64x8 -> 32x32x16 with a 5x5 stride-2 filter.
ConvGeometry desk_conv() { return kernels::conv_geometry(4, 64, 64, 8, 16, 5, 2, Padding::same); }

template <bool Parallel>
void BM_conv_forward(benchmark::State& state) {
    const auto g = desk_conv();
    const auto x = random_vector(g.batch * g.in_h * g.in_w * g.in_c, 3);
    const auto w = random_vector(g.kernel * g.kernel * g.in_c * g.out_c, 4);
    std::vector<float> y(g.batch * g.out_h * g.out_w * g.out_c);
    for (auto _ : state) {
        if constexpr (Parallel) kernels::conv2d_forward(g, x.data(), w.data(), y.data());
        else kernels::reference::conv2d_forward(g, x.data(), w.data(), y.data());
        benchmark::DoNotOptimize(y.data());
    }
}

template <bool Parallel>
void BM_conv_backward_data(benchmark::State& state) {
    const auto g = desk_conv();
    const auto dy = random_vector(g.batch * g.out_h * g.out_w * g.out_c, 5);
    const auto w = random_vector(g.kernel * g.kernel * g.in_c * g.out_c, 6);
    std::vector<float> dx(g.batch * g.in_h * g.in_w * g.in_c);
    for (auto _ : state) {
        if constexpr (Parallel) kernels::conv2d_backward_data(g, dy.data(), w.data(), dx.data());
        else kernels::reference::conv2d_backward_data(g, dy.data(), w.data(), dx.data());
        benchmark::DoNotOptimize(dx.data());
    }
}

template <bool Parallel>
void BM_conv_backward_filter(benchmark::State& state) {
    const auto g = desk_conv();
    const auto x = random_vector(g.batch * g.in_h * g.in_w * g.in_c, 7);
    const auto dy = random_vector(g.batch * g.out_h * g.out_w * g.out_c, 8);
    std::vector<float> dw(g.kernel * g.kernel * g.in_c * g.out_c);
    for (auto _ : state) {
        if constexpr (Parallel) kernels::conv2d_backward_filter(g, x.data(), dy.data(), dw.data());
        else kernels::reference::conv2d_backward_filter(g, x.data(), dy.data(), dw.data());
        benchmark::DoNotOptimize(dw.data());
    }
}

template <bool Parallel>
void BM_median(benchmark::State& state) {
    const auto k = static_cast<int>(state.range(0));
    const auto in = random_vector(256 * 256, 9);
    std::vector<float> out(in.size());
    for (auto _ : state) {
        if constexpr (Parallel) kernels::median_filter(in.data(), 256, 256, k, out.data());
        else kernels::reference::median_filter(in.data(), 256, 256, k, out.data());
        benchmark::DoNotOptimize(out.data());
    }
}

} // namespace

BENCHMARK(BM_gemm<true>)->Name("gemm/parallel");
BENCHMARK(BM_gemm<false>)->Name("gemm/reference");
BENCHMARK(BM_conv_forward<true>)->Name("conv_forward/parallel");
BENCHMARK(BM_conv_forward<false>)->Name("conv_forward/reference");
BENCHMARK(BM_conv_backward_data<true>)->Name("conv_backward_data/parallel");
BENCHMARK(BM_conv_backward_data<false>)->Name("conv_backward_data/reference");
BENCHMARK(BM_conv_backward_filter<true>)->Name("conv_backward_filter/parallel");
BENCHMARK(BM_conv_backward_filter<false>)->Name("conv_backward_filter/reference");
BENCHMARK(BM_median<true>)->Name("median/parallel")->Arg(5);
BENCHMARK(BM_median<false>)->Name("median/reference")->Arg(5);

BENCHMARK_MAIN();
