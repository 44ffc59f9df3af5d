#include <benchmark/benchmark.h>

#include "jachess/graph.hpp"
#include "jachess/ops.hpp"
#include "jachess/rng.hpp"

using namespace jachess;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
    std::vector<double> out(n);
    for (auto& v : out) v = rng.gaussian() * 0.2;
    return out;
}

void BM_forward_mlp(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Rng rng(1);
    const auto xv = random_vec(rng, static_cast<std::size_t>(n));
    const auto w1 = random_vec(rng, static_cast<std::size_t>(n) * n);
    const auto w2 = random_vec(rng, static_cast<std::size_t>(n) * n);
    for (auto _ : state) {
        Graph g;
        const Tensor x = g.leaf({1, n}, xv);
        const Tensor h = ops::gelu(ops::matmul(x, g.constant({n, n}, w1)));
        const Tensor out = ops::sum(ops::matmul(h, g.constant({n, n}, w2)));
        benchmark::DoNotOptimize(out.item());
    }
}
BENCHMARK(BM_forward_mlp)->Arg(16)->Arg(32)->Arg(64);

void BM_backward_mlp(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Rng rng(1);
    const auto xv = random_vec(rng, static_cast<std::size_t>(n));
    const auto w1 = random_vec(rng, static_cast<std::size_t>(n) * n);
    const auto w2 = random_vec(rng, static_cast<std::size_t>(n) * n);
    for (auto _ : state) {
        Graph g;
        const Tensor x = g.leaf({1, n}, xv);
        const Tensor a = g.leaf({n, n}, w1);
        const Tensor h = ops::gelu(ops::matmul(x, a));
        const Tensor out = ops::sum(ops::matmul(h, g.constant({n, n}, w2)));
        const auto grads = g.backward(out, {a});
        benchmark::DoNotOptimize(grads.at(a).at(0));
    }
}
BENCHMARK(BM_backward_mlp)->Arg(16)->Arg(32)->Arg(64);

void BM_second_order_norm(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Rng rng(1);
    const auto xv = random_vec(rng, static_cast<std::size_t>(n));
    const auto w1 = random_vec(rng, static_cast<std::size_t>(n) * n);
    for (auto _ : state) {
        Graph g;
        g.enable_gradient_recording();
        const Tensor x = g.leaf({1, n}, xv);
        const Tensor h = ops::tanh(ops::matmul(x, g.constant({n, n}, w1)));
        const Tensor s = ops::sum(h);
        const Tensor grad = g.backward(s, {x}, /*record=*/true).at(x);
        const Tensor penalty = ops::sum_squares(grad);
        const auto outer = g.backward(penalty, {x});
        benchmark::DoNotOptimize(outer.at(x).at(0));
    }
}
BENCHMARK(BM_second_order_norm)->Arg(16)->Arg(32);

}  // namespace

BENCHMARK_MAIN();
