// SPDX-License-Identifier: Apache-2.0
//
// OpenMP kernels against their serial reference, and the batched loss
// gradient with and without trajectory-level parallelism.

#include <benchmark/benchmark.h>

#include <vector>

#include "lgrpo/advantage.hpp"
#include "lgrpo/kernels.hpp"
#include "lgrpo/objective.hpp"
#include "lgrpo/task_env.hpp"
#include "lgrpo/trainer.hpp"

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
    lgrpo::Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform01() - 0.5;
    return v;
}

template <bool Parallel>
void bm_matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = filled(n * n, 1);
    const auto b = filled(n * n, 2);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        if constexpr (Parallel) {
            lgrpo::kernels::matmul(a, b, c, n, n, n);
        } else {
            lgrpo::kernels::reference::matmul(a, b, c, n, n, n);
        }
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <bool Parallel>
void bm_softmax(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0));
    const std::size_t cols = 32;
    const auto x = filled(rows * cols, 3);
    std::vector<double> y(rows * cols);
    for (auto _ : state) {
        if constexpr (Parallel) {
            lgrpo::kernels::softmax_rows(x, y, rows, cols);
        } else {
            lgrpo::kernels::reference::softmax_rows(x, y, rows, cols);
        }
        benchmark::DoNotOptimize(y.data());
    }
}

template <bool Parallel>
void bm_batch_gradient(benchmark::State& state) {
    lgrpo::RlConfig cfg;
    cfg.batch_size = 4;
    cfg.group_size = 8;
    cfg.limits.l_max = 16;
    cfg.seed = 11;
    const lgrpo::PolicyParams params = lgrpo::PolicyParams::init(lgrpo::ModelConfig{}, 5);
    const auto tasks = lgrpo::step_tasks(cfg, 0);
    auto batch = lgrpo::collect_batch(params, &params, tasks, 0, cfg, lgrpo::preset(lgrpo::Algorithm::latent_grpo));
    // Give every trajectory a learning signal so none is skipped.
    for (auto& g : batch) {
        for (auto& row : g.advantages.masked) {
            for (double& a : row) a = 1.0;
        }
    }
    lgrpo::LossOptions opts;
    opts.parallel = Parallel;
    for (auto _ : state) {
        auto res = lgrpo::latent_grpo_loss(batch, params, cfg.loss, opts);
        benchmark::DoNotOptimize(res.grads.data());
    }
}

}  // namespace

BENCHMARK(bm_matmul<false>)->Arg(32)->Arg(64)->Arg(128)->Name("matmul/reference");
BENCHMARK(bm_matmul<true>)->Arg(32)->Arg(64)->Arg(128)->Name("matmul/openmp");
BENCHMARK(bm_softmax<false>)->Arg(64)->Arg(4096)->Name("softmax_rows/reference");
BENCHMARK(bm_softmax<true>)->Arg(64)->Arg(4096)->Name("softmax_rows/openmp");
BENCHMARK(bm_batch_gradient<false>)->Name("batch_gradient/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(bm_batch_gradient<true>)->Name("batch_gradient/openmp")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
