#include <benchmark/benchmark.h>

#include "tsimp/classifiers.hpp"
#include "tsimp/evaluation.hpp"
#include "tsimp/masking.hpp"

using namespace tsimp;

namespace {

TimeSeriesBatch make_batch_for_bench(int n, int t, int d, uint64_t seed) {
    Rng rng(seed);
    TimeSeriesBatch b;
    b.n = n;
    b.t = t;
    b.d = d;
    b.values = Array({n, t, d});
    b.mask = Array({n, t, d});
    b.eval_mask = Array({n, t, d});
    b.ground_truth = Array({n, t, d});
    b.labels = Array({n});
    for (int i = 0; i < b.values.size(); ++i) {
        bool obs = rng.uniform() >= 0.4;
        b.mask[i] = obs ? 1.0f : 0.0f;
        b.values[i] = obs ? static_cast<float>(rng.normal()) : 0.0f;
        b.ground_truth[i] = b.values[i];
    }
    b.delta = compute_delta(b.mask);
    for (int i = 0; i < n; ++i) b.labels[i] = (i % 2) ? 1.0f : 0.0f;
    return b;
}

Imputer bench_imputer(int d, int hidden) {
    ImputerConfig c;
    c.d_features = d;
    c.hidden = hidden;
    c.embed_dim = 16;
    c.seed = 1;
    return Imputer::init(c);
}

void BM_ImputerForward(benchmark::State& state) {
    int n = static_cast<int>(state.range(0));
    Imputer imp = bench_imputer(8, 32);
    TimeSeriesBatch b = make_batch_for_bench(n, 48, 8, 3);
    for (auto _ : state) {
        ImputerOutput out = imp.forward(b);
        benchmark::DoNotOptimize(out.imputed.data());
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_ImputerForward)->Arg(16)->Arg(64);

void BM_ImputerBackward(benchmark::State& state) {
    int n = static_cast<int>(state.range(0));
    Imputer imp = bench_imputer(8, 32);
    TimeSeriesBatch b = make_batch_for_bench(n, 48, 8, 3);
    for (auto _ : state) {
        Tape tape;
        auto pvars = imp.leaf_params(tape, true);
        ImputerGraph g = imp.build_graph(tape, b, pvars);
        tape.backward(g.loss_total);
        benchmark::DoNotOptimize(tape.grad(pvars.begin()->second).data());
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_ImputerBackward)->Arg(16)->Arg(64);

void BM_Auroc(benchmark::State& state) {
    int n = static_cast<int>(state.range(0));
    Rng rng(7);
    Array scores({n}), labels({n});
    for (int i = 0; i < n; ++i) {
        scores[i] = static_cast<float>(rng.normal());
        labels[i] = rng.uniform() < 0.5 ? 0.0f : 1.0f;
    }
    labels[0] = 0.0f;
    labels[n - 1] = 1.0f;
    for (auto _ : state) {
        double a = auroc(scores, labels);
        benchmark::DoNotOptimize(a);
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Auroc)->Arg(1000)->Arg(100000);

void BM_Masking(benchmark::State& state) {
    TimeSeriesBatch b = make_batch_for_bench(static_cast<int>(state.range(0)), 48, 8, 5);
    MaskPlan plan;
    plan.seed = 9;
    for (auto _ : state) {
        TimeSeriesBatch m = apply_nonuniform_mask(b, plan);
        benchmark::DoNotOptimize(m.eval_mask.data());
    }
}
BENCHMARK(BM_Masking)->Arg(64)->Arg(512);

}  // namespace

BENCHMARK_MAIN();
