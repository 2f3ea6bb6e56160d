#include <benchmark/benchmark.h>

#include <filesystem>

#include "mixtune/blo.hpp"
#include "mixtune/checkpoint.hpp"
#include "mixtune/model.hpp"
#include "mixtune/ops.hpp"
#include "mixtune/rng.hpp"

using namespace mixtune;

namespace {

TensorPtr random_matrix(std::int64_t n, std::int64_t m, std::uint64_t seed) {
    auto t = Tensor::create({n, m});
    Rng rng(seed);
    for (double& v : t->data) {
        v = rng.normal();
    }
    return t;
}

Dataset bench_dataset(std::int64_t n, std::int64_t dim) {
    Dataset ds;
    ds.task = TaskKind::classification;
    ds.classes = 2;
    ds.features = Tensor::create({n, dim});
    Rng rng(17);
    for (double& v : ds.features->data) {
        v = rng.normal();
    }
    ds.labels.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        ds.labels[static_cast<std::size_t>(i)] = ds.features->at(i, 0) > 0 ? 1 : 0;
    }
    return ds;
}

struct SearchFixture {
    Dataset ds = bench_dataset(240, 20);
    NetSpec spec;
    Network net;
    SplitPair split;
    blo::Batch train_batch;
    blo::Batch val_batch;

    SearchFixture() {
        spec.input_dim = 20;
        spec.hidden = {32, 32};
        Network plain = build_plain_network(spec, 3);
        net = build_mixup_network(spec, export_effective_weights(plain), 1, 1.0, 0.005, 4, 5);
        split = split_dataset(ds, 0.8, 7);
        train_batch = blo::gather_batch(
            ds, std::vector<std::int64_t>(split.train_indices.begin(),
                                          split.train_indices.begin() + 16));
        val_batch = blo::gather_batch(
            ds,
            std::vector<std::int64_t>(split.val_indices.begin(), split.val_indices.begin() + 16));
    }
};

void BM_matmul(benchmark::State& state) {
    const std::int64_t n = state.range(0);
    auto a = random_matrix(n, n, 1);
    auto b = random_matrix(n, n, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(matmul(a, b)->data.data());
    }
    state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_forward_backward(benchmark::State& state) {
    SearchFixture fx;
    const auto params = fx.net.stage1_params();
    for (auto _ : state) {
        for (const TensorPtr& p : params) {
            p->zero_grad();
        }
        Graph graph;
        TensorPtr loss = blo::task_loss(fx.net, fx.train_batch);
        graph.backward(loss);
        benchmark::DoNotOptimize(loss->data[0]);
    }
}
BENCHMARK(BM_forward_backward);

void BM_search_iteration(benchmark::State& state) {
    SearchFixture fx;
    AdamWConfig adam;
    AdamW task_opt(fx.net.stage1_params(), adam);
    AdamW alpha_opt(fx.net.alpha_params(), adam);
    for (auto _ : state) {
        const blo::Stage1Result s1 = blo::stage1_step(fx.net, fx.train_batch, task_opt, 1e-3);
        const blo::Stage2Result s2 =
            blo::stage2_step(fx.net, fx.val_batch, fx.train_batch, s1.w_pre, alpha_opt, 1e-3, 1e-3);
        benchmark::DoNotOptimize(s2.val_loss);
    }
}
BENCHMARK(BM_search_iteration);

void BM_checkpoint_roundtrip(benchmark::State& state) {
    NetSpec spec;
    spec.input_dim = 20;
    spec.hidden = {32, 32};
    Network net = build_plain_network(spec, 11);
    const NamedTensors tensors = export_effective_weights(net);
    const auto path = std::filesystem::temp_directory_path() / "mixtune_bench_ckpt.bin";
    for (auto _ : state) {
        save_checkpoint(tensors, path);
        benchmark::DoNotOptimize(load_checkpoint(path).size());
    }
    std::filesystem::remove(path);
}
BENCHMARK(BM_checkpoint_roundtrip);

}  // namespace

BENCHMARK_MAIN();
