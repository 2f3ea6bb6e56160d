// Acceptance suite: runs every release criterion end to end and prints one
// pass/fail line per criterion. Exit code is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mixtune/blo.hpp"
#include "mixtune/errors.hpp"
#include "mixtune/metrics.hpp"
#include "mixtune/model.hpp"
#include "mixtune/ops.hpp"
#include "mixtune/pipeline.hpp"
#include "mixtune/rng.hpp"
#include "support/bilevel_oracle.hpp"
#include "support/oracles.hpp"

using namespace mixtune;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. Gradient suite: >=20 random mixup networks (<=200 params), every
//    trainable leaf checks out against central differences at h=1e-5.
// ---------------------------------------------------------------------------

struct RandomNet {
    Network net;
    blo::Batch batch;
    long param_count = 0;
};

RandomNet make_random_net(std::uint64_t seed) {
    Rng rng(seed);
    RandomNet out;
    const std::int64_t input = 2 + static_cast<std::int64_t>(rng.below(4));
    const std::int64_t batch_n = 4 + static_cast<std::int64_t>(rng.below(4));
    const int depth = 1 + static_cast<int>(rng.below(2));
    const bool regression = rng.below(4) == 0;
    const bool use_relu = rng.below(2) == 0;
    const std::int64_t rank = 1 + static_cast<std::int64_t>(rng.below(2));

    NetSpec spec;
    spec.input_dim = input;
    spec.hidden.clear();
    for (int d = 0; d < depth; ++d) {
        spec.hidden.push_back(3 + static_cast<std::int64_t>(rng.below(4)));
    }
    spec.act = use_relu ? ActKind::relu : ActKind::tanh;
    spec.task = regression ? TaskKind::regression : TaskKind::classification;
    spec.classes = 2;

    Network plain = build_plain_network(spec, derive_seed(seed, "pre"));
    const NamedTensors pretrained = export_effective_weights(plain);
    out.net = build_mixup_network(spec, pretrained, rank, 0.7, 0.2, derive_seed(seed, "alpha"),
                                  derive_seed(seed, "head"));
    // Spread the task weights away from the pretrained copy.
    for (MixupLinear* layer : out.net.mixup_layers()) {
        for (double& v : layer->task_weight->data) {
            v += rng.uniform(-0.5, 0.5);
        }
        for (double& v : layer->bias->data) {
            v = rng.uniform(-0.5, 0.5);
        }
    }

    for (const TensorPtr& p : out.net.stage1_params()) {
        out.param_count += p->size();
    }
    for (const TensorPtr& p : out.net.alpha_params()) {
        out.param_count += p->size();
    }

    // Batch in [-2, 2]; for relu nets, redraw until no pre-activation sits
    // within 1e-3 of the kink (central differences are invalid there).
    for (int attempt = 0; attempt < 200; ++attempt) {
        out.batch = blo::Batch{};
        out.batch.features = Tensor::create({batch_n, input});
        for (double& v : out.batch.features->data) {
            v = rng.uniform(-2.0, 2.0);
        }
        if (regression) {
            out.batch.targets.clear();
            for (std::int64_t i = 0; i < batch_n; ++i) {
                out.batch.targets.push_back(rng.uniform(-1.0, 1.0));
            }
        } else {
            out.batch.labels.clear();
            for (std::int64_t i = 0; i < batch_n; ++i) {
                out.batch.labels.push_back(static_cast<int>(rng.below(2)));
            }
        }
        if (!use_relu) {
            return out;
        }
        NoGradScope no_grad;
        TensorPtr x = out.batch.features;
        double min_abs = 1e9;
        for (const Layer& l : out.net.layers) {
            if (const auto* m = std::get_if<MixupLinear>(&l)) {
                x = add_bias(matmul(x, mix_weights(*m)), m->bias);
            } else if (const auto* p = std::get_if<PlainLinear>(&l)) {
                x = add_bias(matmul(x, p->weight), p->bias);
            } else {
                for (const double v : x->data) {
                    min_abs = std::min(min_abs, std::abs(v));
                }
                x = activation(x, std::get<ActKind>(l));
            }
        }
        if (min_abs > 1e-3) {
            return out;
        }
    }
    throw std::runtime_error("could not draw a kink-free relu batch");
}

Outcome criterion1_gradient_suite() {
    const auto start = std::chrono::steady_clock::now();
    long total_coords = 0;
    long nets = 0;
    for (std::uint64_t seed = 0; seed < 24; ++seed) {
        RandomNet rn = make_random_net(derive_seed(9000, "net", seed));
        if (rn.param_count > 200) {
            continue;
        }
        ++nets;
        std::vector<TensorPtr> leaves = rn.net.stage1_params();
        for (const TensorPtr& p : rn.net.alpha_params()) {
            leaves.push_back(p);
        }

        const auto loss_value = [&]() {
            NoGradScope no_grad;
            return blo::task_loss(rn.net, rn.batch)->data[0];
        };
        for (const TensorPtr& p : leaves) {
            p->zero_grad();
        }
        {
            Graph graph;
            TensorPtr loss = blo::task_loss(rn.net, rn.batch);
            graph.backward(loss);
        }
        for (const TensorPtr& p : leaves) {
            const std::vector<double> fd = testsupport::fd_gradient(loss_value, p, 1e-5);
            const long bad = testsupport::first_grad_mismatch(p->grad, fd, 1e-4, 1e-6, 1e-3);
            if (bad >= 0) {
                return {false, "net seed " + std::to_string(seed) + ", tensor " + p->shape_str() +
                                   " coord " + std::to_string(bad) + ": analytic " +
                                   fmt(p->grad[static_cast<std::size_t>(bad)]) + " vs fd " +
                                   fmt(fd[static_cast<std::size_t>(bad)])};
            }
            total_coords += p->size();
        }
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (nets < 20) {
        return {false, "only " + std::to_string(nets) + " networks under the parameter budget"};
    }
    if (secs >= 60.0) {
        return {false, "took " + fmt(secs) + "s (budget 60s)"};
    }
    return {true, std::to_string(nets) + " networks, " + std::to_string(total_coords) +
                      " coordinates, " + fmt(secs) + "s"};
}

// ---------------------------------------------------------------------------
// 2. Hypergradient oracle: quadratic instances match the exact unrolled
//    gradient at eps=1e-3; a cross-entropy instance shows the O(eps^2) law.
// ---------------------------------------------------------------------------

Network chain_net_mse(const std::vector<double>& w, const std::vector<double>& w0, double a,
                      double b) {
    const std::int64_t in = static_cast<std::int64_t>(w.size());
    Network net;
    net.task = TaskKind::regression;
    MixupLinear m;
    m.task_weight = Tensor::from_data({in, 1}, w, true);
    m.pretrained_weight = Tensor::from_data({in, 1}, w0);
    m.bias = Tensor::zeros({1}, true);
    m.rank = 1;
    m.alpha_left = Tensor::from_data({in, 1}, std::vector<double>(w.size(), a), true);
    m.alpha_right = Tensor::from_data({1, 1}, {b}, true);
    net.layers.emplace_back(std::move(m));
    PlainLinear head;
    head.weight = Tensor::from_data({1, 1}, {1.0});
    head.bias = Tensor::zeros({1});
    net.layers.emplace_back(std::move(head));
    return net;
}

Network chain_net_ce(const testsupport::CeBilevelOracle& o) {
    Network net;
    net.task = TaskKind::classification;
    net.classes = 2;
    MixupLinear m;
    m.task_weight = Tensor::from_data({1, 2}, o.w, true);
    m.pretrained_weight = Tensor::from_data({1, 2}, o.w0);
    m.bias = Tensor::zeros({2}, true);
    m.rank = 1;
    m.alpha_left = Tensor::from_data({1, 1}, {o.a}, true);
    m.alpha_right = Tensor::from_data({1, 2}, o.bvec, true);
    net.layers.emplace_back(std::move(m));
    PlainLinear head;
    head.weight = Tensor::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});
    head.bias = Tensor::zeros({2});
    net.layers.emplace_back(std::move(head));
    return net;
}

std::vector<double> engine_hypergradient(Network& net, const blo::Batch& val,
                                         const blo::Batch& tr,
                                         const std::vector<double>& w_prime, double eta,
                                         double eps) {
    const blo::WeightSnapshot w_pre = blo::snapshot_task_weights(net);
    net.mixup_task_weights()[0]->data = w_prime;
    const blo::AlphaHypergrad hg = blo::alpha_hypergradient(net, val, tr, w_pre, eta, eps);
    blo::restore_task_weights(net, w_pre);
    if (hg.degenerate) {
        throw std::runtime_error("unexpected degenerate epsilon");
    }
    std::vector<double> flat;
    for (const auto& g : hg.grads) {
        for (const double v : g) {
            flat.push_back(v);
        }
    }
    return flat;
}

Outcome criterion2_hypergradient_oracle() {
    const auto start = std::chrono::steady_clock::now();
    struct Inst {
        std::vector<double> w, w0, x_tr, x_val;
        double a, b, y_tr, y_val;
    };
    const std::vector<Inst> instances = {
        {{1.2}, {-0.7}, {1.4}, {0.9}, 0.65, 0.8, 0.3, -0.6},
        {{0.8, -1.1}, {0.3, 0.9}, {1.0, -0.5}, {0.4, 1.3}, 0.55, 0.75, 0.7, 0.2},
    };
    const double eta = 0.05;
    double worst_rel = 0.0;
    for (const Inst& inst : instances) {
        testsupport::MseBilevelOracle oracle{inst.w,
                                             inst.w0,
                                             std::vector<double>(inst.w.size(), inst.a),
                                             inst.b,
                                             inst.x_tr,
                                             inst.x_val,
                                             inst.y_tr,
                                             inst.y_val,
                                             eta};
        Network net = chain_net_mse(inst.w, inst.w0, inst.a, inst.b);
        blo::Batch tr, val;
        tr.features =
            Tensor::from_data({1, static_cast<std::int64_t>(inst.x_tr.size())}, inst.x_tr);
        tr.targets = {inst.y_tr};
        val.features =
            Tensor::from_data({1, static_cast<std::int64_t>(inst.x_val.size())}, inst.x_val);
        val.targets = {inst.y_val};

        const std::vector<double> engine =
            engine_hypergradient(net, val, tr, oracle.inner_step(), eta, 1e-3);
        const std::vector<double> exact = oracle.exact_hypergradient();
        for (std::size_t i = 0; i < exact.size(); ++i) {
            const double rel = std::abs(engine[i] - exact[i]) / (std::abs(exact[i]) + 1e-12);
            worst_rel = std::max(worst_rel, rel);
        }
    }
    if (worst_rel > 1e-3) {
        return {false, "quadratic-instance rel err " + fmt(worst_rel) + " above 1e-3"};
    }

    testsupport::CeBilevelOracle ce;
    ce.w = {0.9, -0.6};
    ce.w0 = {0.2, 0.5};
    ce.bvec = {0.8, 0.65};
    ce.a = 0.7;
    ce.x_tr = 1.3;
    ce.x_val = -0.8;
    ce.y_tr = 1;
    ce.y_val = 0;
    ce.eta = 0.07;

    Network net = chain_net_ce(ce);
    blo::Batch tr, val;
    tr.features = Tensor::from_data({1, 1}, {ce.x_tr});
    tr.labels = {ce.y_tr};
    val.features = Tensor::from_data({1, 1}, {ce.x_val});
    val.labels = {ce.y_val};

    const std::vector<double> exact = ce.exact_hypergradient();
    const std::vector<double> direct = ce.direct_term();
    std::vector<double> errors;
    for (const double eps : {4e-3, 2e-3, 1e-3}) {
        const std::vector<double> engine =
            engine_hypergradient(net, val, tr, ce.inner_step(), ce.eta, eps);
        double err = 0.0;
        for (std::size_t i = 0; i < exact.size(); ++i) {
            // Isolate the mixed-derivative term before comparing.
            const double fd_h = (direct[i] - engine[i]) / ce.eta;
            const double exact_h = (direct[i] - exact[i]) / ce.eta;
            err = std::max(err, std::abs(fd_h - exact_h));
        }
        errors.push_back(err);
    }
    const double r1 = errors[0] / errors[1];
    const double r2 = errors[1] / errors[2];
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!(r1 > 2.5 && r1 < 6.0 && r2 > 2.5 && r2 < 6.0)) {
        return {false, "error ratios " + fmt(r1) + ", " + fmt(r2) + " not ~4x"};
    }
    if (secs >= 60.0) {
        return {false, "took " + fmt(secs) + "s (budget 60s)"};
    }
    return {true, "quadratic rel err " + fmt(worst_rel) + "; eps-halving ratios " + fmt(r1) +
                      ", " + fmt(r2)};
}

// ---------------------------------------------------------------------------
// 3. Reduction equivalence over 200 steps.
// ---------------------------------------------------------------------------

Dataset gaussian_ds(std::int64_t n, std::int64_t dim, std::uint64_t seed) {
    Dataset ds;
    ds.task = TaskKind::classification;
    ds.classes = 2;
    ds.features = Tensor::create({n, dim});
    Rng rng(seed);
    for (double& v : ds.features->data) {
        v = rng.normal();
    }
    ds.labels.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        ds.labels[static_cast<std::size_t>(i)] = ds.features->at(i, 0) > 0.0 ? 1 : 0;
    }
    return ds;
}

Outcome criterion3_reduction_equivalence() {
    NetSpec spec;
    spec.input_dim = 8;
    spec.hidden = {10};
    spec.act = ActKind::tanh;
    spec.task = TaskKind::classification;
    spec.classes = 2;

    Network plain = build_plain_network(spec, 404);
    const NamedTensors pretrained = export_effective_weights(plain);
    Dataset ds = gaussian_ds(120, 8, 405);
    const SplitPair split = split_dataset(ds, 0.8, 11);

    blo::SearchConfig cfg;
    cfg.total_steps = 200;
    cfg.task_lr = 2e-3;
    cfg.alpha_lr = 0.0;
    cfg.batch_size = 16;
    cfg.seed = 777;

    Network search_net =
        build_mixup_network(spec, pretrained, 1, 1.0, 0.0, 1, derive_seed(12, "head"));
    Network vanilla_net = build_warm_plain_network(spec, pretrained, derive_seed(12, "head"));

    AdamWConfig task_adam = cfg.adam;
    task_adam.weight_decay = cfg.task_weight_decay;
    AdamWConfig alpha_adam = cfg.adam;
    alpha_adam.weight_decay = cfg.alpha_weight_decay;
    AdamW search_opt(search_net.stage1_params(), task_adam);
    AdamW alpha_opt(search_net.alpha_params(), alpha_adam);
    AdamW vanilla_opt(vanilla_net.stage1_params(), task_adam);

    const LrSchedule lr_w =
        LrSchedule::from_ratio(cfg.task_lr, cfg.task_warmup_ratio, cfg.total_steps);
    const LrSchedule lr_a =
        LrSchedule::from_ratio(cfg.alpha_lr, cfg.alpha_warmup_ratio, cfg.total_steps);
    blo::BatchCycler tr_search(split.train_indices, cfg.batch_size,
                               derive_seed(cfg.seed, "batch-train"));
    blo::BatchCycler tr_vanilla(split.train_indices, cfg.batch_size,
                                derive_seed(cfg.seed, "batch-train"));
    blo::BatchCycler va(split.val_indices, cfg.batch_size, derive_seed(cfg.seed, "batch-val"));

    double max_diff = 0.0;
    for (long t = 0; t < cfg.total_steps; ++t) {
        const blo::Batch bt = blo::gather_batch(ds, tr_search.next());
        const blo::Batch bv = blo::gather_batch(ds, va.next());
        const blo::Stage1Result s1 = blo::stage1_step(search_net, bt, search_opt, lr_w.at(t));
        blo::stage2_step(search_net, bv, bt, s1.w_pre, alpha_opt, lr_a.at(t), lr_w.at(t));

        const blo::Batch bt2 = blo::gather_batch(ds, tr_vanilla.next());
        blo::stage1_step(vanilla_net, bt2, vanilla_opt, lr_w.at(t));

        const auto a = search_net.stage1_params();
        const auto b = vanilla_net.stage1_params();
        for (std::size_t p = 0; p < a.size(); ++p) {
            for (std::size_t i = 0; i < a[p]->data.size(); ++i) {
                max_diff = std::max(max_diff, std::abs(a[p]->data[i] - b[p]->data[i]));
            }
        }
        if (max_diff > 1e-12) {
            return {false, "trajectories diverged at step " + std::to_string(t) +
                               " (max diff " + fmt(max_diff) + ")"};
        }
    }
    return {true, "200 steps, max per-element divergence " + fmt(max_diff)};
}

// ---------------------------------------------------------------------------
// 4. Projection and immutability over a 2000-step search run.
// ---------------------------------------------------------------------------

Outcome criterion4_projection_immutability() {
    NetSpec spec;
    spec.input_dim = 6;
    spec.hidden = {8};
    spec.act = ActKind::tanh;
    spec.task = TaskKind::classification;
    spec.classes = 2;

    Network plain = build_plain_network(spec, 500);
    const NamedTensors pretrained = export_effective_weights(plain);
    Dataset ds = gaussian_ds(200, 6, 501);
    const SplitPair split = split_dataset(ds, 0.8, 7);

    Network net = build_mixup_network(spec, pretrained, 1, 1.0, 0.005, 3, 4);
    std::vector<std::uint64_t> w0_checksums;
    for (const TensorPtr& w0 : net.frozen_params()) {
        w0_checksums.push_back(testsupport::bits_checksum(w0->data));
    }

    blo::SearchConfig cfg;
    cfg.total_steps = 2000;
    cfg.task_lr = 2e-3;
    cfg.alpha_lr = 5e-2;  // hot enough that the projection genuinely engages
    cfg.batch_size = 16;
    cfg.seed = 99;

    AdamWConfig task_adam = cfg.adam;
    task_adam.weight_decay = cfg.task_weight_decay;
    AdamWConfig alpha_adam = cfg.adam;
    alpha_adam.weight_decay = cfg.alpha_weight_decay;
    AdamW task_opt(net.stage1_params(), task_adam);
    AdamW alpha_opt(net.alpha_params(), alpha_adam);
    const LrSchedule lr_w =
        LrSchedule::from_ratio(cfg.task_lr, cfg.task_warmup_ratio, cfg.total_steps);
    const LrSchedule lr_a =
        LrSchedule::from_ratio(cfg.alpha_lr, cfg.alpha_warmup_ratio, cfg.total_steps);
    blo::BatchCycler tr(split.train_indices, cfg.batch_size, derive_seed(cfg.seed, "batch-train"));
    blo::BatchCycler va(split.val_indices, cfg.batch_size, derive_seed(cfg.seed, "batch-val"));

    long clipped_total = 0;
    for (long t = 0; t < cfg.total_steps; ++t) {
        const blo::Batch bt = blo::gather_batch(ds, tr.next());
        const blo::Batch bv = blo::gather_batch(ds, va.next());
        const blo::Stage1Result s1 = blo::stage1_step(net, bt, task_opt, lr_w.at(t));
        const blo::Stage2Result s2 =
            blo::stage2_step(net, bv, bt, s1.w_pre, alpha_opt, lr_a.at(t), lr_w.at(t));
        clipped_total += s2.clipped_entries;
        for (const TensorPtr& p : net.alpha_params()) {
            for (const double v : p->data) {
                if (v < 0.0 || v > 1.0) {
                    return {false, "alpha entry " + fmt(v) + " escaped [0,1] at step " +
                                       std::to_string(t)};
                }
            }
        }
    }
    const auto frozen = net.frozen_params();
    for (std::size_t i = 0; i < frozen.size(); ++i) {
        if (testsupport::bits_checksum(frozen[i]->data) != w0_checksums[i]) {
            return {false, "pretrained tensor " + std::to_string(i) + " changed"};
        }
    }
    return {true, "2000 steps, " + std::to_string(clipped_total) +
                      " projected entries, pretrained checksums unchanged"};
}

// ---------------------------------------------------------------------------
// 5. Mixup identities and composition bounds.
// ---------------------------------------------------------------------------

Outcome criterion5_mixup_identities() {
    Rng rng(600);
    for (int trial = 0; trial < 20; ++trial) {
        const std::int64_t in = 2 + static_cast<std::int64_t>(rng.below(6));
        const std::int64_t out_dim = 2 + static_cast<std::int64_t>(rng.below(6));
        MixupLinear layer;
        layer.task_weight = Tensor::create({in, out_dim}, true);
        layer.pretrained_weight = Tensor::create({in, out_dim});
        layer.bias = Tensor::zeros({out_dim}, true);
        layer.rank = 1;
        for (double& v : layer.task_weight->data) {
            v = rng.uniform(-2.0, 2.0);
        }
        for (double& v : layer.pretrained_weight->data) {
            v = rng.uniform(-2.0, 2.0);
        }
        layer.alpha_left = Tensor::ones({in, 1}, true);
        layer.alpha_right = Tensor::ones({1, out_dim}, true);
        const TensorPtr at_one = mix_weights(layer);
        for (std::size_t i = 0; i < at_one->data.size(); ++i) {
            if (at_one->data[i] != layer.task_weight->data[i]) {
                return {false, "alpha=1 identity violated"};
            }
        }
        layer.alpha_left = Tensor::zeros({in, 1}, true);
        layer.alpha_right = Tensor::zeros({1, out_dim}, true);
        const TensorPtr at_zero = mix_weights(layer);
        for (std::size_t i = 0; i < at_zero->data.size(); ++i) {
            if (at_zero->data[i] != layer.pretrained_weight->data[i]) {
                return {false, "alpha=0 identity violated"};
            }
        }
    }

    long checked = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        const std::int64_t r = 1 + static_cast<std::int64_t>(rng.below(3));
        auto left = Tensor::create({3, r});
        auto right = Tensor::create({r, 4});
        for (double& v : left->data) {
            v = rng.uniform();
        }
        for (double& v : right->data) {
            v = rng.uniform();
        }
        const TensorPtr cw = compose_alpha(left, right, r);
        const TensorPtr cw0 = compose_alpha(sub(Tensor::ones(left->shape), left),
                                            sub(Tensor::ones(right->shape), right), r);
        for (const double v : cw->data) {
            if (v < 0.0 || v > 1.0) {
                return {false, "composed coefficient " + fmt(v) + " out of [0,1]"};
            }
        }
        for (const double v : cw0->data) {
            if (v < 0.0 || v > 1.0) {
                return {false, "complement coefficient " + fmt(v) + " out of [0,1]"};
            }
        }
        checked += cw->size();
    }
    return {true, "identities exact; " + std::to_string(checked) +
                      " composed entries within bounds over 10^4 factor pairs"};
}

// ---------------------------------------------------------------------------
// 6. Metric oracles.
// ---------------------------------------------------------------------------

Outcome criterion6_metric_oracles() {
    const auto close = [](double x, double y) { return std::abs(x - y) <= 1e-12; };
    const std::vector<int> perfect = {1, 0, 1, 1, 0};
    if (metric(perfect, perfect, MetricKind::accuracy) != 1.0 ||
        metric(perfect, perfect, MetricKind::f1) != 1.0 ||
        metric(perfect, perfect, MetricKind::mcc) != 1.0) {
        return {false, "perfect-prediction case"};
    }
    const std::vector<int> all_pos = {1, 1, 1, 1};
    const std::vector<int> balanced = {1, 0, 1, 0};
    if (metric(all_pos, balanced, MetricKind::mcc) != 0.0) {
        return {false, "zero-denominator mcc convention"};
    }
    const std::vector<int> target = {1, 1, 0, 0, 1};
    const std::vector<int> pred = {1, 1, 0, 1, 0};
    if (!close(metric(pred, target, MetricKind::mcc), 1.0 / 6.0)) {
        return {false, "mcc 1/6 case: got " + fmt(metric(pred, target, MetricKind::mcc))};
    }
    if (!close(metric(pred, target, MetricKind::f1), 2.0 / 3.0)) {
        return {false, "f1 2/3 case"};
    }
    if (!close(metric(pred, target, MetricKind::accuracy), 3.0 / 5.0)) {
        return {false, "accuracy 3/5 case"};
    }
    const std::vector<double> up = {1, 2, 3, 4};
    const std::vector<double> down = {9, 7, 5, 1};
    if (!close(metric(up, down, MetricKind::spearman), -1.0)) {
        return {false, "reversed-rank spearman"};
    }
    const std::vector<double> lin = {5, 7, 9, 11};
    if (!close(metric(up, lin, MetricKind::pearson), 1.0)) {
        return {false, "linear pearson"};
    }
    const std::vector<double> tie_x = {1.0, 2.0, 2.0, 3.0};
    const std::vector<double> tie_y = {10.0, 20.0, 20.0, 30.0};
    if (!close(metric(tie_x, tie_y, MetricKind::spearman), 1.0)) {
        return {false, "tied-rank spearman"};
    }
    return {true, "accuracy/f1/mcc exact, correlations within 1e-12"};
}

// ---------------------------------------------------------------------------
// 7-9. Desk-scale directional study, ablations and the timing ratio.
// ---------------------------------------------------------------------------

struct StudyResults {
    pipeline::ExperimentReport ours300, vanilla300, joint300, random300;
    pipeline::ExperimentReport ours100, vanilla100;
    double ratio = 0.0;
    double total_seconds = 0.0;
};

std::string study_config(const fs::path& root, long target_n, const std::string& method) {
    std::string text =
        "task.source = synthetic\n"
        "synthetic.input_dim = 20\n"
        "synthetic.source_n = 20000\n"
        "synthetic.target_n = " + std::to_string(target_n) + "\n"
        "synthetic.test_n = 2000\n"
        "synthetic.teacher_hidden = 32\n"
        "synthetic.shift_angle = 0.3\n"
        "synthetic.label_noise = 0.1\n"
        "synthetic.seed = 7\n"
        "model.hidden = 32,32\n"
        "pretrain.epochs = 8\n"
        "pretrain.lr = 5e-3\n"
        "pretrain.batch = 64\n"
        "search.task_lr = 3e-3\n"
        "search.alpha_lr = 3e-3\n"
        "search.alpha_warmup_ratio = 0\n"
        "search.epochs = 2\n"
        "search.batch = 16\n"
        "search.k = 2\n"
        "finetune.epochs = 1,3\n"
        "finetune.lrs = 3e-3,1e-3\n"
        "finetune.batch = 16\n"
        "seeds = 0,1,2,3,4,5,6,7,8,9\n"
        "checkpoint = " + (root / "pretrained.bin").string() + "\n"
        "method = " + method + "\n"
        "out = " + (root / (method + "_" + std::to_string(target_n))).string() + "\n";
    if (method == "random_alpha") {
        text += "random_alpha.sigma = 0.45\n";
    }
    return text;
}

pipeline::RunConfig study_run_config(const fs::path& root, long n, const std::string& method) {
    KvConfig kv = KvConfig::parse_string(study_config(root, n, method));
    return pipeline::run_config_from_kv(kv);
}

double train_seconds(const pipeline::ExperimentReport& r) {
    double total = 0.0;
    for (const pipeline::PhaseTiming& t : r.timings) {
        if (t.phase == "search" || t.phase == "finetune") {
            total += t.seconds;
        }
    }
    return total;
}

StudyResults run_study(const fs::path& root) {
    const auto start = std::chrono::steady_clock::now();
    StudyResults res;
    pipeline::cmd_pretrain(study_run_config(root, 300, "ours"));
    res.ours300 = pipeline::cmd_run(study_run_config(root, 300, "ours"));
    res.vanilla300 = pipeline::cmd_baseline(study_run_config(root, 300, "vanilla"));
    res.joint300 = pipeline::cmd_baseline(study_run_config(root, 300, "joint"));
    res.random300 = pipeline::cmd_baseline(study_run_config(root, 300, "random_alpha"));
    res.ours100 = pipeline::cmd_run(study_run_config(root, 100, "ours"));
    res.vanilla100 = pipeline::cmd_baseline(study_run_config(root, 100, "vanilla"));
    res.ratio = train_seconds(res.ours300) / train_seconds(res.vanilla300);
    res.total_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

Outcome criterion7_directional_study(const StudyResults& s) {
    // Points are percentage points of accuracy: 0.5 points = 0.005.
    const double margin = 0.005;
    std::string detail =
        "n=300 ours " + fmt(s.ours300.mean) + "+/-" + fmt(s.ours300.stddev) + " vs vanilla " +
        fmt(s.vanilla300.mean) + "+/-" + fmt(s.vanilla300.stddev) + "; n=100 ours " +
        fmt(s.ours100.mean) + "+/-" + fmt(s.ours100.stddev) + " vs vanilla " +
        fmt(s.vanilla100.mean) + "+/-" + fmt(s.vanilla100.stddev) + "; " +
        fmt(s.total_seconds) + "s total";
    if (s.ours300.mean < s.vanilla300.mean - margin) {
        return {false, "n=300 mean more than 0.5 points below vanilla; " + detail};
    }
    if (s.ours100.mean < s.vanilla100.mean - margin) {
        return {false, "n=100 mean more than 0.5 points below vanilla; " + detail};
    }
    if (!(s.ours300.mean > s.vanilla300.mean || s.ours100.mean > s.vanilla100.mean)) {
        return {false, "no setting strictly above vanilla; " + detail};
    }
    if (s.ours300.stddev > s.vanilla300.stddev + margin ||
        s.ours100.stddev > s.vanilla100.stddev + margin) {
        return {false, "std exceeds vanilla + 0.5 points; " + detail};
    }
    if (s.total_seconds >= 15.0 * 60.0) {
        return {false, "study exceeded the 15 minute budget; " + detail};
    }
    return {true, detail};
}

Outcome criterion8_ablation_direction(const StudyResults& s) {
    const std::string detail = "random_alpha(0.45) " + fmt(s.random300.mean) + ", joint " +
                               fmt(s.joint300.mean) + ", ours " + fmt(s.ours300.mean);
    if (!(s.random300.mean < s.ours300.mean)) {
        return {false, "random alpha not strictly below ours; " + detail};
    }
    if (s.joint300.mean > s.ours300.mean) {
        return {false, "joint training exceeds ours; " + detail};
    }
    return {true, detail};
}

Outcome criterion9_timing_model(const StudyResults& s) {
    const std::string detail = "(search+finetune)/vanilla = " + fmt(s.ratio) + " at K=2";
    if (!(s.ratio >= 1.5 && s.ratio <= 4.0)) {
        return {false, detail + " outside [1.5, 4.0]"};
    }
    return {true, detail};
}

// ---------------------------------------------------------------------------
// 10. Determinism and persistence.
// ---------------------------------------------------------------------------

std::string file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome criterion10_determinism(const fs::path& root) {
    const std::string base =
        "task.source = synthetic\n"
        "synthetic.input_dim = 6\n"
        "synthetic.source_n = 1200\n"
        "synthetic.target_n = 60\n"
        "synthetic.test_n = 300\n"
        "synthetic.teacher_hidden = 8\n"
        "synthetic.shift_angle = 0.2\n"
        "synthetic.label_noise = 0.05\n"
        "synthetic.seed = 3\n"
        "model.hidden = 8\n"
        "pretrain.epochs = 2\n"
        "pretrain.lr = 5e-3\n"
        "pretrain.batch = 32\n"
        "search.task_lr = 3e-3\n"
        "search.alpha_lr = 3e-3\n"
        "search.epochs = 1\n"
        "search.batch = 8\n"
        "search.k = 2\n"
        "finetune.epochs = 1,3\n"
        "finetune.lrs = 3e-3\n"
        "finetune.batch = 8\n"
        "seeds = 0,1\n"
        "checkpoint = " + (root / "det_pre.bin").string() + "\n";

    const auto cfg_for = [&](const std::string& out) {
        KvConfig kv = KvConfig::parse_string(base + "out = " + (root / out).string() + "\n");
        return pipeline::run_config_from_kv(kv);
    };
    pipeline::cmd_pretrain(cfg_for("det_p"));
    pipeline::cmd_run(cfg_for("det_a"));
    pipeline::cmd_run(cfg_for("det_b"));

    for (const char* name : {"report.csv", "steps.csv", "checkpoint.bin", "coefficients.bin"}) {
        if (file_bytes(root / "det_a" / name) != file_bytes(root / "det_b" / name)) {
            return {false, std::string(name) + " differs between identical invocations"};
        }
    }

    NamedTensors original;
    Rng rng(42);
    std::vector<double> values = {0.0, -0.0, 1e-300, -1e308, 3.141592653589793};
    for (int i = 0; i < 64; ++i) {
        values.push_back(rng.normal());
    }
    original.add("weird.values", {static_cast<std::int64_t>(values.size())}, values);
    save_checkpoint(original, root / "rt.bin");
    const NamedTensors loaded = load_checkpoint(root / "rt.bin");
    if (testsupport::bits_checksum(loaded.at("weird.values").data) !=
        testsupport::bits_checksum(original.at("weird.values").data)) {
        return {false, "checkpoint round trip is not bit-exact"};
    }
    return {true, "byte-identical run artifacts; bit-exact checkpoint round trip"};
}

}  // namespace

int main() {
    const fs::path root = fs::temp_directory_path() / "mixtune_acceptance";
    fs::remove_all(root);
    fs::create_directories(root);

    StudyResults study;
    std::vector<std::pair<std::string, std::function<Outcome()>>> criteria;
    criteria.emplace_back("1 gradient suite", criterion1_gradient_suite);
    criteria.emplace_back("2 hypergradient oracle", criterion2_hypergradient_oracle);
    criteria.emplace_back("3 reduction equivalence", criterion3_reduction_equivalence);
    criteria.emplace_back("4 projection & immutability", criterion4_projection_immutability);
    criteria.emplace_back("5 mixup identities", criterion5_mixup_identities);
    criteria.emplace_back("6 metric oracles", criterion6_metric_oracles);
    criteria.emplace_back("7 directional study", [&]() {
        study = run_study(root);
        return criterion7_directional_study(study);
    });
    criteria.emplace_back("8 ablation direction",
                          [&]() { return criterion8_ablation_direction(study); });
    criteria.emplace_back("9 timing model", [&]() { return criterion9_timing_model(study); });
    criteria.emplace_back("10 determinism & persistence",
                          [&]() { return criterion10_determinism(root); });

    int failures = 0;
    for (auto& [name, fn] : criteria) {
        Outcome outcome;
        try {
            outcome = fn();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        std::cout << (outcome.pass ? "[PASS] " : "[FAIL] ") << "criterion " << name << " -- "
                  << outcome.detail << "\n";
        std::cout.flush();
        if (!outcome.pass) {
            ++failures;
        }
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size()
              << " acceptance criteria passed\n";
    if (failures == 0) {
        fs::remove_all(root);
    } else {
        std::cout << "artifacts kept in " << root << "\n";
    }
    return failures;
}
