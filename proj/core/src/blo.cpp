#include "mixtune/blo.hpp"

#include <algorithm>
#include <cmath>

#include "mixtune/errors.hpp"
#include "mixtune/ops.hpp"
#include "mixtune/rng.hpp"

namespace mixtune::blo {

namespace {

void zero_grads(std::span<const TensorPtr> params) {
    for (const TensorPtr& p : params) {
        p->zero_grad();
    }
}

void check_finite_loss(double loss) {
    if (!std::isfinite(loss)) {
        throw NumericError("training loss is not finite");
    }
}

/// Mean/min/max over all composed C_w entries, for step records.
void alpha_stats(const Network& net, StepRecord& rec) {
    double sum = 0.0;
    double lo = 0.0, hi = 0.0;
    long count = 0;
    for (const MixupLinear* layer : net.mixup_layers()) {
        auto [cw, cw0] = compose_coefficients(*layer);
        for (const double v : cw->data) {
            if (count == 0) {
                lo = hi = v;
            } else {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            sum += v;
            ++count;
        }
    }
    if (count > 0) {
        rec.alpha_mean = sum / static_cast<double>(count);
        rec.alpha_min = lo;
        rec.alpha_max = hi;
    }
}

std::vector<std::vector<double>> copy_grads(std::span<const TensorPtr> params) {
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const TensorPtr& p : params) {
        out.push_back(p->grad_ref());
    }
    return out;
}

}  // namespace

Batch gather_batch(const Dataset& ds, std::span<const std::int64_t> indices) {
    Batch b;
    const std::int64_t dim = ds.dim();
    b.features = Tensor::create({static_cast<std::int64_t>(indices.size()), dim});
    for (std::size_t row = 0; row < indices.size(); ++row) {
        const std::int64_t i = indices[row];
        std::copy(ds.features->data.begin() + static_cast<std::ptrdiff_t>(i * dim),
                  ds.features->data.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim),
                  b.features->data.begin() + static_cast<std::ptrdiff_t>(row * dim));
        if (ds.task == TaskKind::classification) {
            b.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
        } else {
            b.targets.push_back(ds.targets[static_cast<std::size_t>(i)]);
        }
    }
    return b;
}

TensorPtr task_loss(const Network& net, const Batch& batch) {
    TensorPtr out = forward(net, batch.features);
    if (net.task == TaskKind::classification) {
        return loss_ce(out, batch.labels);
    }
    return loss_mse(out, batch.targets);
}

BatchCycler::BatchCycler(std::vector<std::int64_t> indices, long batch_size, std::uint64_t seed)
    : indices_(std::move(indices)), batch_size_(batch_size), seed_(seed) {
    if (indices_.empty()) {
        throw ConfigError("BatchCycler: empty index set");
    }
    if (batch_size_ < 1) {
        throw ConfigError("BatchCycler: batch size must be positive");
    }
    reshuffle();
}

void BatchCycler::reshuffle() {
    Rng rng(derive_seed(seed_, "epoch", epoch_));
    rng.shuffle(indices_);
    pos_ = 0;
}

std::vector<std::int64_t> BatchCycler::next() {
    if (pos_ >= indices_.size()) {
        ++epoch_;
        reshuffle();
    }
    const std::size_t end = std::min(pos_ + static_cast<std::size_t>(batch_size_), indices_.size());
    std::vector<std::int64_t> out(indices_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  indices_.begin() + static_cast<std::ptrdiff_t>(end));
    pos_ = end;
    return out;
}

long BatchCycler::batches_per_epoch() const {
    return static_cast<long>((indices_.size() + static_cast<std::size_t>(batch_size_) - 1) /
                             static_cast<std::size_t>(batch_size_));
}

WeightSnapshot snapshot_task_weights(const Network& net) {
    WeightSnapshot snap;
    for (const TensorPtr& w : net.mixup_task_weights()) {
        snap.push_back(w->data);
    }
    return snap;
}

void restore_task_weights(Network& net, const WeightSnapshot& snap) {
    const auto weights = net.mixup_task_weights();
    if (weights.size() != snap.size()) {
        throw InputError("restore_task_weights: snapshot does not match network");
    }
    for (std::size_t i = 0; i < weights.size(); ++i) {
        weights[i]->data = snap[i];
    }
}

Stage1Result stage1_step(Network& net, const Batch& train_batch, AdamW& task_opt, double lr_t) {
    const auto params = task_opt.params();
    zero_grads(params);
    Stage1Result result;
    {
        Graph graph;
        TensorPtr loss = task_loss(net, train_batch);
        result.loss = loss->data[0];
        check_finite_loss(result.loss);
        graph.backward(loss);
    }
    result.w_pre = snapshot_task_weights(net);
    task_opt.step(lr_t);
    return result;
}

std::optional<double> compute_epsilon(double val_grad_norm) {
    if (!(val_grad_norm >= 1e-12)) {
        return std::nullopt;
    }
    return 0.01 / val_grad_norm;
}

double global_grad_norm(std::span<const TensorPtr> params) {
    double acc = 0.0;
    for (const TensorPtr& p : params) {
        for (const double g : p->grad_ref()) {
            acc += g * g;
        }
    }
    return std::sqrt(acc);
}

AlphaHypergrad alpha_hypergradient(Network& net, const Batch& val_batch, const Batch& train_batch,
                                   const WeightSnapshot& w_pre, double inner_lr_t,
                                   std::optional<double> epsilon_override) {
    const auto alphas = net.alpha_params();
    const auto weights = net.mixup_task_weights();

    AlphaHypergrad result;
    zero_grads(alphas);
    zero_grads(weights);
    {
        Graph graph;
        TensorPtr loss = task_loss(net, val_batch);
        result.val_loss = loss->data[0];
        check_finite_loss(result.val_loss);
        graph.backward(loss);
    }
    // Direct term and the perturbation direction.
    std::vector<std::vector<double>> direct = copy_grads(alphas);
    std::vector<std::vector<double>> direction = copy_grads(weights);

    const std::optional<double> eps_rule = compute_epsilon(global_grad_norm(weights));
    if (!eps_rule.has_value()) {
        result.degenerate = true;
        return result;
    }
    const double eps = epsilon_override.value_or(*eps_rule);
    result.epsilon = eps;

    const WeightSnapshot w_now = snapshot_task_weights(net);

    const auto perturbed_alpha_grads = [&](double sign) {
        for (std::size_t i = 0; i < weights.size(); ++i) {
            std::vector<double>& data = weights[i]->data;
            for (std::size_t j = 0; j < data.size(); ++j) {
                data[j] = w_pre[i][j] + sign * eps * direction[i][j];
            }
        }
        zero_grads(alphas);
        Graph graph;
        TensorPtr loss = task_loss(net, train_batch);
        check_finite_loss(loss->data[0]);
        graph.backward(loss);
        return copy_grads(alphas);
    };

    const std::vector<std::vector<double>> plus = perturbed_alpha_grads(+1.0);
    const std::vector<std::vector<double>> minus = perturbed_alpha_grads(-1.0);
    restore_task_weights(net, w_now);

    result.grads.resize(alphas.size());
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        result.grads[i].resize(direct[i].size());
        for (std::size_t j = 0; j < direct[i].size(); ++j) {
            const double correction = (plus[i][j] - minus[i][j]) / (2.0 * eps);
            result.grads[i][j] = direct[i][j] - inner_lr_t * correction;
        }
    }
    return result;
}

Stage2Result stage2_step(Network& net, const Batch& val_batch, const Batch& train_batch,
                         const WeightSnapshot& w_pre, AdamW& alpha_opt, double lr_t,
                         double inner_lr_t) {
    AlphaHypergrad hg = alpha_hypergradient(net, val_batch, train_batch, w_pre, inner_lr_t);
    Stage2Result result;
    result.val_loss = hg.val_loss;
    if (hg.degenerate) {
        result.skipped = true;
        return result;
    }
    result.epsilon = hg.epsilon;

    const auto alphas = net.alpha_params();
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        alphas[i]->grad_ref() = hg.grads[i];
    }
    alpha_opt.step(lr_t);
    for (MixupLinear* layer : net.mixup_layers()) {
        result.clipped_entries += clip_alpha(*layer);
    }
    return result;
}

Coefficients extract_coefficients(const Network& net) {
    Coefficients out;
    for (const MixupLinear* layer : net.mixup_layers()) {
        auto [cw, cw0] = compose_coefficients(*layer);
        out.push_back(CoefficientPair{cw, cw0});
    }
    return out;
}

Coefficients average_coefficients(const std::vector<Coefficients>& runs) {
    if (runs.empty()) {
        throw InputError("average_coefficients: no runs");
    }
    const std::size_t layers = runs.front().size();
    Coefficients out;
    for (std::size_t l = 0; l < layers; ++l) {
        CoefficientPair pair;
        pair.coeff_w = runs.front()[l].coeff_w->clone_detached();
        pair.coeff_w0 = runs.front()[l].coeff_w0->clone_detached();
        for (std::size_t r = 1; r < runs.size(); ++r) {
            if (runs[r].size() != layers ||
                runs[r][l].coeff_w->shape != pair.coeff_w->shape) {
                throw InputError("average_coefficients: mismatched runs");
            }
            for (std::size_t j = 0; j < pair.coeff_w->data.size(); ++j) {
                pair.coeff_w->data[j] += runs[r][l].coeff_w->data[j];
                pair.coeff_w0->data[j] += runs[r][l].coeff_w0->data[j];
            }
        }
        const double inv = 1.0 / static_cast<double>(runs.size());
        for (std::size_t j = 0; j < pair.coeff_w->data.size(); ++j) {
            pair.coeff_w->data[j] *= inv;
            pair.coeff_w0->data[j] *= inv;
        }
        out.push_back(std::move(pair));
    }
    return out;
}

SearchResult search_phase(Network& net, const Dataset& ds, const SplitPair& split,
                          const SearchConfig& cfg, const StepObserver& observer) {
    if (split.train_indices.empty() || split.val_indices.empty()) {
        throw ConfigError("search_phase: both splits must be non-empty");
    }

    AdamWConfig task_adam = cfg.adam;
    task_adam.weight_decay = cfg.task_weight_decay;
    AdamWConfig alpha_adam = cfg.adam;
    alpha_adam.weight_decay = cfg.alpha_weight_decay;
    AdamW task_opt(net.stage1_params(), task_adam);
    AdamW alpha_opt(net.alpha_params(), alpha_adam);

    const LrSchedule task_lr =
        LrSchedule::from_ratio(cfg.task_lr, cfg.task_warmup_ratio, cfg.total_steps);
    const LrSchedule alpha_lr =
        LrSchedule::from_ratio(cfg.alpha_lr, cfg.alpha_warmup_ratio, cfg.total_steps);

    BatchCycler train_cycler(split.train_indices, cfg.batch_size,
                             derive_seed(cfg.seed, "batch-train"));
    BatchCycler val_cycler(split.val_indices, cfg.batch_size, derive_seed(cfg.seed, "batch-val"));

    SearchResult result;
    for (long t = 0; t < cfg.total_steps; ++t) {
        const Batch train_batch = gather_batch(ds, train_cycler.next());
        const Batch val_batch = gather_batch(ds, val_cycler.next());

        const double inner_lr_t = task_lr.at(t);
        const Stage1Result s1 = stage1_step(net, train_batch, task_opt, inner_lr_t);
        if (observer) {
            StepRecord rec{t, "1", s1.loss, 0.0, 0.0, 0.0, 0.0};
            alpha_stats(net, rec);
            observer(rec);
        }

        const Stage2Result s2 =
            stage2_step(net, val_batch, train_batch, s1.w_pre, alpha_opt, alpha_lr.at(t), inner_lr_t);
        if (s2.skipped) {
            ++result.stats.degenerate_skips;
        }
        result.stats.clipped_entries += s2.clipped_entries;
        result.stats.final_val_loss = s2.val_loss;
        if (observer) {
            StepRecord rec{t, "2", s2.val_loss, s2.epsilon, 0.0, 0.0, 0.0};
            alpha_stats(net, rec);
            observer(rec);
        }
        ++result.stats.steps;
    }

    result.coefficients = extract_coefficients(net);
    for (const MixupLinear* layer : net.mixup_layers()) {
        result.alpha_lefts.push_back(layer->alpha_left->clone_detached());
        result.alpha_rights.push_back(layer->alpha_right->clone_detached());
    }
    return result;
}

KReplicateResult k_replicate_search(const Dataset& ds, const SearchConfig& cfg,
                                    const NetworkFactory& factory, const StepObserver& observer) {
    if (cfg.replicates < 1) {
        throw ConfigError("k_replicate_search: K must be >= 1");
    }
    KReplicateResult out;
    std::vector<Coefficients> all_coeffs;
    std::vector<SearchResult> results;
    std::vector<Network> nets;

    for (int k = 0; k < cfg.replicates; ++k) {
        const std::uint64_t replicate_seed = cfg.seed + static_cast<std::uint64_t>(k);
        Network net = factory(k, replicate_seed);
        SplitPair split = split_dataset(ds, cfg.split_ratio, replicate_seed);
        if (k == 0) {
            out.first_split = split;
        }
        SearchConfig rep_cfg = cfg;
        rep_cfg.seed = replicate_seed;
        SearchResult res = search_phase(net, ds, split, rep_cfg, observer);
        out.stats.steps += res.stats.steps;
        out.stats.degenerate_skips += res.stats.degenerate_skips;
        out.stats.clipped_entries += res.stats.clipped_entries;
        out.stats.final_val_loss = res.stats.final_val_loss;
        all_coeffs.push_back(res.coefficients);
        results.push_back(std::move(res));
        nets.push_back(std::move(net));
    }

    if (cfg.average_factors) {
        // Average the raw factor pairs, then compose.
        Network& base = nets.front();
        const auto layers = base.mixup_layers();
        for (std::size_t l = 0; l < layers.size(); ++l) {
            std::vector<double>& left = layers[l]->alpha_left->data;
            std::vector<double>& right = layers[l]->alpha_right->data;
            for (std::size_t r = 1; r < results.size(); ++r) {
                for (std::size_t j = 0; j < left.size(); ++j) {
                    left[j] += results[r].alpha_lefts[l]->data[j];
                }
                for (std::size_t j = 0; j < right.size(); ++j) {
                    right[j] += results[r].alpha_rights[l]->data[j];
                }
            }
            const double inv = 1.0 / static_cast<double>(results.size());
            for (double& v : left) {
                v *= inv;
            }
            for (double& v : right) {
                v *= inv;
            }
        }
        out.coefficients = extract_coefficients(base);
    } else {
        out.coefficients = average_coefficients(all_coeffs);
    }

    // Averaged inner trainables carry into the finetune phase.
    out.net = clone_network(nets.front());
    const auto avg_params = out.net.stage1_params();
    std::vector<std::vector<TensorPtr>> rep_params;
    for (const Network& n : nets) {
        rep_params.push_back(n.stage1_params());
    }
    for (std::size_t p = 0; p < avg_params.size(); ++p) {
        std::vector<double>& acc = avg_params[p]->data;
        for (std::size_t r = 1; r < rep_params.size(); ++r) {
            const std::vector<double>& other = rep_params[r][p]->data;
            for (std::size_t j = 0; j < acc.size(); ++j) {
                acc[j] += other[j];
            }
        }
        const double inv = 1.0 / static_cast<double>(rep_params.size());
        for (double& v : acc) {
            v *= inv;
        }
    }
    return out;
}

long steps_for_epochs(std::int64_t n_rows, long batch_size, long epochs) {
    if (n_rows < 1 || batch_size < 1) {
        throw ConfigError("steps_for_epochs: empty data or bad batch size");
    }
    const long per_epoch =
        static_cast<long>((n_rows + batch_size - 1) / static_cast<std::int64_t>(batch_size));
    return per_epoch * epochs;
}

double train_supervised(Network& net, const Dataset& ds, std::span<const std::int64_t> indices,
                        const TrainConfig& cfg, const StepObserver& observer,
                        const std::string& stage_tag) {
    AdamWConfig adam = cfg.adam;
    adam.weight_decay = cfg.weight_decay;
    AdamW opt(net.stage1_params(), adam);
    const LrSchedule lr = LrSchedule::from_ratio(cfg.lr, cfg.warmup_ratio, cfg.total_steps);
    BatchCycler cycler(std::vector<std::int64_t>(indices.begin(), indices.end()), cfg.batch_size,
                       cfg.cycler_seed);
    double last_loss = 0.0;
    for (long t = 0; t < cfg.total_steps; ++t) {
        const Batch batch = gather_batch(ds, cycler.next());
        const Stage1Result res = stage1_step(net, batch, opt, lr.at(t));
        last_loss = res.loss;
        if (observer) {
            StepRecord rec{t, stage_tag, res.loss, 0.0, 0.0, 0.0, 0.0};
            alpha_stats(net, rec);
            observer(rec);
        }
    }
    return last_loss;
}

double finetune_phase(Network& net, const Dataset& ds, std::span<const std::int64_t> indices,
                      const Coefficients& coefficients, long epochs, const TrainConfig& cfg,
                      const StepObserver& observer) {
    const auto layers = net.mixup_layers();
    if (layers.size() != coefficients.size()) {
        throw InputError("finetune_phase: coefficient count does not match network");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (coefficients[l].coeff_w->shape != layers[l]->task_weight->shape) {
            throw InputError("finetune_phase: coefficient shape mismatch at layer " +
                             std::to_string(l));
        }
        layers[l]->fixed_coeff_w = coefficients[l].coeff_w->clone_detached();
        layers[l]->fixed_coeff_w0 = coefficients[l].coeff_w0->clone_detached();
    }
    TrainConfig run = cfg;
    run.total_steps = steps_for_epochs(static_cast<std::int64_t>(indices.size()), cfg.batch_size,
                                       epochs);
    return train_supervised(net, ds, indices, run, observer, "ft");
}

void joint_train(Network& net, const Dataset& ds, std::span<const std::int64_t> indices,
                 const SearchConfig& cfg, const StepObserver& observer) {
    AdamWConfig task_adam = cfg.adam;
    task_adam.weight_decay = cfg.task_weight_decay;
    AdamWConfig alpha_adam = cfg.adam;
    alpha_adam.weight_decay = cfg.alpha_weight_decay;
    AdamW task_opt(net.stage1_params(), task_adam);
    AdamW alpha_opt(net.alpha_params(), alpha_adam);
    const LrSchedule task_lr =
        LrSchedule::from_ratio(cfg.task_lr, cfg.task_warmup_ratio, cfg.total_steps);
    const LrSchedule alpha_lr =
        LrSchedule::from_ratio(cfg.alpha_lr, cfg.alpha_warmup_ratio, cfg.total_steps);
    BatchCycler cycler(std::vector<std::int64_t>(indices.begin(), indices.end()), cfg.batch_size,
                       derive_seed(cfg.seed, "batch-train"));

    const auto all_params = net.stage1_params();
    const auto alphas = net.alpha_params();
    for (long t = 0; t < cfg.total_steps; ++t) {
        const Batch batch = gather_batch(ds, cycler.next());
        zero_grads(all_params);
        zero_grads(alphas);
        double loss_value = 0.0;
        {
            Graph graph;
            TensorPtr loss = task_loss(net, batch);
            loss_value = loss->data[0];
            check_finite_loss(loss_value);
            graph.backward(loss);
        }
        task_opt.step(task_lr.at(t));
        alpha_opt.step(alpha_lr.at(t));
        for (MixupLinear* layer : net.mixup_layers()) {
            clip_alpha(*layer);
        }
        if (observer) {
            StepRecord rec{t, "1", loss_value, 0.0, 0.0, 0.0, 0.0};
            alpha_stats(net, rec);
            observer(rec);
        }
    }
}

}  // namespace mixtune::blo
