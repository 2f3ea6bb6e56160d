#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mixtune/data.hpp"
#include "mixtune/model.hpp"
#include "mixtune/optim.hpp"

namespace mixtune::blo {

/// Hyperparameters of the bi-level search phase and its optimizers.
struct SearchConfig {
    double task_lr = 2e-5;             // inner (task weight) peak learning rate
    double alpha_lr = 2e-3;            // outer (alpha) peak learning rate
    double task_weight_decay = 0.01;   // decoupled decay on W / bias / head
    double alpha_weight_decay = 0.01;  // decoupled decay on alpha factors
    double task_warmup_ratio = 0.1;
    double alpha_warmup_ratio = 0.1;
    long total_steps = 1;
    long batch_size = 16;
    double split_ratio = 0.8;
    int replicates = 1;  // K
    std::int64_t rank = 1;
    double alpha_init_mean = 1.0;
    double alpha_init_stddev = 0.005;
    bool average_factors = false;  // average raw factors instead of composed coefficients
    AdamWConfig adam;              // beta1/beta2/eps (decay fields above take precedence)
    std::uint64_t seed = 0;
};

/// One batch of rows gathered from a dataset.
struct Batch {
    TensorPtr features;
    std::vector<int> labels;
    std::vector<double> targets;
};

Batch gather_batch(const Dataset& ds, std::span<const std::int64_t> indices);

/// Task loss for the dataset kind (cross-entropy or MSE), recorded on the
/// current graph.
TensorPtr task_loss(const Network& net, const Batch& batch);

/// Cycles a fixed index set in seeded per-epoch shuffles; every epoch is an
/// independent derived stream so two cyclers never interact.
class BatchCycler {
public:
    BatchCycler(std::vector<std::int64_t> indices, long batch_size, std::uint64_t seed);
    std::vector<std::int64_t> next();
    long batches_per_epoch() const;

private:
    void reshuffle();
    std::vector<std::int64_t> indices_;
    long batch_size_;
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::size_t pos_ = 0;
};

/// Pre-update snapshot of every mixup task-weight matrix.
using WeightSnapshot = std::vector<std::vector<double>>;

WeightSnapshot snapshot_task_weights(const Network& net);
void restore_task_weights(Network& net, const WeightSnapshot& snap);

struct Stage1Result {
    double loss = 0.0;
    WeightSnapshot w_pre;
};

/// Inner step: task loss on a train batch, backward, then one AdamW update of
/// task weights / biases / head at lr_t. Alpha factors receive no update.
/// Returns the loss and the pre-update weight snapshot.
Stage1Result stage1_step(Network& net, const Batch& train_batch, AdamW& task_opt, double lr_t);

/// Finite-difference perturbation scale 0.01 / ||grad||_2; empty when the norm
/// is degenerate (< 1e-12) and the alpha update must be skipped.
std::optional<double> compute_epsilon(double val_grad_norm);

/// L2 norm over the concatenated .grad buffers of the given tensors.
double global_grad_norm(std::span<const TensorPtr> params);

struct AlphaHypergrad {
    bool degenerate = false;
    double epsilon = 0.0;
    double val_loss = 0.0;
    /// d(val objective)/d(factor), ordered as Network::alpha_params().
    std::vector<std::vector<double>> grads;
};

/// Hypergradient of the validation loss with respect to the alpha factors
/// around the current weights W' (post inner update) and the pre-update
/// snapshot w_pre:
///
///   direct      = d/dalpha L_val(W', alpha)
///   v           = d/dW' L_val(W', alpha),  eps = 0.01 / ||v||
///   correction  = [d/dalpha L_tr(w_pre + eps v) - d/dalpha L_tr(w_pre - eps v)] / (2 eps)
///   hypergrad   = direct - inner_lr_t * correction
///
/// inner_lr_t is the inner scheduled learning rate at the current step. W' is
/// restored before returning. An explicit epsilon override replaces only the
/// scale (used by the fidelity tests).
AlphaHypergrad alpha_hypergradient(Network& net, const Batch& val_batch, const Batch& train_batch,
                                   const WeightSnapshot& w_pre, double inner_lr_t,
                                   std::optional<double> epsilon_override = std::nullopt);

struct Stage2Result {
    double val_loss = 0.0;
    double epsilon = 0.0;  // 0 when the update was skipped
    bool skipped = false;
    long clipped_entries = 0;
};

/// Outer step: assemble the hypergradient, AdamW-update the alpha factors at
/// lr_t, then project both factors back into [0,1].
Stage2Result stage2_step(Network& net, const Batch& val_batch, const Batch& train_batch,
                         const WeightSnapshot& w_pre, AdamW& alpha_opt, double lr_t,
                         double inner_lr_t);

/// Composed per-layer coefficient pair (C_w, C_w0).
struct CoefficientPair {
    TensorPtr coeff_w;
    TensorPtr coeff_w0;
};
using Coefficients = std::vector<CoefficientPair>;

Coefficients extract_coefficients(const Network& net);
Coefficients average_coefficients(const std::vector<Coefficients>& runs);

/// Per-step scalars emitted by the training loops.
struct StepRecord {
    long step = 0;
    std::string stage;  // "1", "2" or "ft"
    double loss = 0.0;
    double epsilon = 0.0;
    double alpha_mean = 0.0;
    double alpha_min = 0.0;
    double alpha_max = 0.0;
};
using StepObserver = std::function<void(const StepRecord&)>;

struct SearchStats {
    long steps = 0;
    long degenerate_skips = 0;
    long clipped_entries = 0;
    double final_val_loss = 0.0;
};

struct SearchResult {
    Coefficients coefficients;
    std::vector<TensorPtr> alpha_lefts;
    std::vector<TensorPtr> alpha_rights;
    SearchStats stats;
};

/// Alternates stage 1 and stage 2 for total_steps iterations, consuming one
/// batch from each split per iteration. The network is trained in place.
SearchResult search_phase(Network& net, const Dataset& ds, const SplitPair& split,
                          const SearchConfig& cfg, const StepObserver& observer = {});

/// Builds a fresh search network for replicate k of base seed `seed`.
using NetworkFactory = std::function<Network(int replicate, std::uint64_t replicate_seed)>;

struct KReplicateResult {
    Coefficients coefficients;  // averaged over replicates
    Network net;                // trainables averaged over replicates
    SplitPair first_split;      // model-selection split (replicate 0)
    SearchStats stats;          // summed over replicates
};

/// Runs search_phase on K independently resampled splits (seeds seed+0 ..
/// seed+K-1), each on a freshly built network, and averages the learned
/// coefficients (or raw factors when cfg.average_factors) and the trainables.
KReplicateResult k_replicate_search(const Dataset& ds, const SearchConfig& cfg,
                                    const NetworkFactory& factory,
                                    const StepObserver& observer = {});

struct TrainConfig {
    double lr = 2e-5;
    double weight_decay = 0.01;
    double warmup_ratio = 0.1;
    long batch_size = 16;
    long total_steps = 1;
    AdamWConfig adam;
    std::uint64_t cycler_seed = 0;
};

/// Generic supervised loop over stage1-style trainables (task weights, biases,
/// head). Used by pretraining, vanilla finetuning and the finetune phase.
/// Throws NumericError if the loss goes non-finite.
double train_supervised(Network& net, const Dataset& ds, std::span<const std::int64_t> indices,
                        const TrainConfig& cfg, const StepObserver& observer = {},
                        const std::string& stage_tag = "ft");

/// Installs the fixed coefficient pair on each mixup layer (alpha factors are
/// bypassed from here on) and trains task weights / biases / head on the full
/// index set for `epochs` passes.
double finetune_phase(Network& net, const Dataset& ds, std::span<const std::int64_t> indices,
                      const Coefficients& coefficients, long epochs, const TrainConfig& cfg,
                      const StepObserver& observer = {});

/// Single-level baseline: W and alpha are updated together on every batch of
/// the same stream (no split, no hypergradient), with per-step projection.
void joint_train(Network& net, const Dataset& ds, std::span<const std::int64_t> indices,
                 const SearchConfig& cfg, const StepObserver& observer = {});

long steps_for_epochs(std::int64_t n_rows, long batch_size, long epochs);

}  // namespace mixtune::blo
