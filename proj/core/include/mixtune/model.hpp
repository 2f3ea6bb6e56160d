#pragma once

#include <cstdint>
#include <utility>
#include <variant>
#include <vector>

#include "mixtune/checkpoint.hpp"
#include "mixtune/ops.hpp"
#include "mixtune/tensor.hpp"

namespace mixtune {

enum class TaskKind { classification, regression };

/// Dense layer whose effective weight is an interpolation of a frozen
/// pretrained matrix and a trainable task matrix, controlled per entry by the
/// rank-r factor pair (alpha_left, alpha_right):
///
///   C_w  = alpha_left . alpha_right / r
///   C_w0 = (1 - alpha_left) . (1 - alpha_right) / r
///   W_eff = C_w * W + C_w0 * W0        (element-wise products)
///
/// Factors live in [0,1]. When fixed_coeff_w/_w0 are set (frozen-coefficient
/// training), the factors are bypassed entirely.
struct MixupLinear {
    TensorPtr task_weight;        // W  [in x out], trainable
    TensorPtr pretrained_weight;  // W0 [in x out], frozen
    TensorPtr alpha_left;         // [in x r]
    TensorPtr alpha_right;        // [r x out]
    TensorPtr bias;               // [out], trainable, no mixup
    std::int64_t rank = 1;

    TensorPtr fixed_coeff_w;   // C_w  [in x out] when coefficients are frozen
    TensorPtr fixed_coeff_w0;  // C_w0 [in x out]

    std::int64_t in_features() const { return task_weight->shape[0]; }
    std::int64_t out_features() const { return task_weight->shape[1]; }
};

struct PlainLinear {
    TensorPtr weight;  // [in x out]
    TensorPtr bias;    // [out]
};

using Layer = std::variant<MixupLinear, PlainLinear, ActKind>;

/// Feed-forward network: a stack of (mixup or plain) linear layers and
/// activations, ending in exactly one plain output head.
struct Network {
    std::vector<Layer> layers;
    TaskKind task = TaskKind::classification;
    std::int64_t classes = 2;

    std::vector<MixupLinear*> mixup_layers();
    std::vector<const MixupLinear*> mixup_layers() const;

    /// Trainables of the inner problem and the finetune phase:
    /// task weights, biases and the head. Never includes alpha factors.
    std::vector<TensorPtr> stage1_params() const;
    /// The alpha factor pair of every mixup layer.
    std::vector<TensorPtr> alpha_params() const;
    /// Mixup task-weight matrices only (the tensors perturbed by the
    /// finite-difference hypergradient).
    std::vector<TensorPtr> mixup_task_weights() const;
    /// Frozen pretrained matrices.
    std::vector<TensorPtr> frozen_params() const;
};

/// Factor pair drawn i.i.d. from N(mean, stddev) then clipped to [0,1].
std::pair<TensorPtr, TensorPtr> init_alpha(std::int64_t n, std::int64_t m, std::int64_t r,
                                           double mean, double stddev, std::uint64_t seed);

/// Differentiable composition alpha_left . alpha_right / r; entries stay in
/// [0,1] whenever the factors do.
TensorPtr compose_alpha(const TensorPtr& alpha_left, const TensorPtr& alpha_right, std::int64_t r);

/// Differentiable effective weight of a mixup layer (see MixupLinear).
TensorPtr mix_weights(const MixupLinear& layer);

/// Plain-value (no-grad) coefficient pair of a mixup layer as currently
/// parameterized: (C_w, C_w0).
std::pair<TensorPtr, TensorPtr> compose_coefficients(const MixupLinear& layer);

/// Clips both factors into [0,1]; returns the number of entries that were out
/// of range before clipping.
long clip_alpha(MixupLinear& layer);

TensorPtr forward(const Network& net, const TensorPtr& batch);

struct NetSpec {
    std::int64_t input_dim = 2;
    std::vector<std::int64_t> hidden = {16};
    ActKind act = ActKind::tanh;
    TaskKind task = TaskKind::classification;
    std::int64_t classes = 2;

    std::int64_t head_in() const { return hidden.empty() ? input_dim : hidden.back(); }
    std::int64_t head_out() const { return task == TaskKind::regression ? 1 : classes; }
};

/// Fresh network, all layers plain and trainable (used for pretraining).
Network build_plain_network(const NetSpec& spec, std::uint64_t seed);

/// Mixup network over a pretrained body: task weights start as copies of the
/// pretrained matrices, factors from init_alpha, and a freshly initialized
/// head (the head has no pretrained counterpart).
Network build_mixup_network(const NetSpec& spec, const NamedTensors& pretrained, std::int64_t rank,
                            double alpha_mean, double alpha_stddev, std::uint64_t alpha_seed,
                            std::uint64_t head_seed);

/// Plain network warm-started from a pretrained body with a fresh head
/// (vanilla finetuning).
Network build_warm_plain_network(const NetSpec& spec, const NamedTensors& pretrained,
                                 std::uint64_t head_seed);

/// Deep copy; parameter tensors are cloned so training the copy leaves the
/// original untouched.
Network clone_network(const Network& net);

/// Checkpoint names: hidden{i}.weight / hidden{i}.bias / head.weight /
/// head.bias. For mixup networks the *effective* (mixed) weights are exported,
/// so the result always loads back as a plain network.
NamedTensors export_effective_weights(const Network& net);

/// Class predictions (argmax over logits) for a feature matrix.
std::vector<int> predict_classes(const Network& net, const TensorPtr& features);
/// Raw head outputs for regression.
std::vector<double> predict_values(const Network& net, const TensorPtr& features);

}  // namespace mixtune
