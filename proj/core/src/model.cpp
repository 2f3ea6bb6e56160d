#include "mixtune/model.hpp"

#include <algorithm>
#include <cmath>

#include "mixtune/errors.hpp"
#include "mixtune/rng.hpp"

namespace mixtune {

namespace {

void fill_normal(Tensor& t, Rng& rng, double mean, double stddev) {
    for (double& v : t.data) {
        v = rng.normal(mean, stddev);
    }
}

std::string hidden_name(std::size_t i, const char* field) {
    return "hidden" + std::to_string(i) + "." + field;
}

TensorPtr tensor_from_named(const NamedTensors& src, const std::string& name,
                            std::vector<std::int64_t> expected_shape, bool requires_grad) {
    const NamedTensor& t = src.at(name);
    if (t.shape != expected_shape) {
        throw DimensionError("checkpoint tensor '" + name + "' has shape " +
                             shape_to_string(t.shape) + ", expected " +
                             shape_to_string(expected_shape));
    }
    return Tensor::from_data(t.shape, t.data, requires_grad);
}

PlainLinear make_head(const NetSpec& spec, std::uint64_t seed) {
    // Heads are freshly initialized N(0, 0.02) with zero bias.
    Rng rng(seed);
    PlainLinear head;
    head.weight = Tensor::create({spec.head_in(), spec.head_out()}, true);
    fill_normal(*head.weight, rng, 0.0, 0.02);
    head.bias = Tensor::create({spec.head_out()}, true);
    return head;
}

}  // namespace

std::vector<MixupLinear*> Network::mixup_layers() {
    std::vector<MixupLinear*> out;
    for (Layer& l : layers) {
        if (auto* m = std::get_if<MixupLinear>(&l)) {
            out.push_back(m);
        }
    }
    return out;
}

std::vector<const MixupLinear*> Network::mixup_layers() const {
    std::vector<const MixupLinear*> out;
    for (const Layer& l : layers) {
        if (const auto* m = std::get_if<MixupLinear>(&l)) {
            out.push_back(m);
        }
    }
    return out;
}

std::vector<TensorPtr> Network::stage1_params() const {
    std::vector<TensorPtr> out;
    for (const Layer& l : layers) {
        if (const auto* m = std::get_if<MixupLinear>(&l)) {
            out.push_back(m->task_weight);
            out.push_back(m->bias);
        } else if (const auto* p = std::get_if<PlainLinear>(&l)) {
            out.push_back(p->weight);
            out.push_back(p->bias);
        }
    }
    return out;
}

std::vector<TensorPtr> Network::alpha_params() const {
    std::vector<TensorPtr> out;
    for (const MixupLinear* m : mixup_layers()) {
        out.push_back(m->alpha_left);
        out.push_back(m->alpha_right);
    }
    return out;
}

std::vector<TensorPtr> Network::mixup_task_weights() const {
    std::vector<TensorPtr> out;
    for (const MixupLinear* m : mixup_layers()) {
        out.push_back(m->task_weight);
    }
    return out;
}

std::vector<TensorPtr> Network::frozen_params() const {
    std::vector<TensorPtr> out;
    for (const MixupLinear* m : mixup_layers()) {
        out.push_back(m->pretrained_weight);
    }
    return out;
}

std::pair<TensorPtr, TensorPtr> init_alpha(std::int64_t n, std::int64_t m, std::int64_t r,
                                           double mean, double stddev, std::uint64_t seed) {
    if (n < 1 || m < 1 || r < 1) {
        throw InputError("init_alpha: dimensions must be positive");
    }
    if (stddev < 0.0) {
        throw InputError("init_alpha: negative stddev");
    }
    Rng rng(seed);
    auto left = Tensor::create({n, r}, true);
    auto right = Tensor::create({r, m}, true);
    for (double& v : left->data) {
        v = std::clamp(rng.normal(mean, stddev), 0.0, 1.0);
    }
    for (double& v : right->data) {
        v = std::clamp(rng.normal(mean, stddev), 0.0, 1.0);
    }
    return {left, right};
}

TensorPtr compose_alpha(const TensorPtr& alpha_left, const TensorPtr& alpha_right,
                        std::int64_t r) {
    return scale(matmul(alpha_left, alpha_right), 1.0 / static_cast<double>(r));
}

TensorPtr mix_weights(const MixupLinear& layer) {
    if (layer.fixed_coeff_w != nullptr) {
        return add(mul(layer.fixed_coeff_w, layer.task_weight),
                   mul(layer.fixed_coeff_w0, layer.pretrained_weight));
    }
    auto coeff_w = compose_alpha(layer.alpha_left, layer.alpha_right, layer.rank);
    auto ones_left = Tensor::ones(layer.alpha_left->shape);
    auto ones_right = Tensor::ones(layer.alpha_right->shape);
    auto coeff_w0 = compose_alpha(sub(ones_left, layer.alpha_left),
                                  sub(ones_right, layer.alpha_right), layer.rank);
    return add(mul(coeff_w, layer.task_weight), mul(coeff_w0, layer.pretrained_weight));
}

std::pair<TensorPtr, TensorPtr> compose_coefficients(const MixupLinear& layer) {
    if (layer.fixed_coeff_w != nullptr) {
        return {layer.fixed_coeff_w->clone_detached(), layer.fixed_coeff_w0->clone_detached()};
    }
    NoGradScope no_grad;
    auto cw = compose_alpha(layer.alpha_left, layer.alpha_right, layer.rank);
    auto ones_left = Tensor::ones(layer.alpha_left->shape);
    auto ones_right = Tensor::ones(layer.alpha_right->shape);
    auto cw0 = compose_alpha(sub(ones_left, layer.alpha_left),
                             sub(ones_right, layer.alpha_right), layer.rank);
    return {cw->clone_detached(), cw0->clone_detached()};
}

long clip_alpha(MixupLinear& layer) {
    long clipped = 0;
    for (TensorPtr t : {layer.alpha_left, layer.alpha_right}) {
        for (double& v : t->data) {
            if (v < 0.0 || v > 1.0) {
                v = std::clamp(v, 0.0, 1.0);
                ++clipped;
            }
        }
    }
    return clipped;
}

TensorPtr forward(const Network& net, const TensorPtr& batch) {
    if (batch->shape.size() != 2) {
        throw DimensionError("forward: batch must be [B x D], got " + batch->shape_str());
    }
    TensorPtr x = batch;
    for (const Layer& l : net.layers) {
        if (const auto* m = std::get_if<MixupLinear>(&l)) {
            if (x->cols() != m->in_features()) {
                throw DimensionError("forward: input width " + std::to_string(x->cols()) +
                                     " does not match layer of " +
                                     std::to_string(m->in_features()));
            }
            x = add_bias(matmul(x, mix_weights(*m)), m->bias);
        } else if (const auto* p = std::get_if<PlainLinear>(&l)) {
            if (x->cols() != p->weight->shape[0]) {
                throw DimensionError("forward: input width " + std::to_string(x->cols()) +
                                     " does not match layer of " +
                                     std::to_string(p->weight->shape[0]));
            }
            x = add_bias(matmul(x, p->weight), p->bias);
        } else {
            x = activation(x, std::get<ActKind>(l));
        }
    }
    return x;
}

Network build_plain_network(const NetSpec& spec, std::uint64_t seed) {
    Network net;
    net.task = spec.task;
    net.classes = spec.classes;
    Rng rng(derive_seed(seed, "body"));
    std::int64_t in = spec.input_dim;
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
        const std::int64_t out = spec.hidden[i];
        PlainLinear lin;
        lin.weight = Tensor::create({in, out}, true);
        fill_normal(*lin.weight, rng, 0.0, 1.0 / std::sqrt(static_cast<double>(in)));
        lin.bias = Tensor::create({out}, true);
        net.layers.emplace_back(std::move(lin));
        net.layers.emplace_back(spec.act);
        in = out;
    }
    net.layers.emplace_back(make_head(spec, derive_seed(seed, "head")));
    return net;
}

Network build_mixup_network(const NetSpec& spec, const NamedTensors& pretrained,
                            std::int64_t rank, double alpha_mean, double alpha_stddev,
                            std::uint64_t alpha_seed, std::uint64_t head_seed) {
    Network net;
    net.task = spec.task;
    net.classes = spec.classes;
    std::int64_t in = spec.input_dim;
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
        const std::int64_t out = spec.hidden[i];
        MixupLinear m;
        m.pretrained_weight =
            tensor_from_named(pretrained, hidden_name(i, "weight"), {in, out}, false);
        m.task_weight = m.pretrained_weight->clone_detached();
        m.task_weight->set_requires_grad(true);
        m.bias = tensor_from_named(pretrained, hidden_name(i, "bias"), {out}, true);
        m.rank = rank;
        std::tie(m.alpha_left, m.alpha_right) =
            init_alpha(in, out, rank, alpha_mean, alpha_stddev, derive_seed(alpha_seed, "layer", i));
        net.layers.emplace_back(std::move(m));
        net.layers.emplace_back(spec.act);
        in = out;
    }
    net.layers.emplace_back(make_head(spec, head_seed));
    return net;
}

Network build_warm_plain_network(const NetSpec& spec, const NamedTensors& pretrained,
                                 std::uint64_t head_seed) {
    Network net;
    net.task = spec.task;
    net.classes = spec.classes;
    std::int64_t in = spec.input_dim;
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
        const std::int64_t out = spec.hidden[i];
        PlainLinear lin;
        lin.weight = tensor_from_named(pretrained, hidden_name(i, "weight"), {in, out}, true);
        lin.bias = tensor_from_named(pretrained, hidden_name(i, "bias"), {out}, true);
        net.layers.emplace_back(std::move(lin));
        net.layers.emplace_back(spec.act);
        in = out;
    }
    net.layers.emplace_back(make_head(spec, head_seed));
    return net;
}

Network clone_network(const Network& net) {
    Network out;
    out.task = net.task;
    out.classes = net.classes;
    for (const Layer& l : net.layers) {
        if (const auto* m = std::get_if<MixupLinear>(&l)) {
            MixupLinear c;
            c.task_weight = m->task_weight->clone_detached();
            c.pretrained_weight = m->pretrained_weight->clone_detached();
            c.alpha_left = m->alpha_left->clone_detached();
            c.alpha_right = m->alpha_right->clone_detached();
            c.bias = m->bias->clone_detached();
            c.rank = m->rank;
            if (m->fixed_coeff_w != nullptr) {
                c.fixed_coeff_w = m->fixed_coeff_w->clone_detached();
                c.fixed_coeff_w0 = m->fixed_coeff_w0->clone_detached();
            }
            out.layers.emplace_back(std::move(c));
        } else if (const auto* p = std::get_if<PlainLinear>(&l)) {
            PlainLinear c;
            c.weight = p->weight->clone_detached();
            c.bias = p->bias->clone_detached();
            out.layers.emplace_back(std::move(c));
        } else {
            out.layers.emplace_back(std::get<ActKind>(l));
        }
    }
    return out;
}

NamedTensors export_effective_weights(const Network& net) {
    NoGradScope no_grad;
    NamedTensors out;
    std::size_t hidden_idx = 0;
    for (const Layer& l : net.layers) {
        if (const auto* m = std::get_if<MixupLinear>(&l)) {
            TensorPtr eff = mix_weights(*m);
            out.add(hidden_name(hidden_idx, "weight"), *eff);
            out.add(hidden_name(hidden_idx, "bias"), *m->bias);
            ++hidden_idx;
        } else if (const auto* p = std::get_if<PlainLinear>(&l)) {
            const bool is_head = (&l == &net.layers.back());
            if (is_head) {
                out.add("head.weight", *p->weight);
                out.add("head.bias", *p->bias);
            } else {
                out.add(hidden_name(hidden_idx, "weight"), *p->weight);
                out.add(hidden_name(hidden_idx, "bias"), *p->bias);
                ++hidden_idx;
            }
        }
    }
    return out;
}

std::vector<int> predict_classes(const Network& net, const TensorPtr& features) {
    NoGradScope no_grad;
    TensorPtr logits = forward(net, features);
    const std::int64_t b = logits->rows(), c = logits->cols();
    std::vector<int> out(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i) {
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < c; ++j) {
            if (logits->at(i, j) > logits->at(i, best)) {
                best = j;
            }
        }
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

std::vector<double> predict_values(const Network& net, const TensorPtr& features) {
    NoGradScope no_grad;
    TensorPtr pred = forward(net, features);
    return pred->data;
}

}  // namespace mixtune
