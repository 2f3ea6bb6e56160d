#include "mixtune/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "mixtune/errors.hpp"

namespace mixtune {

std::string shape_to_string(std::span<const std::int64_t> shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out += "x";
        }
        out += std::to_string(shape[i]);
    }
    out += "]";
    return out;
}

std::int64_t shape_numel(std::span<const std::int64_t> shape) {
    std::int64_t n = 1;
    for (const std::int64_t d : shape) {
        if (d < 0) {
            throw DimensionError("negative dimension in shape " + shape_to_string(shape));
        }
        n *= d;
    }
    return n;
}

TensorPtr Tensor::create(std::vector<std::int64_t> shape, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    const std::int64_t n = shape_numel(shape);
    t->shape = std::move(shape);
    t->data.assign(static_cast<std::size_t>(n), 0.0);
    t->requires_grad = requires_grad;
    t->needs_grad = requires_grad;
    return t;
}

TensorPtr Tensor::from_data(std::vector<std::int64_t> shape, std::vector<double> values,
                            bool requires_grad) {
    const std::int64_t n = shape_numel(shape);
    if (n != static_cast<std::int64_t>(values.size())) {
        throw DimensionError("data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_to_string(shape));
    }
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(values);
    t->requires_grad = requires_grad;
    t->needs_grad = requires_grad;
    return t;
}

TensorPtr Tensor::full(std::vector<std::int64_t> shape, double value, bool requires_grad) {
    auto t = create(std::move(shape), requires_grad);
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

TensorPtr Tensor::zeros(std::vector<std::int64_t> shape, bool requires_grad) {
    return create(std::move(shape), requires_grad);
}

TensorPtr Tensor::ones(std::vector<std::int64_t> shape, bool requires_grad) {
    return full(std::move(shape), 1.0, requires_grad);
}

TensorPtr Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

std::int64_t Tensor::rows() const {
    if (shape.size() != 2) {
        throw DimensionError("rows() on non-matrix tensor " + shape_str());
    }
    return shape[0];
}

std::int64_t Tensor::cols() const {
    if (shape.size() != 2) {
        throw DimensionError("cols() on non-matrix tensor " + shape_str());
    }
    return shape[1];
}

double& Tensor::at(std::int64_t r, std::int64_t c) {
    return data[static_cast<std::size_t>(r * cols() + c)];
}

double Tensor::at(std::int64_t r, std::int64_t c) const {
    return data[static_cast<std::size_t>(r * cols() + c)];
}

void Tensor::set_requires_grad(bool value) {
    requires_grad = value;
    if (is_leaf) {
        needs_grad = value;
    }
}

void Tensor::zero_grad() {
    if (grad.size() != data.size()) {
        grad.assign(data.size(), 0.0);
    } else {
        std::fill(grad.begin(), grad.end(), 0.0);
    }
}

void Tensor::accumulate_grad(std::span<const double> g) {
    if (g.size() != data.size()) {
        throw DimensionError("gradient length " + std::to_string(g.size()) +
                             " does not match tensor " + shape_str());
    }
    if (grad.size() != data.size()) {
        grad.assign(data.size(), 0.0);
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
        grad[i] += g[i];
    }
}

std::vector<double>& Tensor::grad_ref() {
    if (grad.size() != data.size()) {
        grad.assign(data.size(), 0.0);
    }
    return grad;
}

bool Tensor::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_str() const {
    return shape_to_string(shape);
}

TensorPtr Tensor::clone_detached() const {
    auto t = std::make_shared<Tensor>();
    t->shape = shape;
    t->data = data;
    t->requires_grad = requires_grad;
    t->needs_grad = requires_grad;
    t->is_leaf = true;
    return t;
}

}  // namespace mixtune
