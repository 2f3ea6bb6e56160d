#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mixtune {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense row-major tensor of doubles with an optional gradient buffer.
///
/// Tensors are handled through shared_ptr so recorded graphs can reference
/// them. Leaves (created directly) own their gradient accumulator; tensors
/// produced by ops are intermediate values and never hold persistent grads.
class Tensor {
public:
    std::vector<std::int64_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized lazily on first accumulation

    bool requires_grad = false;
    bool is_leaf = true;
    /// True when this tensor lies on a recorded path to a requires_grad leaf.
    bool needs_grad = false;

    static TensorPtr create(std::vector<std::int64_t> shape, bool requires_grad = false);
    static TensorPtr from_data(std::vector<std::int64_t> shape, std::vector<double> values,
                               bool requires_grad = false);
    static TensorPtr full(std::vector<std::int64_t> shape, double value, bool requires_grad = false);
    static TensorPtr zeros(std::vector<std::int64_t> shape, bool requires_grad = false);
    static TensorPtr ones(std::vector<std::int64_t> shape, bool requires_grad = false);
    static TensorPtr scalar(double value, bool requires_grad = false);

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t rows() const;
    std::int64_t cols() const;
    bool is_scalar() const { return data.size() == 1; }

    double& at(std::int64_t r, std::int64_t c);
    double at(std::int64_t r, std::int64_t c) const;

    void set_requires_grad(bool value);
    void zero_grad();
    void accumulate_grad(std::span<const double> g);

    /// Gradient buffer, materializing zeros if absent.
    std::vector<double>& grad_ref();

    bool all_finite() const;
    std::string shape_str() const;  // e.g. "[3x4]"

    /// Deep copy of values and flags; the copy is a fresh leaf with no grad.
    TensorPtr clone_detached() const;
};

std::string shape_to_string(std::span<const std::int64_t> shape);
std::int64_t shape_numel(std::span<const std::int64_t> shape);

}  // namespace mixtune
