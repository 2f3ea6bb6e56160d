#pragma once

#include <functional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mixtune/tensor.hpp"

namespace mixtune {

/// Reverse-mode tape. Ops executed while a Graph is alive on the current
/// thread record themselves in execution order (which is a topological order);
/// backward() replays the tape in exact reverse.
///
/// A Graph is meant to live for a single forward pass: construct, run the
/// forward expression, call backward, destruct. Leaf gradients accumulate
/// across backward calls and across graphs until explicitly zeroed.
///
/// Backward uses per-call adjoint buffers, so calling backward twice on the
/// same graph adds the same leaf gradients twice (linearity), and tensors
/// recorded in one graph are never mutated by another.
class Graph {
public:
    using Adjoints = std::unordered_map<const Tensor*, std::vector<double>>;

    struct Node {
        TensorPtr output;
        std::vector<TensorPtr> inputs;
        std::function<void(Adjoints&)> pull;  // propagate output adjoint into inputs
    };

    Graph();
    ~Graph();
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Innermost live graph on this thread, or nullptr outside any graph
    /// scope (ops then run forward-only and record nothing).
    static Graph* current();

    void record(Node node);
    std::size_t node_count() const { return nodes_.size(); }
    bool recorded(const Tensor* t) const { return outputs_.contains(t); }

    /// Seeds d(loss)/d(loss) = 1 and accumulates adjoints into every
    /// requires_grad leaf reachable from `loss`.
    void backward(const TensorPtr& loss);

    /// Adjoint accumulator for `t`, zero-initialized on first touch.
    static std::vector<double>& adjoint(Adjoints& adj, const TensorPtr& t);

private:
    std::vector<Node> nodes_;
    std::unordered_set<const Tensor*> outputs_;
    std::vector<TensorPtr> leaves_;
    std::unordered_set<const Tensor*> leaf_set_;
    Graph* prev_ = nullptr;
};

/// Suspends recording on this thread for its lifetime; ops inside run
/// forward-only even if an outer Graph is live.
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Graph* saved_;
};

enum class EwiseKind { add, sub, mul };
enum class ActKind { relu, tanh };

/// result[NxM] = a[NxK] . b[KxM]
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);

/// Element-wise add/sub/mul of same-shape tensors.
TensorPtr ewise(const TensorPtr& a, const TensorPtr& b, EwiseKind kind);
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);

/// out = c * x
TensorPtr scale(const TensorPtr& x, double c);

/// Element-wise nonlinearity. relu'(0) is taken as 0.
TensorPtr activation(const TensorPtr& x, ActKind kind);
TensorPtr relu(const TensorPtr& x);
TensorPtr tanh_op(const TensorPtr& x);

/// Adds a length-M bias row to every row of x[NxM].
TensorPtr add_bias(const TensorPtr& x, const TensorPtr& bias);

/// Mean negative log-softmax of the true class, max-stabilized.
TensorPtr loss_ce(const TensorPtr& logits, const std::vector<int>& labels);

/// Mean squared error against a plain target vector.
TensorPtr loss_mse(const TensorPtr& pred, const std::vector<double>& target);

/// Sum of squared entries; d/dx = 2x.
TensorPtr frob_sq(const TensorPtr& x);

/// Runs reverse-mode accumulation from a scalar loss recorded on the current
/// graph. Leaf .grad buffers accumulate (call zero_grad between steps).
void backward(const TensorPtr& loss);

}  // namespace mixtune
