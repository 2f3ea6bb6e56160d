#include "mixtune/ops.hpp"

#include <algorithm>
#include <cmath>

#include "mixtune/errors.hpp"

namespace mixtune {

namespace {

thread_local Graph* g_current_graph = nullptr;

bool any_needs_grad(const std::vector<TensorPtr>& inputs) {
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const TensorPtr& t) { return t->needs_grad; });
}

/// Marks `out` as an op result and records the pull closure when a graph is
/// live and some input is on a gradient path.
void finish_op(const TensorPtr& out, std::vector<TensorPtr> inputs,
               std::function<void(Graph::Adjoints&)> pull) {
    out->is_leaf = false;
    Graph* g = Graph::current();
    if (g != nullptr && any_needs_grad(inputs)) {
        out->needs_grad = true;
        g->record(Graph::Node{out, std::move(inputs), std::move(pull)});
    } else {
        out->needs_grad = false;
    }
}

void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape != b->shape) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a->shape_str() + " vs " +
                             b->shape_str());
    }
}

}  // namespace

Graph::Graph() : prev_(g_current_graph) {
    g_current_graph = this;
}

Graph::~Graph() {
    g_current_graph = prev_;
}

Graph* Graph::current() {
    return g_current_graph;
}

NoGradScope::NoGradScope() : saved_(g_current_graph) {
    g_current_graph = nullptr;
}

NoGradScope::~NoGradScope() {
    g_current_graph = saved_;
}

void Graph::record(Node node) {
    outputs_.insert(node.output.get());
    for (const TensorPtr& in : node.inputs) {
        if (in->is_leaf && in->requires_grad && !leaf_set_.contains(in.get())) {
            leaf_set_.insert(in.get());
            leaves_.push_back(in);
        }
    }
    nodes_.push_back(std::move(node));
}

std::vector<double>& Graph::adjoint(Adjoints& adj, const TensorPtr& t) {
    auto [it, inserted] = adj.try_emplace(t.get());
    if (inserted) {
        it->second.assign(t->data.size(), 0.0);
    }
    return it->second;
}

void Graph::backward(const TensorPtr& loss) {
    if (!loss->is_scalar()) {
        throw InputError("backward: loss must be a scalar, got " + loss->shape_str());
    }
    Adjoints adj;
    adj[loss.get()] = {1.0};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (adj.contains(it->output.get())) {
            it->pull(adj);
        }
    }
    for (const TensorPtr& leaf : leaves_) {
        auto found = adj.find(leaf.get());
        if (found != adj.end()) {
            leaf->accumulate_grad(found->second);
        }
    }
    // A requires_grad scalar used directly as the loss (degenerate graph).
    if (loss->is_leaf && loss->requires_grad && !leaf_set_.contains(loss.get())) {
        loss->accumulate_grad(adj[loss.get()]);
    }
}

void backward(const TensorPtr& loss) {
    Graph* g = Graph::current();
    if (g == nullptr) {
        throw InputError("backward: no graph is recording on this thread");
    }
    g->backward(loss);
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2) {
        throw DimensionError("matmul: expected matrices, got " + a->shape_str() + " and " +
                             b->shape_str());
    }
    const std::int64_t n = a->shape[0], k = a->shape[1], m = b->shape[1];
    if (k != b->shape[0]) {
        throw DimensionError("matmul: inner dimensions disagree, " + a->shape_str() + " vs " +
                             b->shape_str());
    }
    auto out = Tensor::create({n, m});
    const double* pa = a->data.data();
    const double* pb = b->data.data();
    double* po = out->data.data();
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            if (av == 0.0) {
                continue;
            }
            for (std::int64_t j = 0; j < m; ++j) {
                po[i * m + j] += av * pb[kk * m + j];
            }
        }
    }
    finish_op(out, {a, b}, [a, b, out, n, k, m](Graph::Adjoints& adj) {
        const std::vector<double>& go = adj.at(out.get());
        if (a->needs_grad) {
            std::vector<double>& ga = Graph::adjoint(adj, a);
            for (std::int64_t i = 0; i < n; ++i) {
                for (std::int64_t kk = 0; kk < k; ++kk) {
                    double acc = 0.0;
                    for (std::int64_t j = 0; j < m; ++j) {
                        acc += go[i * m + j] * b->data[kk * m + j];
                    }
                    ga[i * k + kk] += acc;
                }
            }
        }
        if (b->needs_grad) {
            std::vector<double>& gb = Graph::adjoint(adj, b);
            for (std::int64_t kk = 0; kk < k; ++kk) {
                for (std::int64_t j = 0; j < m; ++j) {
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < n; ++i) {
                        acc += a->data[i * k + kk] * go[i * m + j];
                    }
                    gb[kk * m + j] += acc;
                }
            }
        }
    });
    return out;
}

TensorPtr ewise(const TensorPtr& a, const TensorPtr& b, EwiseKind kind) {
    check_same_shape(a, b, "ewise");
    auto out = Tensor::create(a->shape);
    const std::size_t n = a->data.size();
    switch (kind) {
        case EwiseKind::add:
            for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i];
            break;
        case EwiseKind::sub:
            for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] - b->data[i];
            break;
        case EwiseKind::mul:
            for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[i];
            break;
    }
    finish_op(out, {a, b}, [a, b, out, kind, n](Graph::Adjoints& adj) {
        const std::vector<double>& go = adj.at(out.get());
        if (a->needs_grad) {
            std::vector<double>& ga = Graph::adjoint(adj, a);
            switch (kind) {
                case EwiseKind::add:
                case EwiseKind::sub:
                    for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
                    break;
                case EwiseKind::mul:
                    for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * b->data[i];
                    break;
            }
        }
        if (b->needs_grad) {
            std::vector<double>& gb = Graph::adjoint(adj, b);
            switch (kind) {
                case EwiseKind::add:
                    for (std::size_t i = 0; i < n; ++i) gb[i] += go[i];
                    break;
                case EwiseKind::sub:
                    for (std::size_t i = 0; i < n; ++i) gb[i] -= go[i];
                    break;
                case EwiseKind::mul:
                    for (std::size_t i = 0; i < n; ++i) gb[i] += go[i] * a->data[i];
                    break;
            }
        }
    });
    return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) { return ewise(a, b, EwiseKind::add); }
TensorPtr sub(const TensorPtr& a, const TensorPtr& b) { return ewise(a, b, EwiseKind::sub); }
TensorPtr mul(const TensorPtr& a, const TensorPtr& b) { return ewise(a, b, EwiseKind::mul); }

TensorPtr scale(const TensorPtr& x, double c) {
    auto out = Tensor::create(x->shape);
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        out->data[i] = c * x->data[i];
    }
    finish_op(out, {x}, [x, out, c](Graph::Adjoints& adj) {
        const std::vector<double>& go = adj.at(out.get());
        if (x->needs_grad) {
            std::vector<double>& gx = Graph::adjoint(adj, x);
            for (std::size_t i = 0; i < go.size(); ++i) {
                gx[i] += c * go[i];
            }
        }
    });
    return out;
}

TensorPtr activation(const TensorPtr& x, ActKind kind) {
    auto out = Tensor::create(x->shape);
    const std::size_t n = x->data.size();
    if (kind == ActKind::relu) {
        for (std::size_t i = 0; i < n; ++i) {
            out->data[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            out->data[i] = std::tanh(x->data[i]);
        }
    }
    finish_op(out, {x}, [x, out, kind, n](Graph::Adjoints& adj) {
        const std::vector<double>& go = adj.at(out.get());
        if (!x->needs_grad) {
            return;
        }
        std::vector<double>& gx = Graph::adjoint(adj, x);
        if (kind == ActKind::relu) {
            for (std::size_t i = 0; i < n; ++i) {
                if (x->data[i] > 0.0) {
                    gx[i] += go[i];
                }
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                const double y = out->data[i];
                gx[i] += go[i] * (1.0 - y * y);
            }
        }
    });
    return out;
}

TensorPtr relu(const TensorPtr& x) { return activation(x, ActKind::relu); }
TensorPtr tanh_op(const TensorPtr& x) { return activation(x, ActKind::tanh); }

TensorPtr add_bias(const TensorPtr& x, const TensorPtr& bias) {
    const std::int64_t n = x->rows(), m = x->cols();
    if (bias->shape.size() != 1 || bias->shape[0] != m) {
        throw DimensionError("add_bias: bias " + bias->shape_str() + " does not match " +
                             x->shape_str());
    }
    auto out = Tensor::create(x->shape);
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < m; ++j) {
            out->data[static_cast<std::size_t>(i * m + j)] =
                x->data[static_cast<std::size_t>(i * m + j)] +
                bias->data[static_cast<std::size_t>(j)];
        }
    }
    finish_op(out, {x, bias}, [x, bias, out, n, m](Graph::Adjoints& adj) {
        const std::vector<double>& go = adj.at(out.get());
        if (x->needs_grad) {
            std::vector<double>& gx = Graph::adjoint(adj, x);
            for (std::size_t i = 0; i < go.size(); ++i) {
                gx[i] += go[i];
            }
        }
        if (bias->needs_grad) {
            std::vector<double>& gb = Graph::adjoint(adj, bias);
            for (std::int64_t i = 0; i < n; ++i) {
                for (std::int64_t j = 0; j < m; ++j) {
                    gb[static_cast<std::size_t>(j)] += go[static_cast<std::size_t>(i * m + j)];
                }
            }
        }
    });
    return out;
}

TensorPtr loss_ce(const TensorPtr& logits, const std::vector<int>& labels) {
    const std::int64_t b = logits->rows(), c = logits->cols();
    if (static_cast<std::int64_t>(labels.size()) != b) {
        throw InputError("loss_ce: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(b));
    }
    for (const int y : labels) {
        if (y < 0 || y >= c) {
            throw InputError("loss_ce: label " + std::to_string(y) + " outside [0, " +
                             std::to_string(c) + ")");
        }
    }
    // Stabilized log-softmax; keep the probabilities for the backward pass.
    auto probs = std::make_shared<std::vector<double>>(logits->data.size());
    double total = 0.0;
    for (std::int64_t i = 0; i < b; ++i) {
        const double* row = logits->data.data() + i * c;
        double maxv = row[0];
        for (std::int64_t j = 1; j < c; ++j) {
            maxv = std::max(maxv, row[j]);
        }
        double sum = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            sum += std::exp(row[j] - maxv);
        }
        const double lse = maxv + std::log(sum);
        total += lse - row[labels[static_cast<std::size_t>(i)]];
        for (std::int64_t j = 0; j < c; ++j) {
            (*probs)[static_cast<std::size_t>(i * c + j)] = std::exp(row[j] - lse);
        }
    }
    auto out = Tensor::scalar(total / static_cast<double>(b));
    finish_op(out, {logits}, [logits, out, probs, labels, b, c](Graph::Adjoints& adj) {
        const double go = adj.at(out.get())[0];
        if (!logits->needs_grad) {
            return;
        }
        std::vector<double>& gl = Graph::adjoint(adj, logits);
        const double inv_b = 1.0 / static_cast<double>(b);
        for (std::int64_t i = 0; i < b; ++i) {
            for (std::int64_t j = 0; j < c; ++j) {
                double p = (*probs)[static_cast<std::size_t>(i * c + j)];
                if (j == labels[static_cast<std::size_t>(i)]) {
                    p -= 1.0;
                }
                gl[static_cast<std::size_t>(i * c + j)] += go * p * inv_b;
            }
        }
    });
    return out;
}

TensorPtr loss_mse(const TensorPtr& pred, const std::vector<double>& target) {
    const std::size_t n = pred->data.size();
    if (target.size() != n) {
        throw InputError("loss_mse: " + std::to_string(target.size()) +
                         " targets for prediction of size " + std::to_string(n));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pred->data[i] - target[i];
        total += d * d;
    }
    auto out = Tensor::scalar(total / static_cast<double>(n));
    finish_op(out, {pred}, [pred, out, target, n](Graph::Adjoints& adj) {
        const double go = adj.at(out.get())[0];
        if (!pred->needs_grad) {
            return;
        }
        std::vector<double>& gp = Graph::adjoint(adj, pred);
        const double k = 2.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            gp[i] += go * k * (pred->data[i] - target[i]);
        }
    });
    return out;
}

TensorPtr frob_sq(const TensorPtr& x) {
    double total = 0.0;
    for (const double v : x->data) {
        total += v * v;
    }
    auto out = Tensor::scalar(total);
    finish_op(out, {x}, [x, out](Graph::Adjoints& adj) {
        const double go = adj.at(out.get())[0];
        if (!x->needs_grad) {
            return;
        }
        std::vector<double>& gx = Graph::adjoint(adj, x);
        for (std::size_t i = 0; i < x->data.size(); ++i) {
            gx[i] += go * 2.0 * x->data[i];
        }
    });
    return out;
}

}  // namespace mixtune
