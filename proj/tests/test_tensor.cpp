#include <doctest.h>

#include <cmath>
#include <vector>

#include "mixtune/errors.hpp"
#include "mixtune/ops.hpp"
#include "mixtune/rng.hpp"
#include "mixtune/tensor.hpp"
#include "support/oracles.hpp"

using namespace mixtune;

namespace {

TensorPtr random_tensor(std::vector<std::int64_t> shape, Rng& rng, bool requires_grad = true,
                        double lo = -2.0, double hi = 2.0) {
    auto t = Tensor::create(std::move(shape), requires_grad);
    for (double& v : t->data) {
        v = rng.uniform(lo, hi);
    }
    return t;
}

}  // namespace

TEST_CASE("tensor construction and invariants") {
    auto t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t->size() == 6);
    CHECK(t->rows() == 2);
    CHECK(t->cols() == 3);
    CHECK(t->at(1, 2) == 6.0);
    CHECK(t->all_finite());
    CHECK(t->shape_str() == "[2x3]");

    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), DimensionError);
}

TEST_CASE("matmul identity and annihilator") {
    auto eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    auto m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    auto out = matmul(eye, m);
    CHECK(out->data == std::vector<double>{1, 2, 3, 4});

    auto zero = Tensor::zeros({2, 2});
    auto out2 = matmul(eye, zero);
    for (const double v : out2->data) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(11);
    auto a = random_tensor({3, 4}, rng, false);
    auto b = random_tensor({4, 2}, rng, false);
    auto out = matmul(a, b);
    const std::vector<double> expected = testsupport::matmul_oracle(a->data, b->data, 3, 4, 2);
    for (std::size_t i = 0; i < expected.size(); ++i) {
        CHECK(out->data[i] == doctest::Approx(expected[i]).epsilon(1e-12));
    }
}

TEST_CASE("matmul shape mismatch names both shapes") {
    auto a = Tensor::zeros({3, 4});
    auto b = Tensor::zeros({5, 2});
    try {
        matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[3x4]") != std::string::npos);
        CHECK(msg.find("[5x2]") != std::string::npos);
    }
}

TEST_CASE("ewise basics") {
    auto a = Tensor::from_data({2}, {2, 3});
    auto b = Tensor::from_data({2}, {0, 1});
    CHECK(mul(a, b)->data == std::vector<double>{0, 3});

    auto zeros = Tensor::zeros({2});
    CHECK(add(a, zeros)->data == a->data);

    auto bad = Tensor::zeros({3});
    CHECK_THROWS_AS(add(a, bad), DimensionError);
}

TEST_CASE("ewise gradients match central differences") {
    Rng rng(5);
    for (const EwiseKind kind : {EwiseKind::sub, EwiseKind::mul}) {
        auto a = random_tensor({2, 3}, rng);
        auto b = random_tensor({2, 3}, rng);
        auto weights = random_tensor({2, 3}, rng, false);

        const auto loss_fn = [&]() {
            NoGradScope no_grad;
            return frob_sq(mul(ewise(a, b, kind), weights))->data[0];
        };

        a->zero_grad();
        b->zero_grad();
        {
            Graph graph;
            auto loss = frob_sq(mul(ewise(a, b, kind), weights));
            graph.backward(loss);
        }
        const auto fd_a = testsupport::fd_gradient(loss_fn, a);
        const auto fd_b = testsupport::fd_gradient(loss_fn, b);
        CHECK(testsupport::first_grad_mismatch(a->grad, fd_a, 1e-6) == -1);
        CHECK(testsupport::first_grad_mismatch(b->grad, fd_b, 1e-6) == -1);
    }
}

TEST_CASE("activations") {
    auto x = Tensor::from_data({3}, {-1, 0, 2});
    CHECK(relu(x)->data == std::vector<double>{0, 0, 2});
    CHECK(tanh_op(Tensor::scalar(0.0))->data[0] == 0.0);

    // tanh' == 1 - tanh^2 pointwise
    Rng rng(7);
    auto v = random_tensor({4}, rng);
    v->zero_grad();
    {
        Graph graph;
        auto loss = frob_sq(tanh_op(v));  // d/dv = 2*tanh(v)*(1-tanh^2(v))
        graph.backward(loss);
    }
    for (std::size_t i = 0; i < v->data.size(); ++i) {
        const double th = std::tanh(v->data[i]);
        CHECK(v->grad[i] == doctest::Approx(2.0 * th * (1.0 - th * th)).epsilon(1e-12));
    }
}

TEST_CASE("relu subgradient at zero is zero") {
    auto x = Tensor::from_data({1}, {0.0}, true);
    x->zero_grad();
    {
        Graph graph;
        auto loss = frob_sq(relu(x));
        graph.backward(loss);
    }
    CHECK(x->grad[0] == 0.0);
}

TEST_CASE("cross-entropy on uniform logits is ln C") {
    auto logits = Tensor::zeros({2, 4});
    auto loss = loss_ce(logits, {1, 3});
    CHECK(loss->data[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross-entropy saturates at confident correct prediction") {
    auto logits = Tensor::from_data({1, 3}, {1000.0, 0.0, 0.0});
    auto loss = loss_ce(logits, {0});
    CHECK(loss->data[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::isfinite(loss->data[0]));
}

TEST_CASE("cross-entropy rejects out-of-range labels") {
    auto logits = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(loss_ce(logits, {0, 3}), InputError);
    CHECK_THROWS_AS(loss_ce(logits, {-1, 0}), InputError);
}

TEST_CASE("cross-entropy gradient equals softmax minus one-hot") {
    Rng rng(13);
    auto logits = random_tensor({3, 4}, rng);
    const std::vector<int> labels = {2, 0, 1};
    logits->zero_grad();
    {
        Graph graph;
        auto loss = loss_ce(logits, labels);
        graph.backward(loss);
    }
    for (std::int64_t i = 0; i < 3; ++i) {
        double maxv = logits->at(i, 0);
        for (std::int64_t j = 1; j < 4; ++j) {
            maxv = std::max(maxv, logits->at(i, j));
        }
        double sum = 0.0;
        for (std::int64_t j = 0; j < 4; ++j) {
            sum += std::exp(logits->at(i, j) - maxv);
        }
        for (std::int64_t j = 0; j < 4; ++j) {
            const double p = std::exp(logits->at(i, j) - maxv) / sum;
            const double expected =
                (p - (labels[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0)) / 3.0;
            CHECK(logits->grad[static_cast<std::size_t>(i * 4 + j)] ==
                  doctest::Approx(expected).epsilon(1e-10));
        }
    }
}

TEST_CASE("mse basics and gradient") {
    auto pred = Tensor::from_data({2}, {1.0, -1.0});
    CHECK(loss_mse(pred, {1.0, -1.0})->data[0] == 0.0);

    auto single = Tensor::from_data({1}, {2.0});
    CHECK(loss_mse(single, {0.0})->data[0] == 4.0);

    CHECK_THROWS_AS(loss_mse(pred, {1.0}), InputError);

    Rng rng(3);
    auto p = random_tensor({5}, rng);
    const std::vector<double> target = {0.3, -0.2, 1.5, 0.0, -1.1};
    p->zero_grad();
    {
        Graph graph;
        auto loss = loss_mse(p, target);
        graph.backward(loss);
    }
    const auto fd = testsupport::fd_gradient(
        [&]() {
            NoGradScope no_grad;
            return loss_mse(p, target)->data[0];
        },
        p);
    CHECK(testsupport::first_grad_mismatch(p->grad, fd, 1e-6) == -1);
}

TEST_CASE("frob_sq") {
    CHECK(frob_sq(Tensor::zeros({3, 3}))->data[0] == 0.0);
    CHECK(frob_sq(Tensor::from_data({1, 2}, {3, 4}))->data[0] == 25.0);

    auto w = Tensor::from_data({2}, {1.5, -2.0}, true);
    w->zero_grad();
    {
        Graph graph;
        auto loss = frob_sq(w);
        graph.backward(loss);
    }
    CHECK(w->grad == std::vector<double>{3.0, -4.0});
}

TEST_CASE("backward requires a scalar") {
    auto w = Tensor::from_data({2}, {1.0, 2.0}, true);
    Graph graph;
    auto y = add(w, w);
    CHECK_THROWS_AS(graph.backward(y), InputError);
}

TEST_CASE("backward without a live graph is an error") {
    auto loss = Tensor::scalar(1.0);
    CHECK_THROWS_AS(backward(loss), InputError);
}

TEST_CASE("loss constant w.r.t. a leaf leaves its grad at zero") {
    auto w = Tensor::from_data({2}, {1.0, 2.0}, true);
    auto other = Tensor::from_data({2}, {3.0, 4.0}, true);
    w->zero_grad();
    other->zero_grad();
    {
        Graph graph;
        auto loss = frob_sq(other);
        graph.backward(loss);
    }
    CHECK(w->grad == std::vector<double>{0.0, 0.0});
    CHECK(other->grad == std::vector<double>{6.0, 8.0});
}

TEST_CASE("repeated backward accumulates") {
    auto w = Tensor::from_data({2}, {1.0, -2.0}, true);
    w->zero_grad();
    {
        Graph graph;
        auto loss = frob_sq(w);
        graph.backward(loss);
        graph.backward(loss);
    }
    CHECK(w->grad == std::vector<double>{4.0, -8.0});
}

TEST_CASE("backward of a sum equals the sum of backwards") {
    Rng rng(21);
    auto w = random_tensor({3, 2}, rng);
    auto x = random_tensor({2, 2}, rng, false);

    w->zero_grad();
    {
        Graph graph;
        auto combined = add(frob_sq(matmul(w, x)), frob_sq(w));
        graph.backward(combined);
    }
    const std::vector<double> sum_grad = w->grad;

    w->zero_grad();
    {
        Graph graph;
        auto l1 = frob_sq(matmul(w, x));
        graph.backward(l1);
    }
    {
        Graph graph;
        auto l2 = frob_sq(w);
        graph.backward(l2);
    }
    for (std::size_t i = 0; i < sum_grad.size(); ++i) {
        CHECK(w->grad[i] == doctest::Approx(sum_grad[i]).epsilon(1e-12));
    }
}

TEST_CASE("forward is bit-identical across repeated runs") {
    Rng rng(33);
    auto a = random_tensor({4, 5}, rng, false);
    auto b = random_tensor({5, 3}, rng, false);
    auto first = matmul(a, b);
    auto second = matmul(a, b);
    CHECK(testsupport::bits_checksum(first->data) == testsupport::bits_checksum(second->data));
}

TEST_CASE("gradcheck property over random op chains") {
    // For random inputs in [-2,2], autodiff vs central differences at h=1e-5
    // satisfies the mixed tolerance (rel 1e-4 / abs 1e-6 below 1e-3).
    for (std::uint64_t trial = 0; trial < 12; ++trial) {
        Rng rng(derive_seed(100, "gradcheck", trial));
        auto a = random_tensor({3, 4}, rng);
        auto b = random_tensor({4, 2}, rng);
        auto c = random_tensor({3, 2}, rng);
        const std::vector<double> target = {0.1, -0.4, 0.9, 0.0, 1.2, -0.7};

        const auto loss_fn = [&]() {
            NoGradScope no_grad;
            auto h = tanh_op(matmul(a, b));
            return loss_mse(mul(h, c), target)->data[0];
        };

        for (const auto& t : {a, b, c}) {
            t->zero_grad();
        }
        {
            Graph graph;
            auto h = tanh_op(matmul(a, b));
            auto loss = loss_mse(mul(h, c), target);
            graph.backward(loss);
        }
        for (const auto& t : {a, b, c}) {
            const auto fd = testsupport::fd_gradient(loss_fn, t);
            CAPTURE(trial);
            CHECK(testsupport::first_grad_mismatch(t->grad, fd) == -1);
        }
    }
}

TEST_CASE("ops outside a graph do not record") {
    auto a = Tensor::from_data({2}, {1.0, 2.0}, true);
    auto out = add(a, a);
    CHECK_FALSE(out->needs_grad);

    Graph graph;
    auto recorded = add(a, a);
    CHECK(recorded->needs_grad);
    CHECK(graph.node_count() == 1);
    {
        NoGradScope no_grad;
        auto silent = add(a, a);
        CHECK_FALSE(silent->needs_grad);
    }
    CHECK(graph.node_count() == 1);
}
