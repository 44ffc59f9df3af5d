#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "jachess/graph.hpp"
#include "jachess/ops.hpp"
#include "testutil.hpp"

using namespace jachess;
namespace tu = testutil;

namespace {

// Collapses any tensor to a scalar with fixed pseudo-random weights so
// gradcheck exercises every output coordinate.
Tensor weighted_scalar(const Tensor& t, Rng& rng) {
    std::vector<double> w(static_cast<std::size_t>(t.size()));
    for (auto& v : w) v = -1.0 + 2.0 * rng.uniform01();
    Shape flat{static_cast<int>(t.size())};
    return ops::dot(ops::reshape(t, flat), Tensor(flat, std::move(w)));
}

}  // namespace

TEST_CASE("forward primitives: hand examples") {
    Graph g;
    const Tensor a = g.leaf({2, 2}, {1, 2, 3, 4});
    const Tensor b = g.leaf({2, 1}, {1, 1});
    const Tensor prod = ops::matmul(a, b);
    CHECK(prod.at(0, 0) == doctest::Approx(3.0));
    CHECK(prod.at(1, 0) == doctest::Approx(7.0));

    const Tensor sm = ops::softmax(g.leaf({2}, {0.0, 0.0}));
    CHECK(sm.at(0) == doctest::Approx(0.5));
    CHECK(sm.at(1) == doctest::Approx(0.5));

    const Tensor r = ops::relu(g.leaf({2}, {-1.0, 2.0}));
    CHECK(r.at(0) == 0.0);
    CHECK(r.at(1) == 2.0);
}

TEST_CASE("forward_primitive dispatcher") {
    Graph g;
    const Tensor x = g.leaf({2, 2}, {1, 2, 3, 4});
    const Tensor y = ops::forward_primitive("square", std::initializer_list<Tensor>{x});
    CHECK(y.at(1, 1) == 16.0);

    CHECK_THROWS_WITH_AS(ops::forward_primitive("frobnicate", std::initializer_list<Tensor>{x}),
                         doctest::Contains("unknown op kind"), ShapeError);

    const Tensor bad = g.leaf({3, 2}, {1, 2, 3, 4, 5, 6});
    CHECK_THROWS_WITH_AS(ops::matmul(bad, bad), doctest::Contains("matrix-multiply"), ShapeError);
}

TEST_CASE("backward: scalar calculus examples") {
    // d/dx (x*x) at 3 -> 6
    {
        Graph g;
        const Tensor x = g.leaf(Shape{}, {3.0});
        const Tensor y = ops::mul(x, x);
        const auto grads = g.backward(y, {x});
        CHECK(grads.at(x).item() == doctest::Approx(6.0));
    }
    // d^2/dx^2 (x^3) at 2 -> 12, by backward over the recorded backward
    {
        Graph g;
        g.enable_gradient_recording();
        const Tensor x = g.leaf(Shape{}, {2.0});
        const Tensor y = ops::mul(ops::square(x), x);
        const auto first = g.backward(y, {x}, /*record=*/true);
        const Tensor dy_dx = first.at(x);
        CHECK(dy_dx.item() == doctest::Approx(12.0));  // 3x^2
        const auto second = g.backward(dy_dx, {x});
        CHECK(second.at(x).item() == doctest::Approx(12.0));  // 6x
    }
}

TEST_CASE("backward: error paths") {
    Graph g;
    const Tensor x = g.leaf({2}, {1.0, 2.0});
    const Tensor y = ops::square(x);
    CHECK_THROWS_WITH_AS(g.backward(y, {x}), doctest::Contains("must be scalar"), ShapeError);

    // Unreachable leaf: zero gradient plus warning flag.
    const Tensor z = g.leaf({2}, {5.0, 5.0});
    const Tensor s = ops::sum(ops::square(x));
    const auto grads = g.backward(s, {x, z});
    CHECK(grads.at(x).at(0) == doctest::Approx(2.0));
    CHECK_FALSE(grads.unreachable(x));
    CHECK(grads.unreachable(z));
    CHECK(grads.at(z).at(0) == 0.0);
    CHECK(grads.at(z).at(1) == 0.0);

    // Recorded backward is opt-in.
    CHECK_THROWS_WITH_AS(g.backward(s, {x}, /*record=*/true), doctest::Contains("enable_gradient_recording"),
                         ShapeError);
}

TEST_CASE("vjp: identity and linear map") {
    {
        Graph g;
        const Tensor x = g.leaf({2}, {0.3, -0.7});
        const Tensor z = ops::reshape(x, {2});
        const Tensor out = vjp(z, Tensor({2}, {1.0, 0.0}), x);
        CHECK(out.at(0) == doctest::Approx(1.0));
        CHECK(out.at(1) == doctest::Approx(0.0));
    }
    {
        Graph g;
        const Tensor x = g.leaf({2}, {0.5, 0.25});
        const Tensor a = g.constant({2, 2}, {1, 2, 3, 4});
        const Tensor z = ops::reshape(ops::matmul(a, ops::reshape(x, {2, 1})), {2});
        const Tensor out = vjp(z, Tensor({2}, {1.0, 1.0}), x);
        CHECK(out.at(0) == doctest::Approx(4.0));  // vᵀA
        CHECK(out.at(1) == doctest::Approx(6.0));

        CHECK_THROWS_AS(vjp(z, Tensor({3}, {1, 1, 1}), x), ShapeError);
    }
}

TEST_CASE("vjp: linearity in v") {
    Rng rng(77);
    Graph g;
    const Tensor x = g.leaf({4}, tu::random_vec(rng, 4, -1, 1));
    const Tensor w = g.constant({4, 4}, tu::random_vec(rng, 16, -1, 1));
    const Tensor z = ops::tanh(ops::reshape(ops::matmul(ops::reshape(x, {1, 4}), w), {4}));

    const auto v1 = tu::random_vec(rng, 4, -1, 1);
    const auto v2 = tu::random_vec(rng, 4, -1, 1);
    const double ca = 0.37, cb = -1.25;
    std::vector<double> mix(4);
    for (int i = 0; i < 4; ++i) mix[static_cast<std::size_t>(i)] = ca * v1[static_cast<std::size_t>(i)] + cb * v2[static_cast<std::size_t>(i)];

    const Tensor lhs = vjp(z, Tensor({4}, mix), x);
    const Tensor g1 = vjp(z, Tensor({4}, v1), x);
    const Tensor g2 = vjp(z, Tensor({4}, v2), x);
    for (int i = 0; i < 4; ++i)
        CHECK(lhs.at(i) == doctest::Approx(ca * g1.at(i) + cb * g2.at(i)).epsilon(1e-10));
}

TEST_CASE("vjp matches row-by-row jacobian assembly on a 3-layer network") {
    Rng rng(1234);
    const int n = 5, m = 4;
    const auto xv = tu::random_vec(rng, n, -1, 1);
    const auto w1 = tu::random_vec(rng, static_cast<std::size_t>(n) * 6, -1, 1);
    const auto w2 = tu::random_vec(rng, 6 * 6, -1, 1);
    const auto w3 = tu::random_vec(rng, 6 * static_cast<std::size_t>(m), -1, 1);

    auto build = [&](Graph& g, Tensor& x_out) {
        const Tensor x = g.leaf({n}, xv);
        const Tensor h1 = ops::tanh(ops::matmul(ops::reshape(x, {1, n}), g.constant({n, 6}, w1)));
        const Tensor h2 = ops::tanh(ops::matmul(h1, g.constant({6, 6}, w2)));
        x_out = x;
        return ops::reshape(ops::matmul(h2, g.constant({6, m}, w3)), {m});
    };

    // Row-by-row assembly with one-hot projections.
    std::vector<double> jac(static_cast<std::size_t>(m) * n);
    for (int r = 0; r < m; ++r) {
        Graph g;
        Tensor x;
        const Tensor z = build(g, x);
        std::vector<double> e(static_cast<std::size_t>(m), 0.0);
        e[static_cast<std::size_t>(r)] = 1.0;
        const Tensor row = vjp(z, Tensor({m}, e), x);
        for (int c = 0; c < n; ++c) jac[static_cast<std::size_t>(r) * n + c] = row.at(c);
    }

    // Random v: vjp must equal vᵀJ of the assembled matrix.
    Graph g;
    Tensor x;
    const Tensor z = build(g, x);
    const auto vv = tu::random_vec(rng, m, -1, 1);
    const Tensor got = vjp(z, Tensor({m}, vv), x);
    for (int c = 0; c < n; ++c) {
        double want = 0.0;
        for (int r = 0; r < m; ++r) want += vv[static_cast<std::size_t>(r)] * jac[static_cast<std::size_t>(r) * n + c];
        CHECK(std::fabs(got.at(c) - want) < 1e-8);
    }
}

TEST_CASE("gradcheck: every primitive against central finite differences") {
    Rng rng(2024);

    struct Case {
        const char* name;
        Shape shape;
        double lo, hi;
        std::function<Tensor(Graph&, const Tensor&, Rng&)> fn;
    };

    const auto cases = std::vector<Case>{
        {"add-broadcast", {3, 4}, -2, 2,
         [](Graph& g, const Tensor& x, Rng& r) {
             return weighted_scalar(ops::add(x, g.constant({1, 4}, tu::random_vec(r, 4, -2, 2))), r);
         }},
        {"sub-colbroadcast", {3, 4}, -2, 2,
         [](Graph& g, const Tensor& x, Rng& r) {
             return weighted_scalar(ops::sub(g.constant({3, 1}, tu::random_vec(r, 3, -2, 2)), x), r);
         }},
        {"mul-same", {3, 4}, -2, 2,
         [](Graph& g, const Tensor& x, Rng& r) {
             return weighted_scalar(ops::mul(x, g.constant({3, 4}, tu::random_vec(r, 12, -2, 2))), r);
         }},
        {"mul-scalar-broadcast", {3, 4}, -2, 2,
         [](Graph&, const Tensor& x, Rng& r) { return weighted_scalar(ops::mul(x, Tensor::scalar(1.7)), r); }},
        {"matmul-left", {3, 4}, -2, 2,
         [](Graph& g, const Tensor& x, Rng& r) {
             return weighted_scalar(ops::matmul(x, g.constant({4, 2}, tu::random_vec(r, 8, -2, 2))), r);
         }},
        {"matmul-right", {4, 2}, -2, 2,
         [](Graph& g, const Tensor& x, Rng& r) {
             return weighted_scalar(ops::matmul(g.constant({3, 4}, tu::random_vec(r, 12, -2, 2)), x), r);
         }},
        {"transpose", {3, 4}, -2, 2,
         [](Graph&, const Tensor& x, Rng& r) { return weighted_scalar(ops::transpose(x), r); }},
        {"reshape", {3, 4}, -2, 2,
         [](Graph&, const Tensor& x, Rng& r) { return weighted_scalar(ops::reshape(x, {2, 6}), r); }},
        {"concat-axis1", {3, 2}, -2, 2,
         [](Graph& g, const Tensor& x, Rng& r) {
             const Tensor other = g.constant({3, 3}, tu::random_vec(r, 9, -2, 2));
             const std::vector<Tensor> parts{x, other, x};
             return weighted_scalar(ops::concat(parts, 1), r);
         }},
        {"slice", {4, 5}, -2, 2,
         [](Graph&, const Tensor& x, Rng& r) { return weighted_scalar(ops::slice(x, 1, 2, 2, 3), r); }},
        {"gather-rows", {5, 3}, -2, 2,
         [](Graph&, const Tensor& x, Rng& r) {
             return weighted_scalar(ops::gather_rows(x, {0, 2, 2, 4}), r);
         }},
        {"relu", {3, 4}, 0.1, 2,
         [](Graph&, const Tensor& x, Rng& r) { return weighted_scalar(ops::relu(x), r); }},
        {"tanh", {3, 4}, -2, 2,
         [](Graph&, const Tensor& x, Rng& r) { return weighted_scalar(ops::tanh(x), r); }},
        {"square", {3, 4}, -2, 2,
         [](Graph&, const Tensor& x, Rng& r) { return weighted_scalar(ops::square(x), r); }},
        {"sqrt", {3, 4}, 0.5, 2.5,
         [](Graph&, const Tensor& x, Rng& r) { return weighted_scalar(ops::sqrt(x), r); }},
        {"reciprocal", {3, 4}, 0.5, 2.5,
         [](Graph&, const Tensor& x, Rng& r) { return weighted_scalar(ops::reciprocal(x), r); }},
        {"neg-scale-addscalar", {3, 4}, -2, 2,
         [](Graph&, const Tensor& x, Rng& r) {
             return weighted_scalar(ops::add_scalar(ops::scale(ops::neg(x), 0.75), 1.5), r);
         }},
        {"softmax-rows", {3, 4}, -2, 2,
         [](Graph&, const Tensor& x, Rng& r) { return weighted_scalar(ops::softmax(x), r); }},
        {"sum", {3, 4}, -2, 2, [](Graph&, const Tensor& x, Rng&) { return ops::sum(x); }},
        {"sum-cols", {3, 4}, -2, 2,
         [](Graph&, const Tensor& x, Rng& r) { return weighted_scalar(ops::sum_cols(x), r); }},
        {"sum-rows", {3, 4}, -2, 2,
         [](Graph&, const Tensor& x, Rng& r) { return weighted_scalar(ops::sum_rows(x), r); }},
        {"cross-entropy", {5}, -2, 2,
         [](Graph&, const Tensor& x, Rng&) { return ops::cross_entropy_logits(x, 2); }},
        {"gelu", {3, 4}, -2, 2, [](Graph&, const Tensor& x, Rng& r) { return weighted_scalar(ops::gelu(x), r); }},
        {"layer-norm", {3, 4}, -2, 2,
         [](Graph&, const Tensor& x, Rng& r) { return weighted_scalar(ops::layer_norm(x), r); }},
        {"mse", {6}, -2, 2,
         [](Graph& g, const Tensor& x, Rng& r) {
             return ops::mse_loss(x, g.constant({6}, tu::random_vec(r, 6, -2, 2)));
         }},
        {"dot", {6}, -2, 2,
         [](Graph& g, const Tensor& x, Rng& r) {
             return ops::dot(x, g.constant({6}, tu::random_vec(r, 6, -2, 2)));
         }},
    };

    for (const auto& c : cases) {
        CAPTURE(c.name);
        const std::size_t n = static_cast<std::size_t>(numel(c.shape));
        const auto x0 = tu::random_vec(rng, n, c.lo, c.hi);
        const std::uint64_t case_seed = rng.next_u64();

        auto eval = [&](const std::vector<double>& xv) {
            Rng local(case_seed);
            Graph g;
            const Tensor x = g.leaf(c.shape, xv);
            return c.fn(g, x, local).item();
        };

        Rng local(case_seed);
        Graph g;
        const Tensor x = g.leaf(c.shape, x0);
        const Tensor out = c.fn(g, x, local);
        const auto analytic = g.backward(out, {x}).at(x).values();
        const auto numeric = tu::fd_grad(eval, x0);
        CHECK(tu::rel_grad_err(analytic, numeric) < 1e-4);
    }
}

TEST_CASE("gradcheck: two-layer network mse vs finite differences") {
    Rng rng(31);
    const auto xv = tu::random_vec(rng, 4, -1, 1);
    const auto w1v = tu::random_vec(rng, 4 * 8, -1, 1);
    const auto w2v = tu::random_vec(rng, 8 * 3, -1, 1);
    const auto tv = tu::random_vec(rng, 3, -1, 1);

    auto loss_for = [&](const std::vector<double>& w1_now) {
        Graph g;
        const Tensor x = g.constant({1, 4}, xv);
        const Tensor w1 = g.leaf({4, 8}, w1_now);
        const Tensor w2 = g.constant({8, 3}, w2v);
        const Tensor pred = ops::reshape(ops::matmul(ops::tanh(ops::matmul(x, w1)), w2), {3});
        return std::pair{ops::mse_loss(pred, g.constant({3}, tv)), w1};
    };

    Graph g;
    const Tensor x = g.constant({1, 4}, xv);
    const Tensor w1 = g.leaf({4, 8}, w1v);
    const Tensor w2 = g.constant({8, 3}, w2v);
    const Tensor pred = ops::reshape(ops::matmul(ops::tanh(ops::matmul(x, w1)), w2), {3});
    const Tensor loss = ops::mse_loss(pred, g.constant({3}, tv));
    const auto analytic = g.backward(loss, {w1}).at(w1).values();

    const auto numeric = tu::fd_grad(
        [&](const std::vector<double>& w) {
            Graph g2;
            const Tensor xx = g2.constant({1, 4}, xv);
            const Tensor ww1 = g2.leaf({4, 8}, w);
            const Tensor ww2 = g2.constant({8, 3}, w2v);
            const Tensor p = ops::reshape(ops::matmul(ops::tanh(ops::matmul(xx, ww1)), ww2), {3});
            return ops::mse_loss(p, g2.constant({3}, tv)).item();
        },
        w1v);
    CHECK(tu::rel_grad_err(analytic, numeric) < 1e-4);
}

TEST_CASE("second order: quadratic form recovers A + A^T") {
    Rng rng(88);
    const int n = 5;
    const auto av = tu::random_vec(rng, static_cast<std::size_t>(n) * n, -1, 1);
    const auto xv = tu::random_vec(rng, n, -1, 1);

    Graph g;
    g.enable_gradient_recording();
    const Tensor x = g.leaf({n}, xv);
    const Tensor a = g.constant({n, n}, av);
    const Tensor xm = ops::reshape(x, {n, 1});
    const Tensor s = ops::reshape(ops::matmul(ops::transpose(xm), ops::matmul(a, xm)), {});
    const Tensor grad = g.backward(s, {x}, /*record=*/true).at(x);

    for (int i = 0; i < n; ++i) {
        std::vector<double> e(static_cast<std::size_t>(n), 0.0);
        e[static_cast<std::size_t>(i)] = 1.0;
        const Tensor gi = ops::dot(grad, Tensor({n}, e));
        const Tensor row = g.backward(gi, {x}).at(x);
        for (int j = 0; j < n; ++j) {
            const double want = av[static_cast<std::size_t>(i) * n + j] + av[static_cast<std::size_t>(j) * n + i];
            CHECK(std::fabs(row.at(j) - want) < 1e-8);
        }
    }
}

TEST_CASE("graph replay determinism") {
    Rng rng(5);
    auto build = [&](const std::vector<double>& xv, const std::vector<double>& wv) {
        Graph g;
        const Tensor x = g.leaf({1, 6}, xv);
        const Tensor w = g.constant({6, 6}, wv);
        const Tensor h = ops::layer_norm(ops::gelu(ops::matmul(x, w)));
        const Tensor out = ops::softmax(ops::reshape(h, {6}));
        return std::pair{out.values(), g.replay_check()};
    };
    const auto xv = tu::random_vec(rng, 6, -2, 2);
    const auto wv = tu::random_vec(rng, 36, -1, 1);
    const auto [v1, replay1] = build(xv, wv);
    const auto [v2, replay2] = build(xv, wv);
    CHECK(replay1 == kNoNode);
    CHECK(replay2 == kNoNode);
    REQUIRE(v1.size() == v2.size());
    CHECK(std::memcmp(v1.data(), v2.data(), v1.size() * sizeof(double)) == 0);
}

TEST_CASE("recorded backward nodes also replay bit-exactly") {
    Graph g;
    g.enable_gradient_recording();
    const Tensor x = g.leaf({3}, {0.2, -0.4, 1.1});
    const Tensor z = ops::tanh(ops::square(x));
    const Tensor s = ops::sum(z);
    const Tensor grad = g.backward(s, {x}, /*record=*/true).at(x);
    const Tensor norm = ops::sum_squares(grad);
    const auto outer = g.backward(norm, {x});
    CHECK(outer.at(x).size() == 3);
    CHECK(g.replay_check() == kNoNode);
}
