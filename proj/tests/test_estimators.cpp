#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "jachess/estimators.hpp"
#include "testutil.hpp"

using namespace jachess;
using namespace jachess::estimators;
namespace tu = testutil;

namespace {

LinearOperator diag_op(std::vector<double> diag) {
    const int n = static_cast<int>(diag.size());
    return {n, [d = std::move(diag)](std::span<const double> v) {
                std::vector<double> out(v.size());
                for (std::size_t i = 0; i < v.size(); ++i) out[i] = d[i] * v[i];
                return out;
            }};
}

LinearOperator dense_op(Matrix m) {
    return {m.rows, [m = std::move(m)](std::span<const double> v) {
                std::vector<double> out(static_cast<std::size_t>(m.rows), 0.0);
                for (int r = 0; r < m.rows; ++r)
                    for (int c = 0; c < m.cols; ++c) out[static_cast<std::size_t>(r)] += m.at(r, c) * v[static_cast<std::size_t>(c)];
                return out;
            }};
}

// z = A x as a graph, for linear-map estimator checks.
struct LinearView {
    Graph graph;
    RepresentationView view;
};

std::unique_ptr<LinearView> linear_view(const Matrix& a, const std::vector<double>& x0) {
    auto lv = std::make_unique<LinearView>();
    lv->graph.enable_gradient_recording();
    const int n = a.cols, m = a.rows;
    const Tensor x = lv->graph.leaf({n}, x0);
    const Tensor am = lv->graph.constant({m, n}, a.data);
    const Tensor z = ops::reshape(ops::matmul(am, ops::reshape(x, {n, 1})), {m});
    lv->view = {z, x};
    return lv;
}

// Small random tanh network z = tanh(tanh(x W1) W2) W3 with leaf x.
struct NetView {
    Graph graph;
    RepresentationView view;
};

std::unique_ptr<NetView> tanh_net_view(int n, int hidden, int m, std::uint64_t seed) {
    auto nv = std::make_unique<NetView>();
    nv->graph.enable_gradient_recording();
    Rng rng(seed);
    const Tensor x = nv->graph.leaf({n}, tu::random_vec(rng, static_cast<std::size_t>(n), -1, 1));
    const Tensor w1 = nv->graph.constant({n, hidden}, tu::random_vec(rng, static_cast<std::size_t>(n) * hidden, -1, 1));
    const Tensor w2 = nv->graph.constant({hidden, m}, tu::random_vec(rng, static_cast<std::size_t>(hidden) * m, -1, 1));
    const Tensor h = ops::tanh(ops::matmul(ops::reshape(x, {1, n}), w1));
    const Tensor z = ops::reshape(ops::tanh(ops::matmul(h, w2)), {m});
    nv->view = {z, x};
    return nv;
}

}  // namespace

TEST_CASE("trace_estimate: identity, diagonal, and fixed projections") {
    {
        auto sampler = ProjectionSampler::gaussian(42, 4);
        const double est = trace_estimate(diag_op({1, 1, 1, 1}), sampler, 20000);
        CHECK(est == doctest::Approx(4.0).epsilon(0.05));
    }
    {
        auto sampler = ProjectionSampler::gaussian(7, 3);
        const double est = trace_estimate(diag_op({1, 2, 3}), sampler, 100000);
        CHECK(std::fabs(est - 6.0) / 6.0 < 0.02);
    }
    {
        // p=1 with v forced to e1 on diag(5,0) -> exactly 5.
        auto op = diag_op({5, 0});
        const std::vector<double> e1{1.0, 0.0};
        const auto av = op.apply(e1);
        double quad = 0.0;
        for (std::size_t i = 0; i < e1.size(); ++i) quad += e1[i] * av[i];
        CHECK(quad == 5.0);
    }
    {
        auto sampler = ProjectionSampler::gaussian(1, 4);
        CHECK_THROWS_AS(trace_estimate(diag_op({1, 1, 1, 1}), sampler, 0), ShapeError);
    }
}

TEST_CASE("trace_estimate: unbiased within 1% on a fixed 8x8 matrix at 1e5 draws") {
    Rng rng(99);
    Matrix a{8, 8, tu::random_vec(rng, 64, -1, 1)};
    for (int i = 0; i < 8; ++i) a.at(i, i) += 3.0;  // keep the trace away from zero
    double true_trace = 0.0;
    for (int i = 0; i < 8; ++i) true_trace += a.at(i, i);

    auto sampler = ProjectionSampler::gaussian(41, 8);
    const double est = trace_estimate(dense_op(a), sampler, 100000);
    CHECK(std::fabs(est - true_trace) / std::fabs(true_trace) < 0.01);
}

TEST_CASE("trace_estimate: empirical variance shrinks with p") {
    Rng rng(13);
    Matrix a{6, 6, tu::random_vec(rng, 36, -1, 1)};
    auto op = dense_op(a);

    auto variance_at = [&](int p, std::uint64_t seed_base) {
        std::vector<double> vals;
        for (int t = 0; t < 40; ++t) {
            auto sampler = ProjectionSampler::gaussian(seed_base + static_cast<std::uint64_t>(t), 6);
            vals.push_back(trace_estimate(op, sampler, p));
        }
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        double var = 0.0;
        for (double v : vals) var += (v - mean) * (v - mean);
        return var / static_cast<double>(vals.size());
    };

    CHECK(variance_at(1000, 500) < variance_at(10, 900));
}

TEST_CASE("normalized-sphere mode underestimates by the dimension factor; correction fixes linear maps") {
    // Isotropic operator: identity of dim 16. Sphere draws give v'Iv = 1.
    {
        auto sampler = ProjectionSampler::sphere(3, 16);
        const double est = trace_estimate(diag_op(std::vector<double>(16, 1.0)), sampler, 200);
        CHECK(est == doctest::Approx(1.0).epsilon(1e-9));  // tr = 16, off by factor n
    }
    // Corrected Jacobian estimate on the linear map A: bias < 5% at p=2000.
    {
        Matrix a{2, 2, {1, 2, 3, 4}};
        auto lv = linear_view(a, {0.3, -0.2});
        auto sampler = ProjectionSampler::sphere(11, 2);
        const auto est = jacobian_frob_sq(lv->view, sampler, 2000, /*apply_correction=*/true);
        CHECK(est.correction_applied);
        CHECK(std::fabs(est.value - 30.0) / 30.0 < 0.05);

        auto raw_sampler = ProjectionSampler::sphere(11, 2);
        const auto raw = jacobian_frob_sq(lv->view, raw_sampler, 2000, /*apply_correction=*/false);
        CHECK_FALSE(raw.correction_applied);
        CHECK(raw.value < est.value);  // uncorrected sits low by ~m
    }
}

TEST_CASE("jacobian_frob_sq: linear map and identity") {
    {
        Matrix a{2, 2, {1, 2, 3, 4}};
        auto lv = linear_view(a, {0.5, 0.25});
        auto sampler = ProjectionSampler::gaussian(17, 2);
        const auto est = jacobian_frob_sq(lv->view, sampler, 2000);
        CHECK(std::fabs(est.value - 30.0) / 30.0 < 0.10);
        CHECK(est.projections == 2000);
        CHECK(est.mode == SampleMode::kGaussianRaw);
    }
    {
        // z = x identity of n = 8: ||J||_F^2 = 8.
        Graph g;
        const Tensor x = g.leaf({8}, std::vector<double>(8, 0.4));
        const Tensor z = ops::reshape(x, {8});
        auto sampler = ProjectionSampler::gaussian(23, 8);
        const auto est = jacobian_frob_sq({z, x}, sampler, 4000);
        CHECK(std::fabs(est.value - 8.0) / 8.0 < 0.10);
    }
}

TEST_CASE("jacobian_frob_sq vs exact oracle on a random network") {
    auto nv = tanh_net_view(6, 10, 5, 2024);
    const Matrix jac = exact_jacobian(nv->view);
    const double exact = frobenius_norm_sq(jac);
    auto sampler = ProjectionSampler::gaussian(5, 5);
    const auto est = jacobian_frob_sq(nv->view, sampler, 1000);
    CHECK(std::fabs(est.value - exact) / exact < 0.10);
}

TEST_CASE("hessian_frob_sq: hand case, zero curvature, and oracle agreement") {
    {
        // f(x) = x1^2 x2 as a one-dimensional "layer": ||H||_F^2 at (1,1) is 12.
        Graph g;
        g.enable_gradient_recording();
        const Tensor x = g.leaf({2}, {1.0, 1.0});
        const Tensor x1 = ops::dot(x, Tensor({2}, {1.0, 0.0}));
        const Tensor x2 = ops::dot(x, Tensor({2}, {0.0, 1.0}));
        const Tensor f = ops::mul(ops::square(x1), x2);
        const Tensor z = ops::reshape(f, {1});
        const RepresentationView view{z, x};

        const Matrix h = exact_hessian(view, 0);
        CHECK(frobenius_norm_sq(h) == doctest::Approx(12.0).epsilon(1e-9));

        auto sampler = ProjectionSampler::gaussian(31, 2);
        const auto est = hessian_frob_sq(view, 0, sampler, 4000);
        CHECK(std::fabs(est.value - 12.0) / 12.0 < 0.10);
    }
    {
        // Linear map: Hessian identically zero.
        Matrix a{3, 4, {1, 0, 2, -1, 0.5, 1, -2, 0, 3, 1, 1, 1}};
        Rng rng(4);
        auto lv = linear_view(a, tu::random_vec(rng, 4, -1, 1));
        auto sampler = ProjectionSampler::gaussian(6, 4);
        const auto est = hessian_frob_sq(lv->view, 1, sampler, 50);
        CHECK(std::fabs(est.value) <= 1e-12);
    }
    {
        // 2-layer tanh network, width <= 16: estimate within 10% of the oracle.
        auto nv = tanh_net_view(8, 16, 6, 77);
        const Matrix h = exact_hessian(nv->view, 2);
        const double exact = frobenius_norm_sq(h);
        auto sampler = ProjectionSampler::gaussian(14, 8);
        const auto est = hessian_frob_sq(nv->view, 2, sampler, 1000);
        CHECK(std::fabs(est.value - exact) / exact < 0.10);
    }
    {
        // Second-order recording is required.
        Graph g;
        const Tensor x = g.leaf({2}, {1.0, 2.0});
        const Tensor z = ops::reshape(ops::square(x), {2});
        auto sampler = ProjectionSampler::gaussian(1, 2);
        CHECK_THROWS_WITH_AS(hessian_frob_sq({z, x}, 0, sampler, 1), doctest::Contains("second-order"),
                             ShapeError);
    }
}

TEST_CASE("exact_jacobian: linear map, identity, vjp cross-check") {
    {
        Matrix a{3, 2, {1, 2, 3, 4, 5, 6}};
        auto lv = linear_view(a, {0.7, -0.1});
        const Matrix jac = exact_jacobian(lv->view);
        REQUIRE(jac.rows == 3);
        REQUIRE(jac.cols == 2);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 2; ++c) CHECK(jac.at(r, c) == doctest::Approx(a.at(r, c)).epsilon(1e-12));
    }
    {
        Graph g;
        const Tensor x = g.leaf({5}, std::vector<double>(5, 0.3));
        const Tensor z = ops::reshape(x, {5});
        const Matrix jac = exact_jacobian({z, x});
        for (int r = 0; r < 5; ++r)
            for (int c = 0; c < 5; ++c) CHECK(jac.at(r, c) == (r == c ? 1.0 : 0.0));
    }
    {
        auto nv = tanh_net_view(6, 9, 4, 55);
        const Matrix jac = exact_jacobian(nv->view);
        for (int r = 0; r < 4; ++r) {
            std::vector<double> e(4, 0.0);
            e[static_cast<std::size_t>(r)] = 1.0;
            const Tensor row = vjp(nv->view.z, Tensor({4}, e), nv->view.x);
            for (int c = 0; c < 6; ++c) CHECK(std::fabs(jac.at(r, c) - row.at(c)) < 1e-10);
        }
    }
}

TEST_CASE("exact_hessian: quadratic form, linear map, symmetry") {
    {
        // x'Ax with symmetric A -> Hessian 2A.
        Rng rng(8);
        const int n = 4;
        Matrix a{n, n, std::vector<double>(static_cast<std::size_t>(n) * n, 0.0)};
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                const double v = -1.0 + 2.0 * rng.uniform01();
                a.at(i, j) = v;
                a.at(j, i) = v;
            }
        Graph g;
        g.enable_gradient_recording();
        const Tensor x = g.leaf({n}, tu::random_vec(rng, n, -1, 1));
        const Tensor am = g.constant({n, n}, a.data);
        const Tensor xm = ops::reshape(x, {n, 1});
        const Tensor s = ops::matmul(ops::transpose(xm), ops::matmul(am, xm));
        const Tensor z = ops::reshape(s, {1});
        const Matrix h = exact_hessian({z, x}, 0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) CHECK(std::fabs(h.at(i, j) - 2.0 * a.at(i, j)) < 1e-8);
    }
    {
        Matrix a{3, 3, {1, 2, 0, 0, 1, 1, 2, 0, 1}};
        auto lv = linear_view(a, {0.2, 0.4, -0.5});
        const Matrix h = exact_hessian(lv->view, 0);
        for (double v : h.data) CHECK(v == 0.0);
    }
    {
        auto nv = tanh_net_view(7, 12, 5, 303);
        const Matrix h = exact_hessian(nv->view, 3);
        for (int i = 0; i < h.rows; ++i)
            for (int j = 0; j < h.cols; ++j) CHECK(std::fabs(h.at(i, j) - h.at(j, i)) < 1e-8);
    }
}

TEST_CASE("oracle size guards") {
    {
        Graph g;
        const Tensor x = g.leaf({400}, std::vector<double>(400, 0.1));
        const Tensor z = ops::reshape(x, {400});
        CHECK_THROWS_WITH_AS(exact_jacobian({z, x}), doctest::Contains("size guard"), RunError);
        CHECK_THROWS_WITH_AS(exact_hessian({z, x}, 0), doctest::Contains("size guard"), RunError);
    }
}

TEST_CASE("norm ordering: spectral <= frobenius <= sqrt(r) * spectral") {
    Rng rng(21);
    for (int trial = 0; trial < 5; ++trial) {
        const int n = 8, m = 10, r = 3;
        // Random rank-r matrix as a product of thin factors.
        Matrix u{m, r, tu::random_vec(rng, static_cast<std::size_t>(m) * r, -1, 1)};
        Matrix v{r, n, tu::random_vec(rng, static_cast<std::size_t>(r) * n, -1, 1)};
        Matrix a{m, n, std::vector<double>(static_cast<std::size_t>(m) * n, 0.0)};
        for (int i = 0; i < m; ++i)
            for (int k = 0; k < r; ++k)
                for (int j = 0; j < n; ++j) a.at(i, j) += u.at(i, k) * v.at(k, j);

        const double frob = std::sqrt(frobenius_norm_sq(a));
        const double spec = spectral_norm(a, 500, 1000 + static_cast<std::uint64_t>(trial));
        CHECK(spec <= frob * (1.0 + 1e-8));
        CHECK(frob <= std::sqrt(static_cast<double>(r)) * spec * (1.0 + 1e-6));
    }
}

TEST_CASE("estimators on a model trace: layer bounds checked") {
    model::ModelConfig c;
    c.vocab_size = 16;
    c.embed_dim = 8;
    c.num_layers = 2;
    c.num_heads = 2;
    c.feedforward_dim = 16;
    c.max_seq_len = 8;
    const auto ckpt = model::init_model(c);
    auto fwd = model::forward(ckpt, std::vector<int>{3, 4, 5, 6}, /*second_order=*/true);
    auto sampler = ProjectionSampler::gaussian(9, 8);
    CHECK_THROWS_WITH_AS(jacobian_frob_sq(fwd.trace, 5, sampler, 1), doctest::Contains("out of range"),
                         ShapeError);

    const auto est = jacobian_frob_sq(fwd.trace, 1, sampler, 200);
    const Matrix jac = exact_jacobian(fwd.trace, 1);
    const double exact = frobenius_norm_sq(jac);
    CHECK(std::fabs(est.value - exact) / exact < 0.25);  // p=200 smoke agreement

    const auto hest = hessian_frob_sq(fwd.trace, 1, 3, sampler, 150);
    CHECK(hest.value >= 0.0);
}
