#include "jachess/estimators.hpp"

#include <cmath>

namespace jachess::estimators {

std::vector<double> ProjectionSampler::draw() {
    ++draws_;
    std::vector<double> v = rng_.gaussian_vec(static_cast<std::size_t>(dim_));
    if (mode_ == SampleMode::kNormalizedSphere) {
        double norm_sq = 0.0;
        for (double c : v) norm_sq += c * c;
        const double inv = 1.0 / std::sqrt(norm_sq);
        for (double& c : v) c *= inv;
    }
    return v;
}

double trace_estimate(const LinearOperator& op, ProjectionSampler& sampler, int p) {
    if (p < 1) throw ShapeError("trace_estimate: projection count p must be >= 1, got " + std::to_string(p));
    if (sampler.dimension() != op.dim)
        throw ShapeError("trace_estimate: sampler dimension " + std::to_string(sampler.dimension()) +
                         " does not match operator dimension " + std::to_string(op.dim));
    double acc = 0.0;
    for (int i = 0; i < p; ++i) {
        const std::vector<double> v = sampler.draw();
        const std::vector<double> av = op.apply(v);
        if (av.size() != v.size()) throw ShapeError("trace_estimate: operator changed vector dimension");
        double quad = 0.0;
        for (std::size_t j = 0; j < v.size(); ++j) quad += v[j] * av[j];
        acc += quad;
    }
    return acc / static_cast<double>(p);
}

namespace {

void check_view(const RepresentationView& view, const char* who) {
    if (!view.z.defined() || !view.x.defined()) throw ShapeError(std::string(who) + ": undefined view");
    if (view.z.rank() != 1)
        throw ShapeError(std::string(who) + ": representation must be rank-1, got " + shape_str(view.z.shape()));
    if (!view.z.attached() || !view.x.attached() || view.z.graph() != view.x.graph())
        throw ShapeError(std::string(who) + ": representation and leaf must share one graph");
}

double sum_sq(const std::vector<double>& v) {
    double acc = 0.0;
    for (double c : v) acc += c * c;
    return acc;
}

Shape flat_shape(const Tensor& t) { return Shape{static_cast<int>(t.size())}; }

}  // namespace

RepresentationView layer_view(const model::ForwardTrace& trace, int layer) {
    if (layer < 0 || layer >= trace.num_layers())
        throw ShapeError("layer index " + std::to_string(layer) + " out of range for " +
                         std::to_string(trace.num_layers()) + " layers");
    return {trace.layers[static_cast<std::size_t>(layer)], trace.x};
}

RepresentationView logits_view(const model::ForwardTrace& trace) { return {trace.logits, trace.x}; }

NormEstimate jacobian_frob_sq(const RepresentationView& view, ProjectionSampler& sampler, int p,
                              bool apply_correction) {
    check_view(view, "jacobian_frob_sq");
    if (p < 1) throw ShapeError("jacobian_frob_sq: projection count p must be >= 1");
    const int m = view.z.shape()[0];
    sampler.set_dimension(m);
    double acc = 0.0;
    for (int i = 0; i < p; ++i) {
        const Tensor g = vjp(view.z, Tensor({m}, sampler.draw()), view.x, /*record=*/false);
        acc += sum_sq(g.values());
    }
    NormEstimate est;
    est.value = acc / static_cast<double>(p);
    est.projections = p;
    est.mode = sampler.mode();
    if (sampler.mode() == SampleMode::kNormalizedSphere && apply_correction) {
        est.value *= static_cast<double>(m);
        est.correction_applied = true;
    }
    return est;
}

NormEstimate jacobian_frob_sq(const model::ForwardTrace& trace, int layer, ProjectionSampler& sampler, int p,
                              bool apply_correction) {
    return jacobian_frob_sq(layer_view(trace, layer), sampler, p, apply_correction);
}

NormEstimate hessian_frob_sq(const RepresentationView& view, int dim, ProjectionSampler& sampler, int p,
                             bool apply_correction) {
    check_view(view, "hessian_frob_sq");
    if (p < 1) throw ShapeError("hessian_frob_sq: projection count p must be >= 1");
    const int m = view.z.shape()[0];
    if (dim < 0 || dim >= m)
        throw ShapeError("hessian_frob_sq: output dimension " + std::to_string(dim) + " out of range for width " +
                         std::to_string(m));
    Graph& g = *view.z.graph();
    if (!g.gradient_recording_enabled())
        throw ShapeError(
            "hessian_frob_sq: the trace was built without second-order gradient recording; rebuild the forward "
            "pass with recording enabled");

    const int n = static_cast<int>(view.x.size());
    std::vector<double> onehot(static_cast<std::size_t>(m), 0.0);
    onehot[static_cast<std::size_t>(dim)] = 1.0;
    const Tensor z_d = ops::dot(view.z, Tensor({m}, std::move(onehot)));
    const auto first = g.backward(z_d, {view.x}, /*record=*/true);

    NormEstimate est;
    est.projections = p;
    est.mode = sampler.mode();
    if (first.unreachable(view.x)) return est;  // zero curvature (e.g. linear map)

    const Tensor grad_flat = ops::reshape(first.at(view.x), flat_shape(view.x));
    sampler.set_dimension(n);
    double acc = 0.0;
    for (int i = 0; i < p; ++i) {
        const Tensor projected = ops::dot(grad_flat, Tensor({n}, sampler.draw()));
        const auto second = g.backward(projected, {view.x}, /*record=*/false);
        if (second.unreachable(view.x)) continue;
        acc += sum_sq(second.at(view.x).values());
    }
    est.value = acc / static_cast<double>(p);
    if (sampler.mode() == SampleMode::kNormalizedSphere && apply_correction) {
        est.value *= static_cast<double>(n);
        est.correction_applied = true;
    }
    return est;
}

NormEstimate hessian_frob_sq(const model::ForwardTrace& trace, int layer, int dim, ProjectionSampler& sampler,
                             int p, bool apply_correction) {
    return hessian_frob_sq(layer_view(trace, layer), dim, sampler, p, apply_correction);
}

Tensor jacobian_penalty_term(const RepresentationView& view, const std::vector<double>& projection) {
    check_view(view, "jacobian_penalty_term");
    const int m = view.z.shape()[0];
    if (static_cast<int>(projection.size()) != m)
        throw ShapeError("jacobian_penalty_term: projection dimension mismatch");
    const Tensor g = vjp(view.z, Tensor({m}, projection), view.x, /*record=*/true);
    return ops::sum_squares(g);
}

Tensor hessian_penalty_mean(const RepresentationView& view, int dim,
                            std::span<const std::vector<double>> projections) {
    check_view(view, "hessian_penalty_term");
    if (projections.empty()) throw ShapeError("hessian_penalty_term: no projections supplied");
    const int m = view.z.shape()[0];
    const int n = static_cast<int>(view.x.size());
    if (dim < 0 || dim >= m)
        throw ShapeError("hessian_penalty_term: output dimension " + std::to_string(dim) +
                         " out of range for width " + std::to_string(m));
    Graph& g = *view.z.graph();
    if (!g.gradient_recording_enabled())
        throw ShapeError(
            "hessian_penalty_term: second-order recording is required; enable gradient recording on the graph");

    std::vector<double> onehot(static_cast<std::size_t>(m), 0.0);
    onehot[static_cast<std::size_t>(dim)] = 1.0;
    const Tensor z_d = ops::dot(view.z, Tensor({m}, std::move(onehot)));
    const auto first = g.backward(z_d, {view.x}, /*record=*/true);
    if (first.unreachable(view.x)) return Tensor::scalar(0.0);

    const Tensor grad_flat = ops::reshape(first.at(view.x), flat_shape(view.x));
    Tensor acc;
    for (const auto& projection : projections) {
        if (static_cast<int>(projection.size()) != n)
            throw ShapeError("hessian_penalty_term: projection dimension mismatch");
        const Tensor projected = ops::dot(grad_flat, Tensor({n}, projection));
        const auto second = g.backward(projected, {view.x}, /*record=*/true);
        const Tensor term =
            second.unreachable(view.x) ? Tensor::scalar(0.0) : ops::sum_squares(second.at(view.x));
        acc = acc.defined() ? ops::add(acc, term) : term;
    }
    return projections.size() > 1 ? ops::scale(acc, 1.0 / static_cast<double>(projections.size())) : acc;
}

Tensor hessian_penalty_term(const RepresentationView& view, int dim, const std::vector<double>& projection) {
    const std::vector<std::vector<double>> one{projection};
    return hessian_penalty_mean(view, dim, one);
}

Matrix exact_jacobian(const RepresentationView& view) {
    check_view(view, "exact_jacobian");
    const int m = view.z.shape()[0];
    const int n = static_cast<int>(view.x.size());
    if (static_cast<std::int64_t>(m) * n > kJacobianOracleMaxEntries)
        throw RunError("exact_jacobian: size guard exceeded, " + std::to_string(m) + "x" + std::to_string(n) +
                       " > " + std::to_string(kJacobianOracleMaxEntries) + " entries");
    Graph& g = *view.z.graph();
    Matrix jac{m, n, std::vector<double>(static_cast<std::size_t>(m) * n, 0.0)};
    for (int r = 0; r < m; ++r) {
        std::vector<double> onehot(static_cast<std::size_t>(m), 0.0);
        onehot[static_cast<std::size_t>(r)] = 1.0;
        const Tensor z_r = ops::dot(view.z, Tensor({m}, std::move(onehot)));
        const auto grads = g.backward(z_r, {view.x}, /*record=*/false);
        const auto& row = grads.at(view.x).values();
        for (int c = 0; c < n; ++c) jac.at(r, c) = row[static_cast<std::size_t>(c)];
    }
    return jac;
}

Matrix exact_jacobian(const model::ForwardTrace& trace, int layer) {
    return exact_jacobian(layer_view(trace, layer));
}

Matrix exact_hessian(const RepresentationView& view, int dim) {
    check_view(view, "exact_hessian");
    const int m = view.z.shape()[0];
    const int n = static_cast<int>(view.x.size());
    if (dim < 0 || dim >= m)
        throw ShapeError("exact_hessian: output dimension " + std::to_string(dim) + " out of range for width " +
                         std::to_string(m));
    if (n > kHessianOracleMaxDim)
        throw RunError("exact_hessian: size guard exceeded, input dimension " + std::to_string(n) + " > " +
                       std::to_string(kHessianOracleMaxDim));
    Graph& g = *view.z.graph();
    if (!g.gradient_recording_enabled())
        throw ShapeError("exact_hessian: second-order recording is required; enable gradient recording first");

    Matrix hess{n, n, std::vector<double>(static_cast<std::size_t>(n) * n, 0.0)};
    std::vector<double> onehot(static_cast<std::size_t>(m), 0.0);
    onehot[static_cast<std::size_t>(dim)] = 1.0;
    const Tensor z_d = ops::dot(view.z, Tensor({m}, std::move(onehot)));
    const auto first = g.backward(z_d, {view.x}, /*record=*/true);
    if (first.unreachable(view.x)) return hess;

    const Tensor grad_flat = ops::reshape(first.at(view.x), flat_shape(view.x));
    for (int r = 0; r < n; ++r) {
        std::vector<double> e(static_cast<std::size_t>(n), 0.0);
        e[static_cast<std::size_t>(r)] = 1.0;
        const Tensor g_r = ops::dot(grad_flat, Tensor({n}, std::move(e)));
        const auto second = g.backward(g_r, {view.x}, /*record=*/false);
        if (second.unreachable(view.x)) continue;
        const auto& row = second.at(view.x).values();
        for (int c = 0; c < n; ++c) hess.at(r, c) = row[static_cast<std::size_t>(c)];
    }
    return hess;
}

Matrix exact_hessian(const model::ForwardTrace& trace, int layer, int dim) {
    return exact_hessian(layer_view(trace, layer), dim);
}

double frobenius_norm_sq(const Matrix& m) {
    double acc = 0.0;
    for (double v : m.data) acc += v * v;
    return acc;
}

double spectral_norm(const Matrix& m, int iters, std::uint64_t seed) {
    if (m.rows == 0 || m.cols == 0) return 0.0;
    Rng rng = Rng::derive(seed, {0x73706563ULL});
    std::vector<double> v = rng.gaussian_vec(static_cast<std::size_t>(m.cols));
    std::vector<double> av(static_cast<std::size_t>(m.rows));
    double sigma_sq = 0.0;
    for (int it = 0; it < iters; ++it) {
        for (int r = 0; r < m.rows; ++r) {
            double s = 0.0;
            for (int c = 0; c < m.cols; ++c) s += m.at(r, c) * v[static_cast<std::size_t>(c)];
            av[static_cast<std::size_t>(r)] = s;
        }
        std::vector<double> next(static_cast<std::size_t>(m.cols), 0.0);
        for (int r = 0; r < m.rows; ++r)
            for (int c = 0; c < m.cols; ++c) next[static_cast<std::size_t>(c)] += m.at(r, c) * av[static_cast<std::size_t>(r)];
        double norm = 0.0;
        for (double c : next) norm += c * c;
        norm = std::sqrt(norm);
        if (norm == 0.0) return 0.0;
        sigma_sq = norm;  // ||A'Av|| converges to sigma^2 for unit v
        for (std::size_t i = 0; i < next.size(); ++i) v[i] = next[i] / norm;
    }
    return std::sqrt(sigma_sq);
}

}  // namespace jachess::estimators
