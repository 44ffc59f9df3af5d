#include "jachess/regularizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace jachess::regularizer {

LambdaStrategy parse_strategy(const std::string& name) {
    if (name == "penultimate-only") return LambdaStrategy::kPenultimateOnly;
    if (name == "uniform") return LambdaStrategy::kUniform;
    if (name == "inverse-base-smoothness") return LambdaStrategy::kInverseBaseSmoothness;
    if (name == "normalized-base-smoothness") return LambdaStrategy::kNormalizedBaseSmoothness;
    if (name == "softmax-base-smoothness") return LambdaStrategy::kSoftmaxBaseSmoothness;
    throw ConfigError("unknown lambda strategy '" + name + "'");
}

const char* strategy_name(LambdaStrategy s) {
    switch (s) {
        case LambdaStrategy::kPenultimateOnly: return "penultimate-only";
        case LambdaStrategy::kUniform: return "uniform";
        case LambdaStrategy::kInverseBaseSmoothness: return "inverse-base-smoothness";
        case LambdaStrategy::kNormalizedBaseSmoothness: return "normalized-base-smoothness";
        case LambdaStrategy::kSoftmaxBaseSmoothness: return "softmax-base-smoothness";
    }
    return "unknown";
}

std::vector<LambdaStrategy> all_strategies() {
    return {LambdaStrategy::kPenultimateOnly, LambdaStrategy::kUniform, LambdaStrategy::kInverseBaseSmoothness,
            LambdaStrategy::kNormalizedBaseSmoothness, LambdaStrategy::kSoftmaxBaseSmoothness};
}

void RegularizerConfig::validate(int num_layers) const {
    if (projections < 1) throw ConfigError("regularizer: projections must be >= 1");
    if (hessian_dims < 0) throw ConfigError("regularizer: hessian_dims must be >= 0");
    if (max_instances_per_batch < 0) throw ConfigError("regularizer: max_instances_per_batch must be >= 0");
    if (!lambdas.empty() && static_cast<int>(lambdas.size()) != num_layers)
        throw ConfigError("regularizer: lambda vector length " + std::to_string(lambdas.size()) +
                          " does not match layer count " + std::to_string(num_layers));
    for (double l : lambdas)
        if (l < 0.0) throw ConfigError("regularizer: lambdas must be non-negative");
    if (tie_lambdas && !lambdas2.empty() && lambdas2 != lambdas)
        throw ConfigError("regularizer: tie_lambdas is set but a distinct second lambda vector was given");
}

DimSample sample_dims(int layer, int width, int count, Rng& rng, std::uint64_t draw_id) {
    if (count > width)
        throw ShapeError("sample_dims: requested " + std::to_string(count) + " dimensions from a layer of width " +
                         std::to_string(width));
    std::vector<int> pool(static_cast<std::size_t>(width));
    std::iota(pool.begin(), pool.end(), 0);
    // Partial Fisher-Yates: the first `count` entries are the sample.
    for (int i = 0; i < count; ++i) {
        const int j = i + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(width - i)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(count));
    return {layer, std::move(pool), draw_id};
}

SmoothnessProfile profile_from_traces(std::span<const model::ForwardTrace> traces, int p, std::uint64_t seed,
                                      std::string calibration_id) {
    if (traces.empty()) throw ShapeError("profile_smoothness: calibration batch is empty");
    if (p < 1) throw ShapeError("profile_smoothness: projection count must be >= 1");
    const int num_layers = traces.front().num_layers();
    std::vector<double> norms(static_cast<std::size_t>(num_layers), 0.0);
    for (std::size_t i = 0; i < traces.size(); ++i) {
        const auto& trace = traces[i];
        if (trace.num_layers() != num_layers)
            throw ShapeError("profile_smoothness: traces disagree on layer count");
        auto sampler = estimators::ProjectionSampler(Rng::derive(seed, {0x70726f66ULL, i + 1}),
                                                     estimators::SampleMode::kGaussianRaw, 1);
        for (int k = 0; k < num_layers; ++k) {
            const auto est = estimators::jacobian_frob_sq(trace, k, sampler, p);
            norms[static_cast<std::size_t>(k)] += std::sqrt(est.value);
        }
    }
    for (double& n : norms) n /= static_cast<double>(traces.size());
    SmoothnessProfile profile;
    profile.per_layer_norm = std::move(norms);
    profile.calibration_id = std::move(calibration_id);
    profile.projections = p;
    return profile;
}

SmoothnessProfile profile_smoothness(const model::Checkpoint& ckpt, std::span<const std::vector<int>> batch,
                                     int p, std::uint64_t seed, std::string calibration_id) {
    if (batch.empty()) throw ShapeError("profile_smoothness: calibration batch is empty");
    std::vector<model::OwnedForward> forwards;
    std::vector<model::ForwardTrace> traces;
    forwards.reserve(batch.size());
    traces.reserve(batch.size());
    for (const auto& tokens : batch) {
        forwards.push_back(model::forward(ckpt, tokens));
        traces.push_back(forwards.back().trace);
    }
    return profile_from_traces(traces, p, seed, std::move(calibration_id));
}

std::vector<double> allocate_lambdas(const SmoothnessProfile& profile, double xi, LambdaStrategy strategy) {
    if (xi <= 0.0) throw ConfigError("allocate_lambdas: xi must be positive, got " + std::to_string(xi));
    const int k = profile.num_layers();
    if (k == 0) throw ConfigError("allocate_lambdas: empty smoothness profile");
    const auto& j = profile.per_layer_norm;
    std::vector<double> lambdas(static_cast<std::size_t>(k), 0.0);

    switch (strategy) {
        case LambdaStrategy::kPenultimateOnly:
            lambdas.back() = xi;
            break;
        case LambdaStrategy::kUniform:
            std::fill(lambdas.begin(), lambdas.end(), xi / static_cast<double>(k));
            break;
        case LambdaStrategy::kInverseBaseSmoothness: {
            // Smoothness is the inverse of the norm, so "inverse to
            // smoothness" weights layers proportionally to their norms.
            const double total = std::accumulate(j.begin(), j.end(), 0.0);
            if (total <= 0.0)
                throw ConfigError("allocate_lambdas: all-zero profile under inverse-base-smoothness");
            for (int i = 0; i < k; ++i) lambdas[static_cast<std::size_t>(i)] = xi * j[static_cast<std::size_t>(i)] / total;
            break;
        }
        case LambdaStrategy::kNormalizedBaseSmoothness: {
            std::vector<double> inv(static_cast<std::size_t>(k));
            for (int i = 0; i < k; ++i) {
                if (j[static_cast<std::size_t>(i)] == 0.0)
                    throw ConfigError("allocate_lambdas: zero norm in profile under normalized-base-smoothness");
                inv[static_cast<std::size_t>(i)] = 1.0 / j[static_cast<std::size_t>(i)];
            }
            const double total = std::accumulate(inv.begin(), inv.end(), 0.0);
            for (int i = 0; i < k; ++i) lambdas[static_cast<std::size_t>(i)] = xi * inv[static_cast<std::size_t>(i)] / total;
            break;
        }
        case LambdaStrategy::kSoftmaxBaseSmoothness: {
            double mx = -j[0];
            for (int i = 1; i < k; ++i) mx = std::max(mx, -j[static_cast<std::size_t>(i)]);
            double denom = 0.0;
            for (int i = 0; i < k; ++i) {
                lambdas[static_cast<std::size_t>(i)] = std::exp(-j[static_cast<std::size_t>(i)] - mx);
                denom += lambdas[static_cast<std::size_t>(i)];
            }
            for (double& l : lambdas) l = xi * l / denom;
            break;
        }
    }
    return lambdas;
}

namespace {

bool all_zero(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

// Mean of `p` recorded single-projection terms.
Tensor mean_jacobian_term(const estimators::RepresentationView& view, int p, Rng& rng) {
    const int m = view.z.shape()[0];
    Tensor acc;
    for (int i = 0; i < p; ++i) {
        const Tensor term = estimators::jacobian_penalty_term(view, rng.gaussian_vec(static_cast<std::size_t>(m)));
        acc = acc.defined() ? ops::add(acc, term) : term;
    }
    return p > 1 ? ops::scale(acc, 1.0 / static_cast<double>(p)) : acc;
}

Tensor mean_hessian_term(const estimators::RepresentationView& view, int dim, int p, Rng& rng) {
    const int n = static_cast<int>(view.x.size());
    std::vector<std::vector<double>> projections;
    projections.reserve(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) projections.push_back(rng.gaussian_vec(static_cast<std::size_t>(n)));
    return estimators::hessian_penalty_mean(view, dim, projections);
}

Tensor sqrt_guarded(const Tensor& t) { return ops::sqrt(ops::add_scalar(t, 1e-12)); }

}  // namespace

Tensor omega_on_views(std::span<const std::vector<estimators::RepresentationView>> per_instance,
                      const RegularizerConfig& config, Rng& rng) {
    if (per_instance.empty()) throw ShapeError("omega: empty batch");
    const int num_layers = static_cast<int>(per_instance.front().size());
    config.validate(num_layers);
    if (static_cast<int>(config.lambdas.size()) != num_layers)
        throw ConfigError("omega: lambdas not allocated for " + std::to_string(num_layers) + " layers");
    const auto& l1 = config.lambdas;
    const auto& l2 = config.hessian_lambdas();
    if (all_zero(l1) && all_zero(l2)) return Tensor::scalar(0.0);

    // One shared dimension sample per layer per call.
    std::vector<DimSample> dim_samples;
    dim_samples.reserve(static_cast<std::size_t>(num_layers));
    for (int k = 0; k < num_layers; ++k) {
        const int width = per_instance.front()[static_cast<std::size_t>(k)].z.shape()[0];
        dim_samples.push_back(sample_dims(k, width, config.hessian_dims, rng, static_cast<std::uint64_t>(k)));
    }

    Tensor total;
    for (const auto& views : per_instance) {
        if (static_cast<int>(views.size()) != num_layers)
            throw ShapeError("omega: instances disagree on layer count");
        for (int k = 0; k < num_layers; ++k) {
            const double lam1 = l1[static_cast<std::size_t>(k)];
            const double lam2 = l2[static_cast<std::size_t>(k)];
            if (lam1 == 0.0 && lam2 == 0.0) continue;
            const auto& view = views[static_cast<std::size_t>(k)];
            if (lam1 > 0.0) {
                Tensor jterm = mean_jacobian_term(view, config.projections, rng);
                if (config.use_sqrt_norms) jterm = sqrt_guarded(jterm);
                const Tensor weighted = ops::scale(jterm, lam1);
                total = total.defined() ? ops::add(total, weighted) : weighted;
            }
            if (lam2 > 0.0 && !dim_samples[static_cast<std::size_t>(k)].dims.empty()) {
                for (int d : dim_samples[static_cast<std::size_t>(k)].dims) {
                    Tensor hterm = mean_hessian_term(view, d, config.projections, rng);
                    if (config.use_sqrt_norms) hterm = sqrt_guarded(hterm);
                    const Tensor weighted = ops::scale(hterm, lam2);
                    total = total.defined() ? ops::add(total, weighted) : weighted;
                }
            }
        }
    }
    if (!total.defined()) return Tensor::scalar(0.0);
    return ops::scale(total, 1.0 / static_cast<double>(per_instance.size()));
}

Tensor omega(const model::ModelBinding& binding, std::span<const std::vector<int>> batch,
             const RegularizerConfig& config, Rng& rng) {
    if (batch.empty()) throw ShapeError("omega: empty batch");
    config.validate(binding.config().num_layers);
    if (static_cast<int>(config.lambdas.size()) != binding.config().num_layers)
        throw ConfigError("omega: lambdas not allocated for " + std::to_string(binding.config().num_layers) +
                          " layers");
    if (all_zero(config.lambdas) && all_zero(config.hessian_lambdas())) return Tensor::scalar(0.0);

    // Deterministic batch subsample for cost control.
    std::vector<std::size_t> order(batch.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t take = batch.size();
    if (config.max_instances_per_batch > 0 &&
        batch.size() > static_cast<std::size_t>(config.max_instances_per_batch)) {
        rng.shuffle(order);
        take = static_cast<std::size_t>(config.max_instances_per_batch);
    }

    std::vector<std::vector<estimators::RepresentationView>> views;
    views.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
        const auto trace = binding.forward(batch[order[i]]);
        std::vector<estimators::RepresentationView> instance;
        instance.reserve(static_cast<std::size_t>(trace.num_layers()));
        for (int k = 0; k < trace.num_layers(); ++k) instance.push_back(estimators::layer_view(trace, k));
        views.push_back(std::move(instance));
    }
    return omega_on_views(views, config, rng);
}

OwnedOmega omega(const model::Checkpoint& ckpt, std::span<const std::vector<int>> batch,
                 const RegularizerConfig& config, Rng& rng) {
    OwnedOmega out;
    out.graph = std::make_unique<Graph>();
    out.graph->enable_gradient_recording();
    out.binding = std::make_unique<model::ModelBinding>(*out.graph, ckpt);
    out.value = omega(*out.binding, batch, config, rng);
    return out;
}

}  // namespace jachess::regularizer
