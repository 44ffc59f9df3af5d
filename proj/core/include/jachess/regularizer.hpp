#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jachess/estimators.hpp"
#include "jachess/model.hpp"

namespace jachess::regularizer {

enum class LambdaStrategy : std::uint8_t {
    kPenultimateOnly,
    kUniform,
    kInverseBaseSmoothness,
    kNormalizedBaseSmoothness,
    kSoftmaxBaseSmoothness,
};

LambdaStrategy parse_strategy(const std::string& name);
const char* strategy_name(LambdaStrategy s);
std::vector<LambdaStrategy> all_strategies();

// Per-layer Jacobian Frobenius norms (not squared) of a model on a
// calibration set, the basis for allocating the regularization budget.
struct SmoothnessProfile {
    std::vector<double> per_layer_norm;  // length K, entries >= 0
    std::string calibration_id;
    int projections = 0;

    int num_layers() const { return static_cast<int>(per_layer_norm.size()); }
};

struct RegularizerConfig {
    double xi = 3e-4;                // budget, same scale as the learning rate
    int projections = 1;             // p per penalty term during training
    int hessian_dims = 10;           // |D| sampled output dimensions per layer
    LambdaStrategy strategy = LambdaStrategy::kSoftmaxBaseSmoothness;
    std::vector<double> lambdas;     // per-layer factors; empty until allocated
    std::vector<double> lambdas2;    // Hessian-term factors; empty = tied
    bool tie_lambdas = true;
    bool use_sqrt_norms = false;     // penalize sqrt of the squared estimates
    int max_instances_per_batch = 4; // 0 = use the whole batch

    const std::vector<double>& hessian_lambdas() const {
        return (tie_lambdas || lambdas2.empty()) ? lambdas : lambdas2;
    }
    void validate(int num_layers) const;
};

struct DimSample {
    int layer = 0;
    std::vector<int> dims;
    std::uint64_t draw_id = 0;
};

// Uniform sample without replacement of `count` output dimensions.
DimSample sample_dims(int layer, int width, int count, Rng& rng, std::uint64_t draw_id = 0);

// Mean per-layer Jacobian norms over a token batch; projection streams are
// derived per instance (counter-based), so the result is seed-reproducible.
SmoothnessProfile profile_smoothness(const model::Checkpoint& ckpt,
                                     std::span<const std::vector<int>> batch, int p, std::uint64_t seed,
                                     std::string calibration_id = "");
SmoothnessProfile profile_from_traces(std::span<const model::ForwardTrace> traces, int p, std::uint64_t seed,
                                      std::string calibration_id = "");

// Distributes the budget xi across layers from the profile.
std::vector<double> allocate_lambdas(const SmoothnessProfile& profile, double xi, LambdaStrategy strategy);

// Differentiable batch penalty: sum over layers of
// lambda1[k] * ||J(k)||^2 + lambda2[k] * sum_{d in D(k)} ||H(k)_d||^2,
// squared-estimate variant by default. One DimSample is drawn per layer per
// call and shared across the batch. Estimates use config.projections
// projections per term. Returns a scalar in the binding's graph (or a
// detached zero when every lambda is zero).
Tensor omega(const model::ModelBinding& binding, std::span<const std::vector<int>> batch,
             const RegularizerConfig& config, Rng& rng);

// Same penalty on caller-provided representation views (one vector per
// instance); the layer count is inferred from the views.
Tensor omega_on_views(std::span<const std::vector<estimators::RepresentationView>> per_instance,
                      const RegularizerConfig& config, Rng& rng);

// Owning convenience matching the checkpoint-level surface.
struct OwnedOmega {
    std::unique_ptr<Graph> graph;
    std::unique_ptr<model::ModelBinding> binding;
    Tensor value;
};

OwnedOmega omega(const model::Checkpoint& ckpt, std::span<const std::vector<int>> batch,
                 const RegularizerConfig& config, Rng& rng);

}  // namespace jachess::regularizer
