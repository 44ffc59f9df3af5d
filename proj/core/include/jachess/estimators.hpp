#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "jachess/model.hpp"
#include "jachess/rng.hpp"

namespace jachess::estimators {

enum class SampleMode : std::uint8_t { kGaussianRaw, kNormalizedSphere };

// Projection-vector source. gaussian-raw draws i.i.d. standard normals
// (the unbiased Hutchinson choice); normalized-sphere rescales each draw to
// unit norm, which shrinks estimates by the projection dimension unless the
// correction factor is applied downstream.
class ProjectionSampler {
public:
    ProjectionSampler(Rng rng, SampleMode mode, int dimension)
        : rng_(rng), mode_(mode), dim_(dimension) {}

    static ProjectionSampler gaussian(std::uint64_t seed, int dimension) {
        return ProjectionSampler(Rng::derive(seed, {0x70726f6aULL}), SampleMode::kGaussianRaw, dimension);
    }
    static ProjectionSampler sphere(std::uint64_t seed, int dimension) {
        return ProjectionSampler(Rng::derive(seed, {0x70726f6aULL}), SampleMode::kNormalizedSphere, dimension);
    }

    std::vector<double> draw();

    SampleMode mode() const { return mode_; }
    int dimension() const { return dim_; }
    void set_dimension(int dimension) { dim_ = dimension; }
    std::uint64_t draws_taken() const { return draws_; }

private:
    Rng rng_;
    SampleMode mode_;
    int dim_;
    std::uint64_t draws_ = 0;
};

// Squared Frobenius norm estimate plus the sampling metadata needed to
// interpret it.
struct NormEstimate {
    double value = 0.0;
    int projections = 0;
    SampleMode mode = SampleMode::kGaussianRaw;
    bool correction_applied = false;
};

// Square operator accessible only through matrix-vector products.
struct LinearOperator {
    int dim = 0;
    std::function<std::vector<double>(std::span<const double>)> apply;
};

// (1/p) sum v'Av; unbiased for tr(A) under gaussian-raw sampling.
double trace_estimate(const LinearOperator& op, ProjectionSampler& sampler, int p);

// A differentiable output vector z and the leaf x it is differentiated
// against. Model traces provide one per layer; tests build ad-hoc ones.
struct RepresentationView {
    Tensor z;  // rank-1 output
    Tensor x;  // graph leaf (any shape)
};

RepresentationView layer_view(const model::ForwardTrace& trace, int layer);
RepresentationView logits_view(const model::ForwardTrace& trace);

// (1/p) sum over projections of the squared vjp norm; unbiased for
// ||J||_F^2 in gaussian-raw mode. In normalized-sphere mode the output
// dimension factor is multiplied back in when apply_correction is set.
NormEstimate jacobian_frob_sq(const RepresentationView& view, ProjectionSampler& sampler, int p,
                              bool apply_correction = true);
NormEstimate jacobian_frob_sq(const model::ForwardTrace& trace, int layer, ProjectionSampler& sampler, int p,
                              bool apply_correction = true);

// Squared Frobenius norm of the Hessian of scalar output dimension `dim`,
// via one recorded backward plus p plain backwards. Requires the trace's
// graph to have gradient recording enabled.
NormEstimate hessian_frob_sq(const RepresentationView& view, int dim, ProjectionSampler& sampler, int p,
                             bool apply_correction = true);
NormEstimate hessian_frob_sq(const model::ForwardTrace& trace, int layer, int dim, ProjectionSampler& sampler,
                             int p, bool apply_correction = true);

// Differentiable single-projection penalty terms (recorded into the graph,
// so their parameter gradients exist). These are the training-time
// counterparts of the measurement estimators above.
Tensor jacobian_penalty_term(const RepresentationView& view, const std::vector<double>& projection);
Tensor hessian_penalty_term(const RepresentationView& view, int dim, const std::vector<double>& projection);
// Mean over several projections sharing one recorded first backward.
Tensor hessian_penalty_mean(const RepresentationView& view, int dim,
                            std::span<const std::vector<double>> projections);

struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

inline constexpr std::int64_t kJacobianOracleMaxEntries = 65536;
inline constexpr int kHessianOracleMaxDim = 256;

// Row-by-row oracles for validation; guarded by the size limits above.
Matrix exact_jacobian(const RepresentationView& view);
Matrix exact_jacobian(const model::ForwardTrace& trace, int layer);
Matrix exact_hessian(const RepresentationView& view, int dim);
Matrix exact_hessian(const model::ForwardTrace& trace, int layer, int dim);

double frobenius_norm_sq(const Matrix& m);
// Largest singular value by power iteration on A'A.
double spectral_norm(const Matrix& m, int iters = 200, std::uint64_t seed = 1);

}  // namespace jachess::estimators
