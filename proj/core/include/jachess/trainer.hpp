#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "jachess/data.hpp"
#include "jachess/model.hpp"
#include "jachess/regularizer.hpp"

namespace jachess::trainer {

enum class Method : std::uint8_t {
    kBase,
    kJacobianTrain,
    kJacobianVal,
    kCrossHolderTrain,
    kCrossHolderVal,
    kJacHessTrain,
    kJacHessVal,
};

Method parse_method(const std::string& name);
const char* method_name(Method m);
bool is_val_method(Method m);
bool is_regularized(Method m);

enum class OptimizerKind : std::uint8_t { kSgd, kAdam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::kAdam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

enum class ValSchedule : std::uint8_t { kInterleaved, kSequential };

struct TrainConfig {
    Method method = Method::kBase;
    double learning_rate = 3e-4;
    double xi = 3e-4;  // regularization budget, defaults to the learning rate scale
    int epochs = 4;
    int batch_size = 16;
    std::uint64_t seed = 1;
    int max_train_instances = 10000;
    OptimizerConfig optimizer;
    double clip_norm = 1.0;  // 0 disables clipping
    ValSchedule val_schedule = ValSchedule::kInterleaved;
    regularizer::RegularizerConfig reg;
    int profile_batch = 16;        // calibration instances for the smoothness profile
    int profile_projections = 32;  // p when profiling

    void validate(bool has_unlabeled) const;
};

struct RunRecord {
    std::string method;
    std::string task;
    std::uint64_t seed = 0;
    std::vector<double> task_loss_per_epoch;
    std::vector<double> omega_per_epoch;  // mean penalty value; zeros for base
    model::Checkpoint final_checkpoint;
    double wall_seconds = 0.0;
    int clip_events = 0;
    std::vector<double> lambdas;  // resolved per-layer factors (empty for base)
};

// Logits-Jacobian baseline: xi * ||d logits / d x||_F^2 estimate.
Tensor jacobian_penalty(const model::ForwardTrace& trace, double xi, int p, Rng& rng);

// Cross-Holder baseline: xi * (Jacobian term + Hessian terms over every
// logit dimension). Classification heads only.
Tensor cross_holder_penalty(const model::ForwardTrace& trace, double xi, int p, Rng& rng);

RunRecord train(const TrainConfig& config, const data::SplitSet& splits, const model::ModelConfig& model_config,
                const std::string& task_name = "");

struct SuiteTask {
    std::string name;
    data::TaskSpec spec;
    data::SplitSet splits;
};

// Full cross product of methods x seeds x tasks; runs execute in parallel
// (bounded by `parallelism`) with independent RNG streams per cell, so
// results do not depend on scheduling.
std::vector<RunRecord> run_suite(std::span<const Method> methods, std::span<const std::uint64_t> seeds,
                                 std::span<const SuiteTask> tasks, const model::ModelConfig& model_config,
                                 const TrainConfig& base_config, int parallelism = 2);

// Model head configuration implied by a task.
model::ModelConfig model_for_task(model::ModelConfig base, const data::TaskSpec& spec);

}  // namespace jachess::trainer
