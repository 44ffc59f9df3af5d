#include "jachess/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

namespace jachess::trainer {

Method parse_method(const std::string& name) {
    if (name == "base") return Method::kBase;
    if (name == "jacobian-train") return Method::kJacobianTrain;
    if (name == "jacobian-val") return Method::kJacobianVal;
    if (name == "cross-holder-train") return Method::kCrossHolderTrain;
    if (name == "cross-holder-val") return Method::kCrossHolderVal;
    if (name == "jachess-train") return Method::kJacHessTrain;
    if (name == "jachess-val") return Method::kJacHessVal;
    throw ConfigError("unknown training method '" + name + "'");
}

const char* method_name(Method m) {
    switch (m) {
        case Method::kBase: return "base";
        case Method::kJacobianTrain: return "jacobian-train";
        case Method::kJacobianVal: return "jacobian-val";
        case Method::kCrossHolderTrain: return "cross-holder-train";
        case Method::kCrossHolderVal: return "cross-holder-val";
        case Method::kJacHessTrain: return "jachess-train";
        case Method::kJacHessVal: return "jachess-val";
    }
    return "unknown";
}

bool is_val_method(Method m) {
    return m == Method::kJacobianVal || m == Method::kCrossHolderVal || m == Method::kJacHessVal;
}

bool is_regularized(Method m) { return m != Method::kBase; }

void TrainConfig::validate(bool has_unlabeled) const {
    if (learning_rate <= 0.0) throw ConfigError("train: learning_rate must be positive");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (max_train_instances < 1) throw ConfigError("train: max_train_instances must be >= 1");
    if (is_regularized(method) && xi < 0.0) throw ConfigError("train: xi must be non-negative");
    if (is_val_method(method) && !has_unlabeled)
        throw ConfigError(std::string("train: method '") + method_name(method) +
                          "' requires an unlabeled split");
}

Tensor jacobian_penalty(const model::ForwardTrace& trace, double xi, int p, Rng& rng) {
    if (xi == 0.0) return Tensor::scalar(0.0);
    if (p < 1) throw ShapeError("jacobian_penalty: projection count must be >= 1");
    const auto view = estimators::logits_view(trace);
    const int m = view.z.shape()[0];
    Tensor acc;
    for (int i = 0; i < p; ++i) {
        const Tensor term = estimators::jacobian_penalty_term(view, rng.gaussian_vec(static_cast<std::size_t>(m)));
        acc = acc.defined() ? ops::add(acc, term) : term;
    }
    if (p > 1) acc = ops::scale(acc, 1.0 / static_cast<double>(p));
    return ops::scale(acc, xi);
}

Tensor cross_holder_penalty(const model::ForwardTrace& trace, double xi, int p, Rng& rng) {
    if (trace.probs.empty())
        throw ShapeError("cross_holder_penalty: requires a classification head");
    if (xi == 0.0) return Tensor::scalar(0.0);
    if (p < 1) throw ShapeError("cross_holder_penalty: projection count must be >= 1");
    const auto view = estimators::logits_view(trace);
    const int m = view.z.shape()[0];
    const int n = static_cast<int>(view.x.size());

    Tensor acc;
    for (int i = 0; i < p; ++i) {
        const Tensor term = estimators::jacobian_penalty_term(view, rng.gaussian_vec(static_cast<std::size_t>(m)));
        acc = acc.defined() ? ops::add(acc, term) : term;
    }
    if (p > 1) acc = ops::scale(acc, 1.0 / static_cast<double>(p));

    for (int c = 0; c < m; ++c) {
        std::vector<std::vector<double>> projections;
        projections.reserve(static_cast<std::size_t>(p));
        for (int i = 0; i < p; ++i) projections.push_back(rng.gaussian_vec(static_cast<std::size_t>(n)));
        acc = ops::add(acc, estimators::hessian_penalty_mean(view, c, projections));
    }
    return ops::scale(acc, xi);
}

namespace {

using Clock = std::chrono::steady_clock;

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t t = 0;
};

class Optimizer {
public:
    Optimizer(const TrainConfig& cfg, const model::Checkpoint& ckpt) : cfg_(cfg) {
        if (cfg.optimizer.kind == OptimizerKind::kAdam) {
            state_.m.reserve(ckpt.param_names().size());
            state_.v.reserve(ckpt.param_names().size());
            for (const auto& name : ckpt.param_names()) {
                const std::size_t n = ckpt.param_values(name)->size();
                state_.m.emplace_back(n, 0.0);
                state_.v.emplace_back(n, 0.0);
            }
        }
    }

    // Applies one update in place; returns true when clipping triggered.
    bool step(model::Checkpoint& ckpt, const std::vector<std::vector<double>>& grads) {
        bool clipped = false;
        double scale = 1.0;
        if (cfg_.clip_norm > 0.0) {
            double norm_sq = 0.0;
            for (const auto& g : grads)
                for (double v : g) norm_sq += v * v;
            const double norm = std::sqrt(norm_sq);
            if (norm > cfg_.clip_norm) {
                scale = cfg_.clip_norm / norm;
                clipped = true;
            }
        }
        const double lr = cfg_.learning_rate;
        if (cfg_.optimizer.kind == OptimizerKind::kSgd) {
            for (std::size_t i = 0; i < grads.size(); ++i) {
                auto& buf = *ckpt.param_values(ckpt.param_names()[i]);
                for (std::size_t j = 0; j < buf.size(); ++j) buf[j] -= lr * scale * grads[i][j];
            }
            return clipped;
        }
        const double b1 = cfg_.optimizer.beta1, b2 = cfg_.optimizer.beta2, eps = cfg_.optimizer.eps;
        ++state_.t;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state_.t));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state_.t));
        for (std::size_t i = 0; i < grads.size(); ++i) {
            auto& buf = *ckpt.param_values(ckpt.param_names()[i]);
            auto& m = state_.m[i];
            auto& v = state_.v[i];
            for (std::size_t j = 0; j < buf.size(); ++j) {
                const double g = scale * grads[i][j];
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                buf[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
            }
        }
        return clipped;
    }

private:
    TrainConfig cfg_;
    AdamState state_;
};

Tensor instance_loss(const model::ForwardTrace& trace, const data::Example& ex,
                     const model::ModelConfig& model_config) {
    if (model_config.task_head == model::TaskHead::kClassification)
        return ops::cross_entropy_logits(trace.logits, ex.label());
    return ops::mse_loss(trace.logits, Tensor({1}, {ex.score()}));
}

// Penalty for one batch under the configured method. Instances may be
// subsampled by the regularizer config; baselines honor the same knob.
Tensor batch_penalty(Method method, const model::ModelBinding& binding,
                     std::span<const std::vector<int>> tokens, const TrainConfig& cfg, Rng& rng) {
    if (method == Method::kJacHessTrain || method == Method::kJacHessVal)
        return regularizer::omega(binding, tokens, cfg.reg, rng);

    std::vector<std::size_t> order(tokens.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t take = tokens.size();
    const int cap = cfg.reg.max_instances_per_batch;
    if (cap > 0 && tokens.size() > static_cast<std::size_t>(cap)) {
        rng.shuffle(order);
        take = static_cast<std::size_t>(cap);
    }
    Tensor acc;
    for (std::size_t i = 0; i < take; ++i) {
        const auto trace = binding.forward(tokens[order[i]]);
        const Tensor term = (method == Method::kJacobianTrain || method == Method::kJacobianVal)
                                ? jacobian_penalty(trace, cfg.xi, cfg.reg.projections, rng)
                                : cross_holder_penalty(trace, cfg.xi, cfg.reg.projections, rng);
        acc = acc.defined() ? ops::add(acc, term) : term;
    }
    if (!acc.defined()) return Tensor::scalar(0.0);
    return ops::scale(acc, 1.0 / static_cast<double>(take));
}

std::vector<std::vector<double>> collect_grads(Graph& graph, const Tensor& objective,
                                               const model::ModelBinding& binding) {
    std::vector<Tensor> leaves;
    leaves.reserve(binding.param_leaves().size());
    for (const auto& [name, leaf] : binding.param_leaves()) leaves.push_back(leaf);
    const auto grads = graph.backward(objective, leaves);
    std::vector<std::vector<double>> out;
    out.reserve(leaves.size());
    for (const auto& leaf : leaves) out.push_back(grads.at(leaf).values());
    return out;
}

}  // namespace

model::ModelConfig model_for_task(model::ModelConfig base, const data::TaskSpec& spec) {
    base.vocab_size = spec.vocab_size;
    if (spec.kind == data::TaskKind::kRegression) {
        base.task_head = model::TaskHead::kRegression;
        base.num_classes = 1;
    } else {
        base.task_head = model::TaskHead::kClassification;
        base.num_classes = spec.num_classes;
    }
    return base;
}

RunRecord train(const TrainConfig& config, const data::SplitSet& splits, const model::ModelConfig& model_config,
                const std::string& task_name) {
    config.validate(!splits.unlabeled.empty());
    if (splits.labeled.empty()) throw DataError("train: labeled split is empty");

    const auto started = Clock::now();

    // Every run owns an independent model stream: init depends on both the
    // model seed and the run seed.
    model::ModelConfig mc = model_config;
    std::uint64_t seed_mix = mc.seed ^ (config.seed * 0x9e3779b97f4a7c15ULL);
    mc.seed = splitmix64(seed_mix);
    model::Checkpoint ckpt = model::init_model(mc);

    std::vector<data::Example> labeled = splits.labeled;
    if (static_cast<int>(labeled.size()) > config.max_train_instances)
        labeled.resize(static_cast<std::size_t>(config.max_train_instances));

    std::vector<std::vector<int>> labeled_tokens;
    labeled_tokens.reserve(labeled.size());
    for (const auto& ex : labeled) labeled_tokens.push_back(ex.input_tokens());
    std::vector<std::vector<int>> unlabeled_tokens;
    unlabeled_tokens.reserve(splits.unlabeled.size());
    for (const auto& ex : splits.unlabeled) unlabeled_tokens.push_back(ex.input_tokens());

    RunRecord record;
    record.method = method_name(config.method);
    record.task = task_name;
    record.seed = config.seed;

    TrainConfig cfg = config;
    cfg.reg.xi = config.xi;

    const bool jachess = config.method == Method::kJacHessTrain || config.method == Method::kJacHessVal;
    if (jachess && cfg.reg.lambdas.empty() && cfg.xi > 0.0) {
        // Frozen pre-training smoothness profile drives the allocation.
        const std::size_t calib = std::min<std::size_t>(labeled_tokens.size(),
                                                        static_cast<std::size_t>(cfg.profile_batch));
        const std::span<const std::vector<int>> calib_batch(labeled_tokens.data(), calib);
        const auto profile = regularizer::profile_smoothness(ckpt, calib_batch, cfg.profile_projections,
                                                             Rng::derive(config.seed, {0x70726f66ULL}).next_u64(),
                                                             task_name);
        cfg.reg.lambdas = regularizer::allocate_lambdas(profile, cfg.xi, cfg.reg.strategy);
    }
    if (jachess && cfg.xi == 0.0 && cfg.reg.lambdas.empty())
        cfg.reg.lambdas.assign(static_cast<std::size_t>(mc.num_layers), 0.0);
    record.lambdas = cfg.reg.lambdas;

    Optimizer optimizer(cfg, ckpt);
    Rng shuffle_rng = Rng::derive(config.seed, {0x73687566ULL});
    Rng reg_rng = Rng::derive(config.seed, {0x72656772ULL});

    const bool regularize = is_regularized(config.method) && cfg.xi > 0.0;
    const bool train_phase_penalty =
        regularize && (config.method == Method::kJacobianTrain || config.method == Method::kCrossHolderTrain ||
                       config.method == Method::kJacHessTrain);
    const bool val_phase_penalty = regularize && is_val_method(config.method);
    const bool interleaved = cfg.val_schedule == ValSchedule::kInterleaved;

    std::vector<std::size_t> order(labeled_tokens.size());
    std::iota(order.begin(), order.end(), 0);

    // One pass over the unlabeled split minimizing the penalty alone.
    auto unlabeled_pass = [&]() {
        int val_batches = 0;
        double val_omega = 0.0;
        for (std::size_t start = 0; start < unlabeled_tokens.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(unlabeled_tokens.size(), start + static_cast<std::size_t>(cfg.batch_size));
            Graph graph;
            graph.enable_gradient_recording();
            model::ModelBinding binding(graph, ckpt);
            const std::span<const std::vector<int>> batch(unlabeled_tokens.data() + start, end - start);
            const Tensor penalty = batch_penalty(config.method, binding, batch, cfg, reg_rng);
            val_omega += penalty.item();
            ++val_batches;
            if (!penalty.attached()) continue;  // identically zero penalty
            const auto grads = collect_grads(graph, penalty, binding);
            record.clip_events += optimizer.step(ckpt, grads) ? 1 : 0;
        }
        return val_batches > 0 ? val_omega / val_batches : 0.0;
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        double epoch_omega = 0.0;
        int batches = 0;

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            Graph graph;
            if (train_phase_penalty) graph.enable_gradient_recording();
            model::ModelBinding binding(graph, ckpt);

            Tensor loss_sum;
            for (std::size_t i = start; i < end; ++i) {
                const auto& ex = labeled[order[i]];
                const auto trace = binding.forward(labeled_tokens[order[i]]);
                const Tensor li = instance_loss(trace, ex, mc);
                loss_sum = loss_sum.defined() ? ops::add(loss_sum, li) : li;
            }
            Tensor objective = ops::scale(loss_sum, 1.0 / static_cast<double>(end - start));
            epoch_loss += objective.item();

            if (train_phase_penalty) {
                std::vector<std::vector<int>> batch_tokens;
                batch_tokens.reserve(end - start);
                for (std::size_t i = start; i < end; ++i) batch_tokens.push_back(labeled_tokens[order[i]]);
                const Tensor penalty = batch_penalty(config.method, binding, batch_tokens, cfg, reg_rng);
                epoch_omega += penalty.item();
                if (penalty.attached()) objective = ops::add(objective, penalty);
            }

            const auto grads = collect_grads(graph, objective, binding);
            record.clip_events += optimizer.step(ckpt, grads) ? 1 : 0;
            ++batches;
        }

        if (val_phase_penalty && interleaved) {
            epoch_omega = unlabeled_pass();
        } else if (batches > 0) {
            epoch_omega /= batches;
        }

        record.task_loss_per_epoch.push_back(batches > 0 ? epoch_loss / batches : 0.0);
        record.omega_per_epoch.push_back(epoch_omega);
        ckpt.set_step(ckpt.step() + static_cast<std::uint64_t>(batches));
    }

    // Fine-tune fully, then regularize fully.
    if (val_phase_penalty && !interleaved)
        for (int epoch = 0; epoch < cfg.epochs; ++epoch)
            record.omega_per_epoch[static_cast<std::size_t>(epoch)] = unlabeled_pass();

    record.final_checkpoint = std::move(ckpt);
    record.wall_seconds = std::chrono::duration<double>(Clock::now() - started).count();
    return record;
}

std::vector<RunRecord> run_suite(std::span<const Method> methods, std::span<const std::uint64_t> seeds,
                                 std::span<const SuiteTask> tasks, const model::ModelConfig& model_config,
                                 const TrainConfig& base_config, int parallelism) {
    if (seeds.empty()) throw ConfigError("run_suite: at least one seed is required");
    if (methods.empty()) throw ConfigError("run_suite: at least one method is required");
    if (tasks.empty()) throw ConfigError("run_suite: at least one task is required");

    struct Cell {
        std::size_t task, method, seed;
    };
    std::vector<Cell> cells;
    for (std::size_t t = 0; t < tasks.size(); ++t)
        for (std::size_t m = 0; m < methods.size(); ++m)
            for (std::size_t s = 0; s < seeds.size(); ++s) cells.push_back({t, m, s});

    std::vector<RunRecord> records(cells.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            const Cell& cell = cells[i];
            try {
                TrainConfig cfg = base_config;
                cfg.method = methods[cell.method];
                cfg.seed = seeds[cell.seed];
                const auto& task = tasks[cell.task];
                records[i] = train(cfg, task.splits, model_for_task(model_config, task.spec), task.name);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };

    const int workers = std::max(1, std::min<int>(parallelism, static_cast<int>(cells.size())));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return records;
}

}  // namespace jachess::trainer
