#include "jachess/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace jachess::evaluation {

Metric parse_metric(const std::string& name) {
    if (name == "accuracy") return Metric::kAccuracy;
    if (name == "f1") return Metric::kF1;
    if (name == "matthews") return Metric::kMatthews;
    if (name == "spearman") return Metric::kSpearman;
    throw ConfigError("unknown metric '" + name + "'");
}

const char* metric_name(Metric m) {
    switch (m) {
        case Metric::kAccuracy: return "accuracy";
        case Metric::kF1: return "f1";
        case Metric::kMatthews: return "matthews";
        case Metric::kSpearman: return "spearman";
    }
    return "unknown";
}

namespace {

void check_lengths(std::span<const double> a, std::span<const double> b, const char* who) {
    if (a.size() != b.size())
        throw ShapeError(std::string(who) + ": length mismatch, " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    if (a.empty()) throw ShapeError(std::string(who) + ": empty input");
}

// Average ranks with ties sharing the mean rank.
std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
        const double shared = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = shared;
        i = j + 1;
    }
    return ranks;
}

double pearson(std::span<const double> a, std::span<const double> b, bool& degenerate) {
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) {
        degenerate = true;
        return 0.0;
    }
    return cov / std::sqrt(va * vb);
}

}  // namespace

ScoreResult task_score(std::span<const double> predictions, std::span<const double> labels, Metric metric) {
    check_lengths(predictions, labels, "task_score");
    ScoreResult out;
    switch (metric) {
        case Metric::kAccuracy: {
            double hits = 0.0;
            for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == labels[i] ? 1.0 : 0.0;
            out.value = hits / static_cast<double>(predictions.size());
            break;
        }
        case Metric::kF1: {
            double tp = 0, fp = 0, fn = 0;
            for (std::size_t i = 0; i < predictions.size(); ++i) {
                const bool p = predictions[i] == 1.0, y = labels[i] == 1.0;
                tp += (p && y) ? 1 : 0;
                fp += (p && !y) ? 1 : 0;
                fn += (!p && y) ? 1 : 0;
            }
            if (tp == 0) {
                out.value = 0.0;
                out.degenerate = (tp + fp == 0) || (tp + fn == 0);
            } else {
                const double precision = tp / (tp + fp);
                const double recall = tp / (tp + fn);
                out.value = 2.0 * precision * recall / (precision + recall);
            }
            break;
        }
        case Metric::kMatthews: {
            double tp = 0, tn = 0, fp = 0, fn = 0;
            for (std::size_t i = 0; i < predictions.size(); ++i) {
                const bool p = predictions[i] == 1.0, y = labels[i] == 1.0;
                tp += (p && y) ? 1 : 0;
                tn += (!p && !y) ? 1 : 0;
                fp += (p && !y) ? 1 : 0;
                fn += (!p && y) ? 1 : 0;
            }
            const double denom_sq = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
            if (denom_sq == 0.0) {
                out.value = 0.0;  // constant predictions (or labels): defined as 0
                out.degenerate = true;
            } else {
                out.value = (tp * tn - fp * fn) / std::sqrt(denom_sq);
            }
            break;
        }
        case Metric::kSpearman: {
            const auto ra = average_ranks(predictions);
            const auto rb = average_ranks(labels);
            out.value = pearson(ra, rb, out.degenerate);
            break;
        }
    }
    return out;
}

double brier(std::span<const double> probabilities, std::span<const double> labels) {
    check_lengths(probabilities, labels, "brier");
    double acc = 0.0;
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
        const double p = probabilities[i];
        if (p < 0.0 || p > 1.0)
            throw ShapeError("brier: probability " + std::to_string(p) + " outside [0,1]");
        acc += (p - labels[i]) * (p - labels[i]);
    }
    return acc / static_cast<double>(probabilities.size());
}

CalibrationReport calibration_report(std::span<const double> probabilities, std::span<const double> labels) {
    check_lengths(probabilities, labels, "calibration_report");
    CalibrationReport rep;
    rep.total = static_cast<int>(probabilities.size());
    for (int b = 0; b <= CalibrationReport::kBins; ++b)
        rep.bin_edges[static_cast<std::size_t>(b)] = static_cast<double>(b) / CalibrationReport::kBins;

    std::array<double, CalibrationReport::kBins> sum_p{};
    std::array<double, CalibrationReport::kBins> sum_y{};
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
        const double p = probabilities[i];
        if (p < 0.0 || p > 1.0)
            throw ShapeError("calibration_report: probability " + std::to_string(p) + " outside [0,1]");
        const int bin = std::min(CalibrationReport::kBins - 1, static_cast<int>(p * CalibrationReport::kBins));
        rep.counts[static_cast<std::size_t>(bin)]++;
        sum_p[static_cast<std::size_t>(bin)] += p;
        sum_y[static_cast<std::size_t>(bin)] += labels[i];
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (int b = 0; b < CalibrationReport::kBins; ++b) {
        const auto bi = static_cast<std::size_t>(b);
        rep.occupied[bi] = rep.counts[bi] > 0;
        if (rep.occupied[bi]) {
            rep.mean_predicted[bi] = sum_p[bi] / rep.counts[bi];
            rep.empirical_frequency[bi] = sum_y[bi] / rep.counts[bi];
            rep.ece += (static_cast<double>(rep.counts[bi]) / rep.total) *
                       std::fabs(rep.empirical_frequency[bi] - rep.mean_predicted[bi]);
        } else {
            rep.mean_predicted[bi] = nan;
            rep.empirical_frequency[bi] = nan;
        }
    }
    rep.brier_score = brier(probabilities, labels);
    return rep;
}

std::vector<double> perturb_embeddings(const std::vector<double>& embeddings, double delta, Rng& rng) {
    if (delta < 0.0) throw ShapeError("perturb_embeddings: delta must be >= 0");
    if (delta == 0.0) return embeddings;
    std::vector<double> out(embeddings.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = embeddings[i] + delta * rng.gaussian();
    return out;
}

std::vector<int> corrupt_tokens(std::span<const int> tokens, double rate, Rng& rng, int vocab_size) {
    if (rate < 0.0 || rate > 1.0) throw ShapeError("corrupt_tokens: rate must lie in [0,1]");
    const int regular = vocab_size - model::kNumSpecialTokens;
    if (regular < 1) throw ShapeError("corrupt_tokens: vocabulary has no regular tokens");
    std::vector<int> out(tokens.begin(), tokens.end());
    for (int& t : out) {
        if (t == model::kPadToken || t == model::kEosToken) continue;
        if (rng.uniform01() < rate)
            t = model::kNumSpecialTokens + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(regular)));
    }
    return out;
}

namespace {

// Gathered clean input embeddings straight from the table.
std::vector<double> embeddings_for(const model::Checkpoint& ckpt, std::span<const int> tokens) {
    const auto& table = *ckpt.param_values("tok_embed");
    const int d = ckpt.config().embed_dim;
    std::vector<double> out;
    out.reserve(tokens.size() * static_cast<std::size_t>(d));
    for (int t : tokens) {
        const auto* row = table.data() + static_cast<std::size_t>(t) * d;
        out.insert(out.end(), row, row + d);
    }
    return out;
}

void push_outputs(const model::ForwardTrace& trace, const data::Example& ex,
                  const model::ModelConfig& config, Predictions& out) {
    if (config.task_head == model::TaskHead::kClassification) {
        int best = 0;
        for (std::size_t c = 1; c < trace.probs.size(); ++c)
            if (trace.probs[c] > trace.probs[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
        out.predicted.push_back(static_cast<double>(best));
        out.labels.push_back(static_cast<double>(ex.label()));
        if (config.num_classes == 2) out.positive_probs.push_back(trace.probs[1]);
    } else {
        out.predicted.push_back(trace.logits.at(0));
        out.labels.push_back(ex.score());
    }
}

}  // namespace

Predictions predict(const model::Checkpoint& ckpt, std::span<const data::Example> examples) {
    Predictions out;
    for (const auto& ex : examples) {
        Graph graph;
        model::ModelBinding binding(graph, ckpt);
        const auto trace = binding.forward(ex.input_tokens());
        push_outputs(trace, ex, ckpt.config(), out);
    }
    return out;
}

Predictions predict_perturbed(const model::Checkpoint& ckpt, std::span<const data::Example> examples,
                              double delta, std::uint64_t seed) {
    Predictions out;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto tokens = examples[i].input_tokens();
        Rng rng = Rng::derive(seed, {0x70657274ULL, i});
        const auto clean = embeddings_for(ckpt, tokens);
        const auto noisy = perturb_embeddings(clean, delta, rng);
        Graph graph;
        model::ModelBinding binding(graph, ckpt);
        const auto trace = binding.forward_with_embeddings(tokens, noisy);
        push_outputs(trace, examples[i], ckpt.config(), out);
    }
    return out;
}

Predictions predict_corrupted(const model::Checkpoint& ckpt, std::span<const data::Example> examples,
                              double rate, std::uint64_t seed) {
    Predictions out;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        Rng rng = Rng::derive(seed, {0x636f7272ULL, i});
        const auto tokens = corrupt_tokens(examples[i].input_tokens(), rate, rng, ckpt.config().vocab_size);
        Graph graph;
        model::ModelBinding binding(graph, ckpt);
        const auto trace = binding.forward(tokens);
        push_outputs(trace, examples[i], ckpt.config(), out);
    }
    return out;
}

namespace {

RobustnessCurve sweep_impl(const model::Checkpoint& ckpt, std::span<const data::Example> examples,
                           std::span<const double> levels, std::span<const std::uint64_t> seeds, Metric metric,
                           bool corruption) {
    if (levels.empty()) throw ShapeError("sweep: empty level list");
    for (std::size_t i = 1; i < levels.size(); ++i)
        if (levels[i] <= levels[i - 1]) throw ShapeError("sweep: levels must be strictly increasing");
    if (seeds.empty()) throw ShapeError("sweep: at least one seed required");

    RobustnessCurve curve;
    curve.levels.assign(levels.begin(), levels.end());
    for (double level : levels) {
        std::vector<double> seed_scores;
        seed_scores.reserve(seeds.size());
        for (std::uint64_t seed : seeds) {
            Predictions preds;
            if (level == 0.0)
                preds = predict(ckpt, examples);  // exact clean evaluation
            else if (corruption)
                preds = predict_corrupted(ckpt, examples, level, seed);
            else
                preds = predict_perturbed(ckpt, examples, level, seed);
            seed_scores.push_back(task_score(preds.predicted, preds.labels, metric).value);
        }
        double mean = 0.0;
        for (double s : seed_scores) mean += s;
        curve.mean_scores.push_back(mean / static_cast<double>(seed_scores.size()));
        curve.per_seed.push_back(std::move(seed_scores));
    }
    return curve;
}

}  // namespace

RobustnessCurve perturbation_sweep(const model::Checkpoint& ckpt, std::span<const data::Example> examples,
                                   std::span<const double> deltas, std::span<const std::uint64_t> seeds,
                                   Metric metric) {
    return sweep_impl(ckpt, examples, deltas, seeds, metric, /*corruption=*/false);
}

RobustnessCurve corruption_sweep(const model::Checkpoint& ckpt, std::span<const data::Example> examples,
                                 std::span<const double> rates, std::span<const std::uint64_t> seeds,
                                 Metric metric) {
    return sweep_impl(ckpt, examples, rates, seeds, metric, /*corruption=*/true);
}

}  // namespace jachess::evaluation
