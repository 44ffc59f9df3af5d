#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "jachess/data.hpp"
#include "jachess/model.hpp"

namespace jachess::evaluation {

enum class Metric : std::uint8_t { kAccuracy, kF1, kMatthews, kSpearman };

Metric parse_metric(const std::string& name);
const char* metric_name(Metric m);

struct ScoreResult {
    double value = 0.0;
    // Set when the score is defined by convention (e.g. Matthews with
    // constant predictions, F1 with no positive predictions).
    bool degenerate = false;
};

// Standard task metrics; Spearman uses average ranks for ties.
ScoreResult task_score(std::span<const double> predictions, std::span<const double> labels, Metric metric);

// Mean squared distance between predicted positive probability and outcome.
double brier(std::span<const double> probabilities, std::span<const double> labels);

struct CalibrationReport {
    static constexpr int kBins = 8;
    std::array<double, kBins + 1> bin_edges{};
    std::array<double, kBins> mean_predicted{};       // NaN when unoccupied
    std::array<double, kBins> empirical_frequency{};  // NaN when unoccupied
    std::array<int, kBins> counts{};
    std::array<bool, kBins> occupied{};
    double ece = 0.0;
    double brier_score = 0.0;
    int total = 0;
};

// Eight uniform probability bins on [0,1]; empty bins carry count 0 and
// flagged undefined frequency.
CalibrationReport calibration_report(std::span<const double> probabilities, std::span<const double> labels);

// e' = e + delta * v with i.i.d. standard normal coordinates. delta = 0
// returns the input unchanged.
std::vector<double> perturb_embeddings(const std::vector<double>& embeddings, double delta, Rng& rng);

// Each non-special position is independently replaced with probability
// `rate` by a uniformly random non-special token; PAD/EOS positions are
// never touched.
std::vector<int> corrupt_tokens(std::span<const int> tokens, double rate, Rng& rng, int vocab_size);

struct Predictions {
    std::vector<double> predicted;       // class index (classification) or score
    std::vector<double> labels;
    std::vector<double> positive_probs;  // binary classification only
};

Predictions predict(const model::Checkpoint& ckpt, std::span<const data::Example> examples);
Predictions predict_perturbed(const model::Checkpoint& ckpt, std::span<const data::Example> examples,
                              double delta, std::uint64_t seed);
Predictions predict_corrupted(const model::Checkpoint& ckpt, std::span<const data::Example> examples,
                              double rate, std::uint64_t seed);

struct RobustnessCurve {
    std::vector<double> levels;                  // strictly increasing axis
    std::vector<double> mean_scores;             // one per level
    std::vector<std::vector<double>> per_seed;   // [level][seed]
};

// Mean task score per noise level across seeds; the zero level reproduces
// the clean evaluation exactly.
RobustnessCurve perturbation_sweep(const model::Checkpoint& ckpt, std::span<const data::Example> examples,
                                   std::span<const double> deltas, std::span<const std::uint64_t> seeds,
                                   Metric metric);
RobustnessCurve corruption_sweep(const model::Checkpoint& ckpt, std::span<const data::Example> examples,
                                 std::span<const double> rates, std::span<const std::uint64_t> seeds,
                                 Metric metric);

}  // namespace jachess::evaluation
