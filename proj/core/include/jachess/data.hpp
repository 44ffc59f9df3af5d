#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jachess/error.hpp"
#include "jachess/rng.hpp"

namespace jachess::data {

enum class TaskKind : std::uint8_t { kSingleBinary, kPairBinary, kMultiClass, kRegression };

TaskKind parse_task_kind(const std::string& name);
const char* task_kind_name(TaskKind kind);

struct Example {
    std::vector<int> tokens_a;
    std::vector<int> tokens_b;  // pair tasks only
    bool is_pair = false;
    std::optional<double> target;

    int label() const {
        if (!target) throw DataError("example has no target");
        return static_cast<int>(*target);
    }
    double score() const {
        if (!target) throw DataError("example has no target");
        return *target;
    }
    // Single token sequence fed to the model (pairs joined by EOS).
    std::vector<int> input_tokens() const;
};

struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::kSingleBinary;
    std::string metric = "accuracy";  // accuracy | f1 | matthews | spearman
    std::string generator;            // empty for TSV ingestion
    int vocab_size = 64;
    int num_classes = 2;
    int seq_len = 12;
    // Pair-task generator parameters: tokens per side and the alphabet the
    // sides draw from (small alphabets make the matching relation learnable
    // at desk scale).
    int pair_half = 6;
    int pair_alphabet = 16;

    void validate() const;
};

struct Sizes {
    int labeled = 0;
    int unlabeled = 0;
    int test = 0;
};

struct SplitSet {
    std::vector<Example> labeled;
    std::vector<Example> unlabeled;  // targets stripped
    std::vector<Example> test;
    std::uint64_t seed = 0;
};

// Built-in generators: token-majority, pattern-containment, pair-overlap,
// three-way-count, overlap-score. Instances are deduplicated across the
// whole pool before partitioning, so splits are disjoint for every seed.
SplitSet generate_task(const TaskSpec& spec, const Sizes& sizes, std::uint64_t seed);

// Registry of the built-in synthetic tasks.
TaskSpec task_by_name(const std::string& name);
std::vector<std::string> builtin_task_names();

// Tab-separated ingestion: header `text_a [text_b] target`, UTF-8, one
// example per row. Whitespace tokens are hashed into the non-special vocab
// range. All rows land in the labeled split.
SplitSet load_tsv(const std::filesystem::path& path, const TaskSpec& schema);

// Deterministic re-partition of examples into labeled/unlabeled/test;
// unlabeled targets are stripped.
SplitSet make_splits(std::vector<Example> pool, const Sizes& sizes, std::uint64_t seed);

std::vector<Example> strip_labels(std::vector<Example> examples);

std::uint64_t fnv1a64(std::string_view text);

}  // namespace jachess::data
