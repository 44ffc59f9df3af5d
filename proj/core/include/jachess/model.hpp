#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "jachess/graph.hpp"
#include "jachess/ops.hpp"

namespace jachess::model {

inline constexpr int kPadToken = 0;
inline constexpr int kEosToken = 1;
inline constexpr int kNumSpecialTokens = 2;

enum class TaskHead : std::uint8_t { kClassification, kRegression };

struct ModelConfig {
    int vocab_size = 64;
    int embed_dim = 32;
    int num_layers = 4;
    int num_heads = 4;
    int feedforward_dim = 64;
    int max_seq_len = 32;
    TaskHead task_head = TaskHead::kClassification;
    int num_classes = 2;  // ignored for regression
    std::uint64_t seed = 1;

    int head_dim() const { return embed_dim / num_heads; }
    int output_dim() const { return task_head == TaskHead::kClassification ? num_classes : 1; }
    void validate() const;  // throws ConfigError on bad dimensions
};

// All parameters by name, in a fixed order. Reloading a saved checkpoint
// reproduces forward outputs bit-exactly.
class Checkpoint {
public:
    Checkpoint() = default;

    const ModelConfig& config() const { return config_; }
    std::uint64_t step() const { return step_; }
    void set_step(std::uint64_t s) { step_ = s; }

    const std::vector<std::string>& param_names() const { return names_; }
    const Shape& param_shape(const std::string& name) const;
    const std::shared_ptr<std::vector<double>>& param_values(const std::string& name) const;
    std::int64_t total_params() const;

    Checkpoint clone() const;  // deep copy of parameter buffers

private:
    friend Checkpoint init_model(const ModelConfig&);
    friend Checkpoint load_checkpoint(const std::filesystem::path&);

    void add_param(const std::string& name, Shape shape, std::vector<double> values);

    ModelConfig config_;
    std::uint64_t step_ = 0;
    std::vector<std::string> names_;
    std::vector<Shape> shapes_;
    std::vector<std::shared_ptr<std::vector<double>>> buffers_;
};

Checkpoint init_model(const ModelConfig& config);

// Versioned flat binary format; lossless round-trip (raw doubles).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// One forward pass: the differentiable input embeddings plus the last
// non-pad token's representation after every block, and the task outputs.
struct ForwardTrace {
    Tensor x;                    // (seq, embed) gathered input embeddings, graph leaf side
    std::vector<Tensor> layers;  // K vectors of length embed_dim
    Tensor logits;               // (C,) classification, (1,) regression
    std::vector<double> probs;   // softmax of logits; empty for regression
    int seq_len = 0;
    int last_index = 0;  // position whose representation feeds the head
    Graph* graph = nullptr;

    int num_layers() const { return static_cast<int>(layers.size()); }
};

// Binds checkpoint parameters into one graph as shared-buffer leaves so
// several forwards (a batch) can share parameter nodes.
class ModelBinding {
public:
    ModelBinding(Graph& graph, const Checkpoint& ckpt);

    ForwardTrace forward(std::span<const int> tokens) const;
    ForwardTrace pair_forward(std::span<const int> tokens_a, std::span<const int> tokens_b) const;
    // Runs the model on caller-supplied embedding values (e.g. perturbed);
    // tokens still drive masking and sequence length.
    ForwardTrace forward_with_embeddings(std::span<const int> tokens, const std::vector<double>& embeddings) const;

    const std::vector<std::pair<std::string, Tensor>>& param_leaves() const { return leaves_; }
    const Tensor& param(const std::string& name) const;
    Graph& graph() const { return *graph_; }
    const ModelConfig& config() const { return config_; }

private:
    ForwardTrace run(std::span<const int> tokens, const Tensor& x) const;

    Graph* graph_;
    ModelConfig config_;
    std::vector<std::pair<std::string, Tensor>> leaves_;
};

// Owning convenience for single forwards.
struct OwnedForward {
    std::unique_ptr<Graph> graph;
    std::unique_ptr<ModelBinding> binding;
    ForwardTrace trace;
};

OwnedForward forward(const Checkpoint& ckpt, std::span<const int> tokens, bool second_order = false);
OwnedForward pair_forward(const Checkpoint& ckpt, std::span<const int> tokens_a, std::span<const int> tokens_b,
                          bool second_order = false);

// Index of the last non-pad token; throws if the sequence is all padding.
int last_non_pad_index(std::span<const int> tokens);

std::vector<int> join_pair(std::span<const int> tokens_a, std::span<const int> tokens_b);

}  // namespace jachess::model
