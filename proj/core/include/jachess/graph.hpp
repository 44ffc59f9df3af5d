#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "jachess/tensor.hpp"

namespace jachess {

// Primitive node kinds. Backward rules for every kind are themselves
// expressed in these primitives, so recorded gradients stay differentiable
// to any order the call site needs.
enum class OpKind : std::uint8_t {
    kLeaf,
    kAdd,
    kSub,
    kMul,      // elementwise, limited 2-D broadcasting
    kMatMul,   // rank-2 only
    kTranspose,
    kReshape,
    kConcat,   // attrs.axis
    kSlice,    // attrs.box = {row0, rows, col0, cols} on the padded 2-D view
    kGatherRows,  // attrs.indices: row selection from a matrix leaf
    kRelu,
    kStep,     // 1[x > 0]; derivative defined as zero
    kTanh,
    kSquare,
    kSqrt,
    kReciprocal,
    kNeg,
    kScale,      // attrs.scalar * x
    kAddScalar,  // x + attrs.scalar
    kSoftmax,    // rowwise on rank-2, whole vector on rank-1
    kSum,        // full reduction -> scalar
    kSumCols,    // (r,c) -> (r,1)
    kSumRows,    // (r,c) -> (1,c)
    kCrossEntropyLogits,  // rank-1 logits vs attrs.label -> scalar
};

const char* op_name(OpKind kind);

struct Attrs {
    double scalar = 0.0;
    int axis = 0;
    int label = -1;
    std::array<int, 4> box{0, 0, 0, 0};
    std::vector<int> indices;
    Shape target_shape;
};

struct Node {
    OpKind kind = OpKind::kLeaf;
    std::vector<NodeId> inputs;
    Shape shape;
    std::shared_ptr<std::vector<double>> values;
    Attrs attrs;
    bool requires_grad = false;
};

// Gradients of one backward pass, keyed by node id. Leaves that the output
// does not depend on get zero gradients and are flagged unreachable.
class GradientMap {
public:
    bool has(const Tensor& leaf) const { return grads_.count(leaf.node()) != 0; }
    const Tensor& at(const Tensor& leaf) const;
    bool unreachable(const Tensor& leaf) const { return unreachable_.count(leaf.node()) != 0; }
    bool any_unreachable() const { return !unreachable_.empty(); }

private:
    friend class Graph;
    std::unordered_map<NodeId, Tensor> grads_;
    std::unordered_set<NodeId> unreachable_;
};

// Append-only computation tape. Nodes are appended in topological order and
// cache their forward values; replay_check() recomputes every node and
// verifies bit-exact agreement with the cache.
//
// Backward with record=true re-expresses every adjoint as graph nodes
// (reverse-over-reverse); record=false evaluates the same rules without
// touching the tape, for the outermost gradient of a training step.
// Recorded backward passes must be opted into via enable_gradient_recording()
// so plain training never pays for second-order bookkeeping.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = true);
    Tensor leaf(const Tensor& detached, bool requires_grad = true);
    // Shares the caller's buffer instead of copying (used for model parameters).
    Tensor leaf_shared(Shape shape, std::shared_ptr<std::vector<double>> values, bool requires_grad = true);
    Tensor constant(Shape shape, std::vector<double> values) { return leaf(std::move(shape), std::move(values), false); }
    Tensor constant_scalar(double v) { return leaf({}, {v}, false); }

    // Applies a primitive. With recording on, appends a node; off, evaluates
    // detached. Inputs may be attached to this graph or detached.
    Tensor apply(OpKind kind, std::span<const Tensor> inputs, Attrs attrs = {});
    Tensor apply(OpKind kind, std::initializer_list<Tensor> inputs, Attrs attrs = {}) {
        return apply(kind, std::span<const Tensor>(inputs.begin(), inputs.size()), std::move(attrs));
    }

    // d(output)/d(leaf) for each requested leaf; output must be scalar.
    // Leaves may be interior nodes (gradient w.r.t. an intermediate value).
    GradientMap backward(const Tensor& output, std::span<const Tensor> leaves, bool record = false);
    GradientMap backward(const Tensor& output, std::initializer_list<Tensor> leaves, bool record = false) {
        return backward(output, std::span<const Tensor>(leaves.begin(), leaves.size()), record);
    }

    void enable_gradient_recording() { gradient_recording_enabled_ = true; }
    bool gradient_recording_enabled() const { return gradient_recording_enabled_; }

    bool recording() const { return recording_; }
    std::size_t node_count() const { return nodes_.size(); }
    const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }
    Tensor tensor_for(NodeId id) const;

    // Recomputes every non-leaf node from its inputs and verifies the cached
    // values match bit-exactly. Returns the id of the first mismatch, or -1.
    NodeId replay_check() const;

private:
    friend class RecordingScope;

    Tensor attach(OpKind kind, std::vector<NodeId> input_ids, Shape shape,
                  std::shared_ptr<std::vector<double>> values, Attrs attrs, bool requires_grad);

    std::vector<Node> nodes_;
    bool recording_ = true;
    bool gradient_recording_enabled_ = false;
};

// Temporarily toggles whether apply() records nodes.
class RecordingScope {
public:
    RecordingScope(Graph& graph, bool recording) : graph_(graph), saved_(graph.recording_) {
        graph_.recording_ = recording;
    }
    ~RecordingScope() { graph_.recording_ = saved_; }
    RecordingScope(const RecordingScope&) = delete;
    RecordingScope& operator=(const RecordingScope&) = delete;

private:
    Graph& graph_;
    bool saved_;
};

}  // namespace jachess
