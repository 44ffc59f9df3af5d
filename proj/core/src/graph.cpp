#include "jachess/graph.hpp"

#include <algorithm>
#include <cstring>

#include "jachess/ops.hpp"
#include "kernel.hpp"

namespace jachess {

std::string shape_str(const Shape& shape) {
    if (shape.empty()) return "(scalar)";
    std::string out = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + ")";
}

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::kLeaf: return "leaf";
        case OpKind::kAdd: return "add";
        case OpKind::kSub: return "subtract";
        case OpKind::kMul: return "elementwise-multiply";
        case OpKind::kMatMul: return "matrix-multiply";
        case OpKind::kTranspose: return "transpose";
        case OpKind::kReshape: return "reshape";
        case OpKind::kConcat: return "concatenate";
        case OpKind::kSlice: return "slice";
        case OpKind::kGatherRows: return "embedding-lookup";
        case OpKind::kRelu: return "relu";
        case OpKind::kStep: return "step";
        case OpKind::kTanh: return "tanh";
        case OpKind::kSquare: return "square";
        case OpKind::kSqrt: return "square-root";
        case OpKind::kReciprocal: return "reciprocal";
        case OpKind::kNeg: return "negate";
        case OpKind::kScale: return "scalar-scale";
        case OpKind::kAddScalar: return "add-scalar";
        case OpKind::kSoftmax: return "softmax";
        case OpKind::kSum: return "sum";
        case OpKind::kSumCols: return "sum-cols";
        case OpKind::kSumRows: return "sum-rows";
        case OpKind::kCrossEntropyLogits: return "cross-entropy-with-logits";
    }
    return "unknown";
}

const Tensor& GradientMap::at(const Tensor& leaf) const {
    auto it = grads_.find(leaf.node());
    if (it == grads_.end()) throw ShapeError("GradientMap: no gradient was requested for this tensor");
    return it->second;
}

Tensor Graph::attach(OpKind kind, std::vector<NodeId> input_ids, Shape shape,
                     std::shared_ptr<std::vector<double>> values, Attrs attrs, bool requires_grad) {
    Tensor t;
    t.shape_ = shape;
    t.values_ = values;
    t.graph_ = this;
    t.node_ = static_cast<NodeId>(nodes_.size());
    t.requires_grad_ = requires_grad;
    nodes_.push_back(Node{kind, std::move(input_ids), std::move(shape), std::move(values), std::move(attrs),
                          requires_grad});
    return t;
}

Tensor Graph::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel(shape) != static_cast<std::int64_t>(values.size()))
        throw ShapeError("leaf: shape " + shape_str(shape) + " does not match value count " +
                         std::to_string(values.size()));
    auto buf = std::make_shared<std::vector<double>>(std::move(values));
    return attach(OpKind::kLeaf, {}, std::move(shape), std::move(buf), {}, requires_grad);
}

Tensor Graph::leaf(const Tensor& detached, bool requires_grad) {
    return leaf(detached.shape(), detached.values(), requires_grad);
}

Tensor Graph::leaf_shared(Shape shape, std::shared_ptr<std::vector<double>> values, bool requires_grad) {
    if (numel(shape) != static_cast<std::int64_t>(values->size()))
        throw ShapeError("leaf: shape " + shape_str(shape) + " does not match value count " +
                         std::to_string(values->size()));
    return attach(OpKind::kLeaf, {}, std::move(shape), std::move(values), {}, requires_grad);
}

Tensor Graph::tensor_for(NodeId id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    Tensor t;
    t.shape_ = n.shape;
    t.values_ = n.values;
    t.graph_ = const_cast<Graph*>(this);
    t.node_ = id;
    t.requires_grad_ = n.requires_grad;
    return t;
}

Tensor Graph::apply(OpKind kind, std::span<const Tensor> inputs, Attrs attrs) {
    for (const Tensor& in : inputs)
        if (in.attached() && in.graph() != this)
            throw ShapeError(std::string(op_name(kind)) + ": input tensor belongs to a different graph");
    auto out = detail::eval_kernel(kind, attrs, inputs);
    if (!recording_) return Tensor(std::move(out.shape), std::move(out.values));

    std::vector<NodeId> ids;
    ids.reserve(inputs.size());
    bool requires_grad = false;
    for (const Tensor& in : inputs) {
        if (in.attached()) {
            ids.push_back(in.node());
            requires_grad = requires_grad || in.requires_grad();
        } else {
            ids.push_back(leaf(in.shape(), in.values(), false).node());
        }
    }
    auto buf = std::make_shared<std::vector<double>>(std::move(out.values));
    return attach(kind, std::move(ids), std::move(out.shape), std::move(buf), std::move(attrs), requires_grad);
}

namespace {

// Transposed one-hot selection matrix (rows x n) with column i set at
// indices[i]; gather backward is then a single matmul.
Tensor selection_transposed(const std::vector<int>& indices, int rows) {
    const int n = static_cast<int>(indices.size());
    std::vector<double> vals(static_cast<std::size_t>(rows) * n, 0.0);
    for (int i = 0; i < n; ++i)
        vals[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)]) * n + i] = 1.0;
    return Tensor({rows, n}, std::move(vals));
}

Tensor onehot_vec(int n, int index) {
    std::vector<double> vals(static_cast<std::size_t>(n), 0.0);
    vals[static_cast<std::size_t>(index)] = 1.0;
    return Tensor({n}, std::move(vals));
}

// Zero-filled gradient embedding for slice backward.
Tensor embed_slice_grad(const Tensor& g, const Shape& input_shape, const std::array<int, 4>& box) {
    const auto p = detail::pad2(input_shape);
    const auto [r0, nr, c0, nc] = box;
    Tensor mid = g.rank() == 2 ? g : ops::reshape(g, {nr, nc});
    if (c0 > 0 || c0 + nc < p[1]) {
        std::vector<Tensor> parts;
        if (c0 > 0) parts.push_back(Tensor::zeros({nr, c0}));
        parts.push_back(mid);
        if (c0 + nc < p[1]) parts.push_back(Tensor::zeros({nr, p[1] - c0 - nc}));
        mid = ops::concat(parts, 1);
    }
    if (r0 > 0 || r0 + nr < p[0]) {
        std::vector<Tensor> parts;
        if (r0 > 0) parts.push_back(Tensor::zeros({r0, p[1]}));
        parts.push_back(mid);
        if (r0 + nr < p[0]) parts.push_back(Tensor::zeros({p[0] - r0 - nr, p[1]}));
        mid = ops::concat(parts, 0);
    }
    return mid.shape() == input_shape ? mid : ops::reshape(mid, input_shape);
}

}  // namespace

GradientMap Graph::backward(const Tensor& output, std::span<const Tensor> leaves, bool record) {
    if (!output.attached() || output.graph() != this)
        throw ShapeError("backward: output is not attached to this graph");
    if (output.size() != 1)
        throw ShapeError("backward: output must be scalar, got shape " + shape_str(output.shape()));
    if (record && !gradient_recording_enabled_)
        throw ShapeError(
            "backward: record=true needs second-order gradient recording; call "
            "enable_gradient_recording() on the graph before building the trace");
    for (const Tensor& l : leaves) {
        if (!l.attached() || l.graph() != this)
            throw ShapeError("backward: requested leaf is not attached to this graph");
        if (!l.requires_grad()) throw ShapeError("backward: requested leaf does not require gradients");
    }

    // Ancestors of the output only; backward cost stays proportional to the
    // output's subgraph, not to everything recorded so far.
    const NodeId out = output.node();
    std::vector<NodeId> order;
    std::unordered_set<NodeId> seen{out};
    {
        std::vector<NodeId> stack{out};
        order.push_back(out);
        while (!stack.empty()) {
            const NodeId id = stack.back();
            stack.pop_back();
            for (NodeId in : nodes_[static_cast<std::size_t>(id)].inputs)
                if (seen.insert(in).second) {
                    order.push_back(in);
                    stack.push_back(in);
                }
        }
    }
    std::sort(order.begin(), order.end(), std::greater<NodeId>());

    RecordingScope scope(*this, record);

    std::unordered_map<NodeId, Tensor> adjoint;
    adjoint.reserve(order.size());
    adjoint.emplace(out, Tensor::ones(output.shape()));

    auto add_contrib = [&](NodeId id, const Tensor& contrib) {
        if (!nodes_[static_cast<std::size_t>(id)].requires_grad) return;
        auto [it, inserted] = adjoint.try_emplace(id, contrib);
        if (!inserted) it->second = ops::add(it->second, contrib);
    };

    for (const NodeId id : order) {
        const auto adj_it = adjoint.find(id);
        if (adj_it == adjoint.end()) continue;
        const Tensor g = adj_it->second;
        // Copy: recorded adjoint ops may reallocate nodes_.
        const Node n = nodes_[static_cast<std::size_t>(id)];
        if (n.kind == OpKind::kLeaf) continue;
        auto in = [&](std::size_t i) { return tensor_for(n.inputs[i]); };

        switch (n.kind) {
            case OpKind::kLeaf:
                break;
            case OpKind::kAdd:
                add_contrib(n.inputs[0], ops::reduce_to_shape(g, in(0).shape()));
                add_contrib(n.inputs[1], ops::reduce_to_shape(g, in(1).shape()));
                break;
            case OpKind::kSub:
                add_contrib(n.inputs[0], ops::reduce_to_shape(g, in(0).shape()));
                add_contrib(n.inputs[1], ops::reduce_to_shape(ops::neg(g), in(1).shape()));
                break;
            case OpKind::kMul: {
                const Tensor a = in(0), b = in(1);
                if (nodes_[static_cast<std::size_t>(n.inputs[0])].requires_grad)
                    add_contrib(n.inputs[0], ops::reduce_to_shape(ops::mul(g, b), a.shape()));
                if (nodes_[static_cast<std::size_t>(n.inputs[1])].requires_grad)
                    add_contrib(n.inputs[1], ops::reduce_to_shape(ops::mul(g, a), b.shape()));
                break;
            }
            case OpKind::kMatMul: {
                const Tensor a = in(0), b = in(1);
                if (nodes_[static_cast<std::size_t>(n.inputs[0])].requires_grad)
                    add_contrib(n.inputs[0], ops::matmul(g, ops::transpose(b)));
                if (nodes_[static_cast<std::size_t>(n.inputs[1])].requires_grad)
                    add_contrib(n.inputs[1], ops::matmul(ops::transpose(a), g));
                break;
            }
            case OpKind::kTranspose:
                add_contrib(n.inputs[0], ops::transpose(g));
                break;
            case OpKind::kReshape:
                add_contrib(n.inputs[0], ops::reshape(g, in(0).shape()));
                break;
            case OpKind::kConcat: {
                int offset = 0;
                for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                    const Tensor part = in(i);
                    const auto ps = detail::pad2(part.shape());
                    Tensor piece;
                    if (part.rank() == 1) {
                        piece = ops::slice_vec(g, offset, ps[1]);
                        offset += ps[1];
                    } else if (n.attrs.axis == 0) {
                        piece = ops::slice(g, offset, ps[0], 0, detail::pad2(n.shape)[1]);
                        offset += ps[0];
                    } else {
                        piece = ops::slice(g, 0, detail::pad2(n.shape)[0], offset, ps[1]);
                        offset += ps[1];
                    }
                    add_contrib(n.inputs[i], piece);
                }
                break;
            }
            case OpKind::kSlice:
                add_contrib(n.inputs[0], embed_slice_grad(g, in(0).shape(), n.attrs.box));
                break;
            case OpKind::kGatherRows: {
                const Tensor sel = selection_transposed(n.attrs.indices, in(0).shape()[0]);
                add_contrib(n.inputs[0], ops::matmul(sel, g));
                break;
            }
            case OpKind::kRelu:
                add_contrib(n.inputs[0], ops::mul(g, ops::step(in(0))));
                break;
            case OpKind::kStep:
                break;  // derivative defined as zero
            case OpKind::kTanh: {
                const Tensor y = tensor_for(id);
                add_contrib(n.inputs[0], ops::mul(g, ops::add_scalar(ops::neg(ops::square(y)), 1.0)));
                break;
            }
            case OpKind::kSquare:
                add_contrib(n.inputs[0], ops::mul(g, ops::scale(in(0), 2.0)));
                break;
            case OpKind::kSqrt: {
                const Tensor y = tensor_for(id);
                add_contrib(n.inputs[0], ops::mul(g, ops::scale(ops::reciprocal(y), 0.5)));
                break;
            }
            case OpKind::kReciprocal: {
                const Tensor y = tensor_for(id);
                add_contrib(n.inputs[0], ops::neg(ops::mul(g, ops::square(y))));
                break;
            }
            case OpKind::kNeg:
                add_contrib(n.inputs[0], ops::neg(g));
                break;
            case OpKind::kScale:
                add_contrib(n.inputs[0], ops::scale(g, n.attrs.scalar));
                break;
            case OpKind::kAddScalar:
                add_contrib(n.inputs[0], g);
                break;
            case OpKind::kSoftmax: {
                const Tensor y = tensor_for(id);
                const Tensor gy = ops::mul(g, y);
                const Tensor row_total = y.rank() == 2 ? ops::sum_cols(gy) : ops::sum(gy);
                add_contrib(n.inputs[0], ops::mul(y, ops::sub(g, row_total)));
                break;
            }
            case OpKind::kSum:
            case OpKind::kSumCols:
            case OpKind::kSumRows:
                add_contrib(n.inputs[0], ops::mul(Tensor::ones(in(0).shape()), g));
                break;
            case OpKind::kCrossEntropyLogits: {
                const Tensor x = in(0);
                const Tensor delta = ops::sub(ops::softmax(x), onehot_vec(x.shape()[0], n.attrs.label));
                add_contrib(n.inputs[0], ops::mul(g, delta));
                break;
            }
        }
    }

    GradientMap gm;
    for (const Tensor& l : leaves) {
        const NodeId id = l.node();
        const auto it = adjoint.find(id);
        if (id <= out && it != adjoint.end()) {
            gm.grads_.emplace(id, it->second);
        } else {
            gm.grads_.emplace(id, Tensor::zeros(l.shape()));
            gm.unreachable_.insert(id);
        }
    }
    return gm;
}

NodeId Graph::replay_check() const {
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        const Node& n = nodes_[id];
        if (n.kind == OpKind::kLeaf) continue;
        std::vector<Tensor> inputs;
        inputs.reserve(n.inputs.size());
        for (NodeId in : n.inputs) inputs.push_back(tensor_for(in));
        const auto out = detail::eval_kernel(n.kind, n.attrs, inputs);
        if (out.values.size() != n.values->size() ||
            std::memcmp(out.values.data(), n.values->data(), out.values.size() * sizeof(double)) != 0)
            return static_cast<NodeId>(id);
    }
    return kNoNode;
}

}  // namespace jachess
